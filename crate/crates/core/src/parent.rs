//! Bi-level parent layer. The grid is covered by overlapping fuzzy
//! clusters; the parent scores them, tracks which are explored, repairs
//! clusters cut by discovered walls, routes robots over clusters with a
//! GA, and hands each child planner a weight multiplier.

use serde::{Deserialize, Serialize};

use crate::belief::{FuzzyLayer, FuzzyMapSet};
use crate::error::{Error, Result};
use crate::fuzzy::{cell_aggregated_score, clamp_unit};
use crate::grid::{Cell, Grid, MOVES4};
use crate::log::ClusterDump;
use crate::optim::{ga_route_assign, GaOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParentParams {
    pub cluster_side: usize,
    pub overlap_depth: usize,
    pub s_exp: f64,
    pub s_unexp: f64,
    pub gamma_parent: f64,
    pub sigma: f64,
    /// Approach radius in cells; `None` means twice the cluster side.
    pub eta: Option<f64>,
    pub w_cluster: f64,
    pub w_goal_parent: f64,
    /// Cells with passability below this are walls for splitting.
    pub wall_threshold: f64,
}

impl Default for ParentParams {
    fn default() -> Self {
        ParentParams {
            cluster_side: 40,
            overlap_depth: 3,
            s_exp: 0.22,
            s_unexp: 0.4,
            gamma_parent: 0.98,
            sigma: 60.0,
            eta: None,
            w_cluster: 5.0,
            w_goal_parent: 1.0,
            wall_threshold: 0.1,
        }
    }
}

impl ParentParams {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_side == 0 {
            return Err(Error::Config("cluster_side must be positive".into()));
        }
        if !(self.s_exp < self.s_unexp) {
            return Err(Error::Config(format!(
                "s_exp ({}) must be below s_unexp ({})",
                self.s_exp, self.s_unexp
            )));
        }
        if !(self.gamma_parent > 0.0 && self.gamma_parent <= 1.0) {
            return Err(Error::Config("gamma_parent must lie in (0, 1]".into()));
        }
        if !(self.sigma > 0.0) || !(self.w_cluster > 0.0) || !(self.w_goal_parent > 0.0) {
            return Err(Error::Config(
                "sigma, w_cluster and w_goal_parent must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(2.0 * self.cluster_side as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterState {
    Unexplored,
    ToBeExplored,
    BeingExplored,
    Explored,
}

impl ClusterState {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterState::Unexplored => "unexplored",
            ClusterState::ToBeExplored => "to_be_explored",
            ClusterState::BeingExplored => "being_explored",
            ClusterState::Explored => "explored",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyCluster {
    pub id: usize,
    pub membership: Grid<f64>,
    pub center: (f64, f64),
    pub score: f64,
    pub state: ClusterState,
}

impl FuzzyCluster {
    pub fn mu(&self, cell: Cell) -> f64 {
        self.membership.get(cell).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> impl Iterator<Item = Cell> + '_ {
        self.membership.cells().filter(move |&c| self.membership[c] > 0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.membership.iter().all(|&m| m <= 0.0)
    }

    /// Membership-weighted centroid of the support.
    pub fn recompute_center(&mut self) {
        let (mut sx, mut sy, mut sm) = (0.0, 0.0, 0.0);
        for c in self.membership.cells() {
            let m = self.membership[c];
            if m > 0.0 {
                sx += m * f64::from(c.x);
                sy += m * f64::from(c.y);
                sm += m;
            }
        }
        if sm > 0.0 {
            self.center = (sx / sm, sy / sm);
        }
    }

    pub fn bbox(&self) -> (i32, i32, i32, i32) {
        let mut b = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
        for c in self.support() {
            b = (b.0.min(c.x), b.1.min(c.y), b.2.max(c.x), b.3.max(c.y));
        }
        b
    }

    pub fn dump(&self) -> ClusterDump {
        ClusterDump {
            id: self.id,
            center: self.center,
            score: self.score,
            state: self.state.as_str().to_string(),
            bbox: self.bbox(),
        }
    }
}

/// Fringe membership at Chebyshev distance `delta` outside the square.
pub fn fringe_membership(delta: usize, overlap_depth: usize) -> f64 {
    if delta == 0 {
        1.0
    } else if delta > overlap_depth {
        0.0
    } else {
        (1.0 - delta as f64 / 4.0).powi(2)
    }
}

/// Scores start just below the midpoint, before any map is seen.
pub const INITIAL_SCORE: f64 = 0.49;

pub fn init_clusters(width: usize, height: usize, params: &ParentParams) -> Result<Vec<FuzzyCluster>> {
    params.validate()?;
    let side = params.cluster_side;
    if !width.is_multiple_of(side) || !height.is_multiple_of(side) {
        return Err(Error::Config(format!(
            "{width}x{height} grid is not divisible into {side}x{side} clusters"
        )));
    }
    let mut out = Vec::new();
    for qy in 0..height / side {
        for qx in 0..width / side {
            let (x0, y0) = ((qx * side) as i32, (qy * side) as i32);
            let (x1, y1) = (x0 + side as i32 - 1, y0 + side as i32 - 1);
            let membership = Grid::from_fn(width, height, |c| {
                let dx = (x0 - c.x).max(c.x - x1).max(0);
                let dy = (y0 - c.y).max(c.y - y1).max(0);
                fringe_membership(dx.max(dy) as usize, params.overlap_depth)
            });
            let mut cluster = FuzzyCluster {
                id: out.len(),
                membership,
                center: (0.0, 0.0),
                score: INITIAL_SCORE,
                state: ClusterState::Unexplored,
            };
            cluster.recompute_center();
            out.push(cluster);
        }
    }
    Ok(out)
}

/// Membership-weighted generalized mean of the per-cell aggregated grades.
pub fn cluster_score(cluster: &FuzzyCluster, maps: &FuzzyMapSet, params: &ParentParams) -> f64 {
    let w = params.w_cluster;
    let (mut num, mut den) = (0.0, 0.0);
    for c in cluster.membership.cells() {
        let mu = cluster.membership[c];
        if mu <= 0.0 {
            continue;
        }
        let agg = cell_aggregated_score(&maps.goal_degrees(c), &maps.constraint_degrees(c));
        num += (mu * agg).powf(w);
        den += mu;
    }
    if den <= 0.0 {
        return 0.0;
    }
    clamp_unit((num / den).powf(1.0 / w))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRoute {
    pub robot: usize,
    pub clusters: Vec<usize>,
    /// Estimated arrival step per cluster (cumulative center distance).
    pub planned_steps: Vec<f64>,
}

/// The cluster a robot is heading for or working in: the first one on its
/// route that still exists and is not explored.
pub fn current_target(route: &ClusterRoute, clusters: &[FuzzyCluster]) -> Option<usize> {
    route
        .clusters
        .iter()
        .copied()
        .find(|&id| clusters.iter().any(|c| c.id == id && c.state != ClusterState::Explored))
}

/// Threshold transitions with hysteresis, then route-driven labels. A
/// cluster that leaves `explored` this call stays `unexplored` until the
/// next call.
pub fn update_cluster_states(
    clusters: &mut [FuzzyCluster],
    routes: &[ClusterRoute],
    robot_positions: &[Cell],
    params: &ParentParams,
) {
    let targets: Vec<Option<usize>> = routes.iter().map(|r| current_target(r, clusters)).collect();
    let mut reopened = Vec::new();
    for c in clusters.iter_mut() {
        if c.score < params.s_exp {
            c.state = ClusterState::Explored;
        } else if c.state == ClusterState::Explored && c.score > params.s_unexp {
            c.state = ClusterState::Unexplored;
            reopened.push(c.id);
        }
    }
    for c in clusters.iter_mut() {
        if c.state == ClusterState::Explored || reopened.contains(&c.id) {
            continue;
        }
        let in_route = routes.iter().any(|r| r.clusters.contains(&c.id));
        // entering needs the interior; staying only needs the support
        let need = if c.state == ClusterState::BeingExplored {
            f64::MIN_POSITIVE
        } else {
            1.0
        };
        let inside = routes
            .iter()
            .zip(&targets)
            .any(|(r, t)| *t == Some(c.id) && robot_positions.get(r.robot).is_some_and(|&p| c.mu(p) >= need));
        c.state = if inside {
            ClusterState::BeingExplored
        } else if in_route {
            ClusterState::ToBeExplored
        } else {
            ClusterState::Unexplored
        };
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

/// 4-connected components of the `true` cells, each in row-major order;
/// components ordered by their first cell.
pub fn components(mask: &Grid<bool>) -> Vec<Vec<Cell>> {
    let (w, h) = mask.dims();
    let mut sets = DisjointSets::new(w * h);
    for i in 0..w * h {
        if !mask.as_slice()[i] {
            continue;
        }
        let (x, y) = (i % w, i / w);
        if x + 1 < w && mask.as_slice()[i + 1] {
            sets.union(i, i + 1);
        }
        if y + 1 < h && mask.as_slice()[i + w] {
            sets.union(i, i + w);
        }
    }
    let mut slot = vec![usize::MAX; w * h];
    let mut out: Vec<Vec<Cell>> = Vec::new();
    for i in 0..w * h {
        if !mask.as_slice()[i] {
            continue;
        }
        let root = sets.find(i);
        if slot[root] == usize::MAX {
            slot[root] = out.len();
            out.push(Vec::new());
        }
        out[slot[root]].push(mask.cell_at(i));
    }
    out
}

/// Cells reachable from any robot through passable cells (4-connected).
pub fn reachable(passable: &Grid<bool>, robots: &[Cell]) -> Grid<bool> {
    let mut seen = Grid::new(passable.width(), passable.height(), false);
    let mut stack: Vec<Cell> = robots.iter().copied().filter(|&c| passable.contains(c)).collect();
    for &c in &stack {
        seen[c] = true;
    }
    while let Some(c) = stack.pop() {
        for (dx, dy) in MOVES4 {
            let n = c.offset(dx, dy);
            if passable.get(n) == Some(&true) && !seen[n] {
                seen[n] = true;
                stack.push(n);
            }
        }
    }
    seen
}

/// What happened to one cut-off component.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitFate {
    Merged { into: usize, cells: Vec<Cell> },
    Deleted { cells: Vec<Cell> },
    Spawned { id: usize, cells: Vec<Cell> },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitReport {
    pub kept: Vec<Cell>,
    pub fates: Vec<SplitFate>,
}

impl SplitReport {
    pub fn is_split(&self) -> bool {
        !self.fates.is_empty()
    }
}

/// Repairs cluster `id` if walls cut its passable support into several
/// 4-connected pieces. The largest piece keeps the id. A piece no robot can
/// reach is removed from every cluster. Otherwise it joins the overlapping
/// cluster with the highest mean membership over its cells, or becomes a
/// new cluster when nothing overlaps it.
pub fn split_merge_clusters(
    id: usize,
    passability: &Grid<f64>,
    clusters: &mut Vec<FuzzyCluster>,
    robots: &[Cell],
    threshold: f64,
) -> SplitReport {
    let Some(idx) = clusters.iter().position(|c| c.id == id) else {
        return SplitReport::default();
    };
    let passable = passability.map(|&p| p >= threshold);
    let mask = Grid::from_fn(passable.width(), passable.height(), |c| {
        passable[c] && clusters[idx].membership[c] > 0.0
    });
    let mut parts = components(&mask);
    if parts.len() <= 1 {
        return SplitReport {
            kept: parts.pop().unwrap_or_default(),
            fates: Vec::new(),
        };
    }
    // largest first; ties keep the earlier piece
    let largest = (0..parts.len())
        .max_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(b.cmp(&a)))
        .unwrap_or(0);
    let kept = parts.swap_remove(largest);
    let reach = reachable(&passable, robots);
    let mut next_id = clusters.iter().map(|c| c.id).max().unwrap_or(0) + 1;
    let mut fates = Vec::new();
    for cells in parts {
        let original: Vec<f64> = cells.iter().map(|&c| clusters[idx].membership[c]).collect();
        for &c in &cells {
            clusters[idx].membership[c] = 0.0;
        }
        if !cells.iter().any(|&c| reach[c]) {
            for cl in clusters.iter_mut() {
                for &c in &cells {
                    cl.membership[c] = 0.0;
                }
            }
            fates.push(SplitFate::Deleted { cells });
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, cl) in clusters.iter().enumerate() {
            if j == idx || !cells.iter().any(|&c| cl.membership[c] > 0.0) {
                continue;
            }
            let mean = cells.iter().map(|&c| cl.membership[c]).sum::<f64>() / cells.len() as f64;
            if best.is_none_or(|(_, m)| mean > m) {
                best = Some((j, mean));
            }
        }
        match best {
            Some((j, _)) => {
                // cells outside the receiver's support keep their old degree
                for (&c, &m) in cells.iter().zip(&original) {
                    if clusters[j].membership[c] <= 0.0 {
                        clusters[j].membership[c] = m;
                    }
                }
                clusters[j].recompute_center();
                fates.push(SplitFate::Merged {
                    into: clusters[j].id,
                    cells,
                });
            }
            None => {
                let mut membership = Grid::new(passable.width(), passable.height(), 0.0);
                for (&c, &m) in cells.iter().zip(&original) {
                    membership[c] = m;
                }
                let mut spawned = FuzzyCluster {
                    id: next_id,
                    membership,
                    center: (0.0, 0.0),
                    score: clusters[idx].score,
                    state: ClusterState::Unexplored,
                };
                spawned.recompute_center();
                clusters.push(spawned);
                fates.push(SplitFate::Spawned { id: next_id, cells });
                next_id += 1;
            }
        }
    }
    clusters[idx].recompute_center();
    clusters.retain(|c| !c.is_empty());
    SplitReport { kept, fates }
}

/// Parent tuning weight for a cluster reached after `distance` cells.
pub fn parent_weight(distance: f64, gamma_parent: f64) -> f64 {
    let denom = 1.0 - distance * gamma_parent.ln();
    if denom.is_finite() && denom > 0.0 {
        1.0 / denom
    } else {
        0.0
    }
}

/// Sum of weighted terms `s^(w + 1/ŵ)` along one route, with the
/// cumulative center-to-center distance from the robot.
fn route_terms(robot: Cell, stops: &[&FuzzyCluster], params: &ParentParams) -> (f64, Vec<f64>) {
    let mut at = (f64::from(robot.x), f64::from(robot.y));
    let mut travelled = 0.0;
    let mut sum = 0.0;
    let mut steps = Vec::with_capacity(stops.len());
    for c in stops {
        travelled += ((c.center.0 - at.0).powi(2) + (c.center.1 - at.1).powi(2)).sqrt();
        at = c.center;
        steps.push(travelled);
        let w = parent_weight(travelled, params.gamma_parent);
        if w > 0.0 && c.score > 0.0 {
            sum += c.score.powf(params.w_goal_parent + 1.0 / w);
        }
    }
    (sum, steps)
}

/// Generalized-mean quality of a full route set over `n` clusters.
pub fn route_set_quality(routes: &[Vec<&FuzzyCluster>], robots: &[Cell], params: &ParentParams) -> f64 {
    let n: usize = routes.iter().map(Vec::len).sum();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = routes
        .iter()
        .zip(robots)
        .map(|(r, &p)| route_terms(p, r, params).0)
        .sum();
    clamp_unit((total / n as f64).powf(1.0 / params.w_goal_parent))
}

/// Routes robots over all clusters that are not explored. With at least as
/// many open clusters as robots the GA partitions them; otherwise each open
/// cluster goes to the nearest free robot and the rest get empty routes.
pub fn high_level_plan(
    clusters: &[FuzzyCluster],
    robot_positions: &[Cell],
    params: &ParentParams,
    ga: &GaOptions,
) -> Result<Vec<ClusterRoute>> {
    let open: Vec<&FuzzyCluster> = clusters.iter().filter(|c| c.state != ClusterState::Explored).collect();
    let n_rob = robot_positions.len();
    let build = |assignment: Vec<Vec<usize>>| -> Vec<ClusterRoute> {
        assignment
            .into_iter()
            .enumerate()
            .map(|(robot, idxs)| {
                let stops: Vec<&FuzzyCluster> = idxs.iter().map(|&i| open[i]).collect();
                let (_, planned_steps) = route_terms(robot_positions[robot], &stops, params);
                ClusterRoute {
                    robot,
                    clusters: stops.iter().map(|c| c.id).collect(),
                    planned_steps,
                }
            })
            .collect()
    };
    if open.is_empty() || n_rob == 0 {
        return Ok(build(vec![Vec::new(); n_rob]));
    }
    if open.len() < n_rob {
        let mut order: Vec<usize> = (0..open.len()).collect();
        order.sort_by(|&a, &b| open[b].score.total_cmp(&open[a].score).then(a.cmp(&b)));
        let mut assignment = vec![Vec::new(); n_rob];
        for i in order {
            let c = open[i].center;
            let robot = (0..n_rob)
                .filter(|&r| assignment[r].is_empty())
                .min_by(|&a, &b| {
                    robot_positions[a]
                        .distance_to_point(c)
                        .total_cmp(&robot_positions[b].distance_to_point(c))
                })
                .expect("fewer clusters than robots leaves a free robot");
            assignment[robot].push(i);
        }
        return Ok(build(assignment));
    }
    let result = ga_route_assign(
        open.len(),
        n_rob,
        |routes| {
            let stops: Vec<Vec<&FuzzyCluster>> = routes.iter().map(|r| r.iter().map(|&i| open[i]).collect()).collect();
            route_set_quality(&stops, robot_positions, params)
        },
        ga,
    )?;
    Ok(build(result.routes))
}

/// Weight multiplier for the child planner of a robot assigned to
/// `cluster`: the membership while working inside it, a distance Gaussian
/// on approach, 0 on cells that lead away from the center.
pub fn child_weight_transform(cell: Cell, cluster: &FuzzyCluster, robot: Cell, params: &ParentParams) -> Result<f64> {
    match cluster.state {
        ClusterState::BeingExplored => Ok(cluster.mu(cell)),
        ClusterState::ToBeExplored => {
            let d = robot.distance_to_point(cluster.center);
            if d >= params.eta() || cell.distance_to_point(cluster.center) > d {
                Ok(0.0)
            } else {
                Ok((-d * d / (2.0 * params.sigma * params.sigma)).exp())
            }
        }
        other => Err(Error::Contract(format!(
            "cluster {} is {}, not assigned",
            cluster.id,
            other.as_str()
        ))),
    }
}

/// Parent state carried across child rounds.
#[derive(Clone, Debug)]
pub struct ParentLayer {
    pub params: ParentParams,
    pub ga: GaOptions,
    pub clusters: Vec<FuzzyCluster>,
    pub routes: Vec<ClusterRoute>,
    pub replans: usize,
}

impl ParentLayer {
    pub fn new(width: usize, height: usize, params: ParentParams, ga: GaOptions) -> Result<Self> {
        ga.validate()?;
        Ok(ParentLayer {
            clusters: init_clusters(width, height, &params)?,
            params,
            ga,
            routes: Vec::new(),
            replans: 0,
        })
    }

    pub fn cluster(&self, id: usize) -> Option<&FuzzyCluster> {
        self.clusters.iter().find(|c| c.id == id)
    }

    /// One parent pass before the child round at step `k`: rescore, repair
    /// split clusters, update states, re-route when needed, and return each
    /// robot's weight multiplier (`None` = plain child planning).
    pub fn round(&mut self, k: u32, maps: &FuzzyMapSet, positions: &[Cell]) -> Result<Vec<Option<Grid<f64>>>> {
        let before: Vec<Option<usize>> = self.routes.iter().map(|r| current_target(r, &self.clusters)).collect();
        for c in self.clusters.iter_mut() {
            c.score = cluster_score(c, maps, &self.params);
        }
        let pass = maps.layer(FuzzyLayer::Passability);
        let ids: Vec<usize> = self.clusters.iter().map(|c| c.id).collect();
        let mut reshaped = false;
        for id in ids {
            let report = split_merge_clusters(id, pass, &mut self.clusters, positions, self.params.wall_threshold);
            reshaped |= report.is_split();
        }
        if reshaped {
            for c in self.clusters.iter_mut() {
                c.score = cluster_score(c, maps, &self.params);
            }
        }
        update_cluster_states(&mut self.clusters, &self.routes, positions, &self.params);
        let any_open = self.clusters.iter().any(|c| c.state != ClusterState::Explored);
        let finished = self.routes.is_empty()
            || before.iter().enumerate().any(|(r, t)| match t {
                Some(id) => self.cluster(*id).is_none_or(|c| c.state == ClusterState::Explored),
                None => any_open && current_target(&self.routes[r], &self.clusters).is_none(),
            });
        if finished && any_open {
            let ga = self.ga.with_seed(crate::sim::mix_seed(&[self.ga.seed, u64::from(k)]));
            self.routes = high_level_plan(&self.clusters, positions, &self.params, &ga)?;
            self.replans += 1;
            update_cluster_states(&mut self.clusters, &self.routes, positions, &self.params);
        }
        let (w, h) = (maps.width(), maps.height());
        let mut out = vec![None; positions.len()];
        for route in &self.routes {
            let Some(target) = current_target(route, &self.clusters) else {
                continue;
            };
            let Some(cluster) = self.cluster(target) else {
                continue;
            };
            let robot = positions[route.robot];
            if !matches!(cluster.state, ClusterState::ToBeExplored | ClusterState::BeingExplored) {
                continue;
            }
            if cluster.state == ClusterState::ToBeExplored
                && robot.distance_to_point(cluster.center) >= self.params.eta()
            {
                continue;
            }
            let mut grid = Grid::new(w, h, 0.0);
            for c in grid.cells().collect::<Vec<_>>() {
                grid[c] = child_weight_transform(c, cluster, robot, &self.params)?;
            }
            out[route.robot] = Some(grid);
        }
        Ok(out)
    }

    pub fn dump(&self) -> Vec<ClusterDump> {
        self.clusters.iter().map(FuzzyCluster::dump).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::ProbabilityMap;
    use crate::membership::MembershipFunctionBank;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn small() -> ParentParams {
        ParentParams {
            cluster_side: 10,
            ..ParentParams::default()
        }
    }

    fn blank_maps(w: usize, h: usize) -> FuzzyMapSet {
        let prob = ProbabilityMap::new(w, h, &[0.34, 0.33, 0.33]).unwrap();
        FuzzyMapSet::initial(&prob, &MembershipFunctionBank::default()).unwrap()
    }

    #[test]
    fn cluster_count_and_fringe() {
        let p = ParentParams::default();
        assert_eq!(init_clusters(200, 200, &p).unwrap().len(), 25);
        assert!(matches!(init_clusters(210, 200, &p), Err(Error::Config(_))));
        assert_eq!(fringe_membership(1, 3), 0.5625);
        assert_eq!(fringe_membership(2, 3), 0.25);
        assert_eq!(fringe_membership(3, 3), 0.0625);
        assert_eq!(fringe_membership(4, 3), 0.0);
        let cl = init_clusters(30, 30, &small()).unwrap();
        let mid = &cl[4];
        assert_eq!(mid.mu(Cell::new(10, 10)), 1.0);
        assert_eq!(mid.mu(Cell::new(9, 15)), 0.5625);
        assert_eq!(mid.mu(Cell::new(7, 7)), 0.0625);
        assert_eq!(mid.mu(Cell::new(6, 15)), 0.0);
        assert_eq!(mid.center, (14.5, 14.5));
        assert_eq!(mid.bbox(), (7, 7, 22, 22));
    }

    #[test]
    fn every_cell_covered() {
        let cl = init_clusters(30, 20, &small()).unwrap();
        let g = Grid::new(30, 20, 0u8);
        assert!(g.cells().all(|c| cl.iter().any(|k| k.mu(c) > 0.0)));
    }

    #[test]
    fn initial_score_is_just_below_half() {
        let p = small();
        let maps = blank_maps(30, 30);
        for c in init_clusters(30, 30, &p).unwrap() {
            let s = cluster_score(&c, &maps, &p);
            assert!(s < 0.5 && s > 0.4, "{s}");
        }
    }

    #[test]
    fn score_of_constant_field() {
        let p = small();
        let mut maps = blank_maps(10, 10);
        maps.layer_mut(FuzzyLayer::ExplorationReward).fill(0.3);
        let c = &init_clusters(10, 10, &p).unwrap()[0];
        assert!((cluster_score(c, &maps, &p) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn one_hot_cell_pulls_above_mean() {
        let p = small();
        let mut maps = blank_maps(10, 10);
        maps.layer_mut(FuzzyLayer::ExplorationReward).fill(0.0);
        maps.layer_mut(FuzzyLayer::HumanDetectionReward)[Cell::new(3, 3)] = 1.0;
        let c = &init_clusters(10, 10, &p).unwrap()[0];
        let s = cluster_score(c, &maps, &p);
        assert!((s - 0.01f64.powf(0.2)).abs() < 1e-12);
        assert!(s > 10.0 * 0.01);
    }

    #[test]
    fn state_thresholds_and_hysteresis() {
        let p = ParentParams::default();
        let mut cl = init_clusters(40, 40, &p).unwrap();
        cl[0].score = 0.21;
        update_cluster_states(&mut cl, &[], &[], &p);
        assert_eq!(cl[0].state, ClusterState::Explored);
        for s in [0.3, 0.4] {
            cl[0].score = s;
            update_cluster_states(&mut cl, &[], &[], &p);
            assert_eq!(cl[0].state, ClusterState::Explored);
        }
        cl[0].score = 0.41;
        let route = ClusterRoute {
            robot: 0,
            clusters: vec![0],
            planned_steps: vec![0.0],
        };
        update_cluster_states(&mut cl, std::slice::from_ref(&route), &[Cell::new(5, 5)], &p);
        assert_eq!(cl[0].state, ClusterState::Unexplored);
        update_cluster_states(&mut cl, std::slice::from_ref(&route), &[Cell::new(5, 5)], &p);
        assert_eq!(cl[0].state, ClusterState::BeingExplored);
        cl[0].score = 0.3;
        update_cluster_states(&mut cl, &[], &[Cell::new(5, 5)], &p);
        assert_eq!(cl[0].state, ClusterState::Unexplored);
    }

    #[test]
    fn route_labels() {
        let p = small();
        let mut cl = init_clusters(20, 10, &p).unwrap();
        let route = ClusterRoute {
            robot: 0,
            clusters: vec![1, 0],
            planned_steps: vec![],
        };
        update_cluster_states(&mut cl, std::slice::from_ref(&route), &[Cell::new(2, 2)], &p);
        // robot sits in 0, but its current target is 1
        assert_eq!(cl[0].state, ClusterState::ToBeExplored);
        assert_eq!(cl[1].state, ClusterState::ToBeExplored);
        update_cluster_states(&mut cl, std::slice::from_ref(&route), &[Cell::new(15, 5)], &p);
        assert_eq!(cl[1].state, ClusterState::BeingExplored);
        // fringe keeps it, leaving the support drops it back
        update_cluster_states(&mut cl, std::slice::from_ref(&route), &[Cell::new(8, 5)], &p);
        assert_eq!(cl[1].state, ClusterState::BeingExplored);
        update_cluster_states(&mut cl, std::slice::from_ref(&route), &[Cell::new(2, 5)], &p);
        assert_eq!(cl[1].state, ClusterState::ToBeExplored);
    }

    fn flood_fill(mask: &Grid<bool>) -> Vec<Vec<Cell>> {
        let mut seen = Grid::new(mask.width(), mask.height(), false);
        let mut out = Vec::new();
        for start in mask.cells() {
            if !mask[start] || seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut q = VecDeque::from([start]);
            seen[start] = true;
            while let Some(c) = q.pop_front() {
                comp.push(c);
                for (dx, dy) in MOVES4 {
                    let n = c.offset(dx, dy);
                    if mask.get(n) == Some(&true) && !seen[n] {
                        seen[n] = true;
                        q.push_back(n);
                    }
                }
            }
            comp.sort_by_key(|c| (c.y, c.x));
            out.push(comp);
        }
        out
    }

    #[test]
    fn components_match_flood_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = rng.gen_range(0.2..0.7);
            let mask = Grid::from_fn(17, 13, |_| rng.gen_bool(p));
            assert_eq!(components(&mask), flood_fill(&mask));
        }
    }

    fn wall_map(w: usize, h: usize, walls: &[Cell]) -> Grid<f64> {
        let mut g = Grid::new(w, h, 1.0);
        for &c in walls {
            g[c] = 0.0;
        }
        g
    }

    #[test]
    fn no_wall_is_identity() {
        let mut cl = init_clusters(30, 10, &small()).unwrap();
        let before = cl.clone();
        let r = split_merge_clusters(1, &Grid::new(30, 10, 1.0), &mut cl, &[Cell::new(0, 0)], 0.1);
        assert!(!r.is_split());
        assert_eq!(cl, before);
    }

    /// A wall cuts a strip off the middle cluster and a small box encloses
    /// one cell: the big piece keeps the id, the strip joins the left
    /// neighbor, the boxed cell is dropped.
    #[test]
    fn three_way_split() {
        let mut walls: Vec<Cell> = (0..10).map(|y| Cell::new(12, y)).collect();
        for x in 15..=17 {
            for y in 2..=4 {
                if (x, y) != (16, 3) {
                    walls.push(Cell::new(x, y));
                }
            }
        }
        let pass = wall_map(30, 10, &walls);
        let mut cl = init_clusters(30, 10, &small()).unwrap();
        let support: Vec<Cell> = cl[1].support().filter(|&c| pass[c] >= 0.1).collect();
        let robots = [Cell::new(2, 5), Cell::new(25, 5)];
        let r = split_merge_clusters(1, &pass, &mut cl, &robots, 0.1);
        assert_eq!(r.fates.len(), 2);
        assert!(r.kept.contains(&Cell::new(19, 5)));
        assert_eq!(cl.len(), 3);
        let mut recovered = r.kept.clone();
        for f in &r.fates {
            match f {
                SplitFate::Merged { into, cells } => {
                    assert_eq!(*into, 0);
                    assert!(cells.contains(&Cell::new(11, 0)));
                    assert!(cells.iter().all(|&c| cl[0].mu(c) > 0.0 && cl[1].mu(c) == 0.0));
                    recovered.extend(cells);
                }
                SplitFate::Deleted { cells } => {
                    assert_eq!(cells, &vec![Cell::new(16, 3)]);
                    assert!(cl.iter().all(|k| k.mu(Cell::new(16, 3)) == 0.0));
                    recovered.extend(cells);
                }
                SplitFate::Spawned { .. } => panic!("nothing should spawn"),
            }
        }
        recovered.sort_by_key(|c| (c.y, c.x));
        assert_eq!(recovered, support);
    }

    #[test]
    fn parent_weight_values() {
        assert!((parent_weight(10.0, 0.98) - 0.831928017526649).abs() < 1e-12);
        assert_eq!(parent_weight(0.0, 0.98), 1.0);
    }

    fn at(id: usize, center: (f64, f64), score: f64) -> FuzzyCluster {
        FuzzyCluster {
            id,
            membership: Grid::new(1, 1, 1.0),
            center,
            score,
            state: ClusterState::Unexplored,
        }
    }

    #[test]
    fn single_robot_takes_nearest_first() {
        let p = ParentParams {
            gamma_parent: 0.9,
            ..ParentParams::default()
        };
        let cl = vec![
            at(0, (30.0, 0.0), 0.6),
            at(1, (10.0, 0.0), 0.6),
            at(2, (20.0, 0.0), 0.6),
        ];
        let robot = [Cell::new(0, 0)];
        let mut best = (f64::MIN, vec![]);
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let q = route_set_quality(&[perm.iter().map(|&i| &cl[i]).collect()], &robot, &p);
            if q > best.0 {
                best = (q, perm.to_vec());
            }
        }
        assert_eq!(best.1, vec![1, 2, 0]);
        let routes = high_level_plan(&cl, &robot, &p, &GaOptions::default()).unwrap();
        assert_eq!(routes[0].clusters, vec![1, 2, 0]);
        assert_eq!(routes[0].planned_steps, vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn routes_partition_open_clusters() {
        let mut cl: Vec<FuzzyCluster> = (0..7).map(|i| at(i, (i as f64 * 7.0, 3.0), 0.5)).collect();
        cl[3].state = ClusterState::Explored;
        let robots = [Cell::new(0, 0), Cell::new(40, 0), Cell::new(20, 20)];
        let routes = high_level_plan(&cl, &robots, &ParentParams::default(), &GaOptions::default()).unwrap();
        let mut all: Vec<usize> = routes.iter().flat_map(|r| r.clusters.clone()).collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 4, 5, 6]);
        assert!(routes.iter().all(|r| !r.clusters.is_empty()));
    }

    #[test]
    fn fewer_clusters_than_robots() {
        let cl = vec![at(0, (0.0, 0.0), 0.5)];
        let robots = [Cell::new(50, 50), Cell::new(1, 1)];
        let routes = high_level_plan(&cl, &robots, &ParentParams::default(), &GaOptions::default()).unwrap();
        assert!(routes[0].clusters.is_empty());
        assert_eq!(routes[1].clusters, vec![0]);
    }

    #[test]
    fn child_weight_branches() {
        let p = ParentParams::default();
        let mut c = at(0, (0.0, 0.0), 0.5);
        c.membership = Grid::new(100, 100, 0.5625);
        c.state = ClusterState::BeingExplored;
        assert_eq!(
            child_weight_transform(Cell::new(3, 3), &c, Cell::new(1, 1), &p).unwrap(),
            0.5625
        );
        c.state = ClusterState::ToBeExplored;
        let w = child_weight_transform(Cell::new(59, 0), &c, Cell::new(60, 0), &p).unwrap();
        assert!((w - (-0.5f64).exp()).abs() < 1e-15);
        // leading away from the center
        assert_eq!(
            child_weight_transform(Cell::new(61, 0), &c, Cell::new(60, 0), &p).unwrap(),
            0.0
        );
        // beyond the approach radius
        assert_eq!(
            child_weight_transform(Cell::new(0, 0), &c, Cell::new(80, 0), &p).unwrap(),
            0.0
        );
        c.state = ClusterState::Explored;
        assert!(child_weight_transform(Cell::new(0, 0), &c, Cell::new(0, 0), &p).is_err());
    }

    #[test]
    fn layer_round_assigns_everyone() {
        let p = ParentParams {
            cluster_side: 20,
            ..ParentParams::default()
        };
        let mut layer = ParentLayer::new(60, 60, p, GaOptions::default()).unwrap();
        let maps = blank_maps(60, 60);
        let pos = [Cell::new(5, 5), Cell::new(55, 5), Cell::new(30, 55)];
        let hlc = layer.round(0, &maps, &pos).unwrap();
        assert_eq!(layer.replans, 1);
        assert_eq!(layer.routes.len(), 3);
        assert!(hlc.iter().all(Option::is_some));
        layer.round(5, &maps, &pos).unwrap();
        assert_eq!(layer.replans, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn split_conserves_support(seed in 0u64..10_000, density in 0.05f64..0.4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pass = Grid::from_fn(30, 20, |_| if rng.gen_bool(density) { 0.0 } else { 1.0 });
            let mut cl = init_clusters(30, 20, &small()).unwrap();
            let id = rng.gen_range(0..6);
            let before: Vec<Cell> = cl[id].support().filter(|&c| pass[c] >= 0.1).collect();
            let robots = [Cell::new(rng.gen_range(0..30), rng.gen_range(0..20))];
            let r = split_merge_clusters(id, &pass, &mut cl, &robots, 0.1);
            let mut got = r.kept.clone();
            for f in &r.fates {
                match f {
                    SplitFate::Merged { cells, .. } | SplitFate::Deleted { cells } | SplitFate::Spawned { cells, .. } => got.extend(cells),
                }
            }
            got.sort_by_key(|c| (c.y, c.x));
            prop_assert_eq!(got, before);
            // kept piece is one component
            if let Some(c) = cl.iter().find(|c| c.id == id) {
                let mask = Grid::from_fn(30, 20, |x| pass[x] >= 0.1 && c.mu(x) > 0.0);
                prop_assert!(components(&mask).len() <= 1);
            }
            // coverage: only deleted cells may be uncovered
            let deleted: Vec<Cell> = r.fates.iter().filter_map(|f| match f { SplitFate::Deleted { cells } => Some(cells.clone()), _ => None }).flatten().collect();
            for c in pass.cells() {
                prop_assert!(deleted.contains(&c) || cl.iter().any(|k| k.mu(c) > 0.0));
            }
        }

        #[test]
        fn score_monotone(drop in 0.0f64..1.0) {
            let p = small();
            let mut maps = blank_maps(10, 10);
            let c = &init_clusters(10, 10, &p).unwrap()[0];
            let a = cluster_score(c, &maps, &p);
            for v in maps.layer_mut(FuzzyLayer::ExplorationReward).as_mut_slice() { *v *= 1.0 - drop; }
            let b = cluster_score(c, &maps, &p);
            prop_assert!(b <= a + 1e-15 && (0.0..=1.0).contains(&b));
        }
    }
}
