//! Single-robot fuzzy-logic MPC: motion encoding, observed sets, tuning
//! weights, trajectory grading and the PSO solve loop.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, TAU};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::belief::{FuzzyLayer, FuzzyMapSet};
use crate::error::{Error, Result};
use crate::fuzzy::{
    aggregate_overall, goal_degree_from_sum, weighted_goal_term, yager_from_violation, AggregationParams,
    CompensatedSum,
};
use crate::grid::{disc_area, disc_offsets, in_bounds, Cell, Grid};
use crate::optim::{particle_swarm_maximize, PsoOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerParams {
    pub n_p: usize,
    pub n_travel: usize,
    pub n_path: usize,
    pub gamma: f64,
    pub delta_max_plan: f64,
    pub aggregation: AggregationParams,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            n_p: 5,
            n_travel: 14,
            n_path: 20,
            gamma: 0.965,
            delta_max_plan: 5.0,
            aggregation: AggregationParams::default(),
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0 || self.n_path == 0 {
            return Err(Error::Config("n_p and n_path must be positive".into()));
        }
        if self.n_path > self.n_p * self.n_travel {
            return Err(Error::Config(format!(
                "n_path {} exceeds n_p * n_travel = {}",
                self.n_path,
                self.n_p * self.n_travel
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        if !(self.delta_max_plan > 0.0 && self.delta_max_plan.is_finite()) {
            return Err(Error::Config("delta_max_plan must be positive".into()));
        }
        self.aggregation.validate()
    }

    /// Decision box: per block, segment length then heading.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.n_p)
            .flat_map(|_| [(0.0, self.n_travel as f64), (0.0, TAU)])
            .collect()
    }

    /// Denominator of the weighted goal aggregation: the disc area times the
    /// path length. Exact for straight obstacle-free plans, an upper bound
    /// otherwise.
    pub fn max_observable_count(&self) -> f64 {
        (disc_area(self.delta_max_plan) * self.n_path) as f64
    }
}

/// Cells the robot will enter; `cells[i]` is reached at step `i + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub start: Cell,
    pub cells: Vec<Cell>,
    pub decision: Vec<f64>,
}

impl TrajectoryPlan {
    pub fn stay(start: Cell) -> Self {
        TrajectoryPlan {
            start,
            cells: Vec::new(),
            decision: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn visit_step(&self, index: usize) -> u32 {
        index as u32 + 1
    }

    /// Consecutive cells (from the start) are 8-adjacent and distinct.
    pub fn is_connected(&self) -> bool {
        let mut prev = self.start;
        self.cells.iter().all(|&c| {
            let ok = c != prev && prev.is_adjacent_or_same(c);
            prev = c;
            ok
        })
    }
}

/// Compass step nearest to `angle`; ties go to the lower angle.
fn compass_step(angle: f64) -> (i32, i32) {
    let a = angle.rem_euclid(TAU) / FRAC_PI_4;
    let idx = ((a - 0.5).ceil() as i64).rem_euclid(8);
    let t = idx as f64 * FRAC_PI_4;
    (t.cos().round() as i32, t.sin().round() as i32)
}

/// Turns a decision vector into a cell path. Each block follows the ray of
/// its heading for `round(length)` steps, stepping to the compass neighbor
/// nearest the residual toward the ideal ray point. A block stops at the
/// grid border; the whole path stops at `n_path` cells.
pub fn decode_motion_plan(
    decision: &[f64],
    start: Cell,
    width: usize,
    height: usize,
    params: &ControllerParams,
) -> TrajectoryPlan {
    let mut cells = Vec::with_capacity(params.n_path);
    let mut cur = start;
    'blocks: for block in decision.chunks_exact(2).take(params.n_p) {
        let len = block[0].clamp(0.0, params.n_travel as f64).round() as usize;
        let heading = if block[1].is_finite() { block[1] } else { 0.0 };
        let (c, s) = (heading.cos(), heading.sin());
        let scale = c.abs().max(s.abs());
        let (ux, uy) = (c / scale, s / scale);
        let origin = cur;
        for t in 1..=len {
            if cells.len() == params.n_path {
                break 'blocks;
            }
            let ix = f64::from(origin.x) + t as f64 * ux;
            let iy = f64::from(origin.y) + t as f64 * uy;
            let (rx, ry) = (ix - f64::from(cur.x), iy - f64::from(cur.y));
            let angle = if rx.abs() < 1e-12 && ry.abs() < 1e-12 {
                heading
            } else {
                ry.atan2(rx)
            };
            let (dx, dy) = compass_step(angle);
            let next = cur.offset(dx, dy);
            if !in_bounds(width, height, next) {
                break;
            }
            cells.push(next);
            cur = next;
        }
    }
    TrajectoryPlan {
        start,
        cells,
        decision: decision.to_vec(),
    }
}

/// Decision vector for straight segments along compass directions
/// (`direction` counts eighth turns from east).
pub fn encode_segments(segments: &[(u8, usize)], params: &ControllerParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * params.n_p);
    for i in 0..params.n_p {
        match segments.get(i) {
            Some(&(dir, len)) => {
                out.push(len as f64);
                out.push(f64::from(dir % 8) * FRAC_PI_4);
            }
            None => out.extend([0.0, 0.0]),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservedCell {
    pub cell: Cell,
    /// Earliest sighting step and the distance at that step.
    pub kappa: u32,
    pub delta: f64,
    /// Every (step, distance) sighting in plan order.
    pub sightings: Vec<(u32, f64)>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ObservedCellSet {
    /// Row-major order.
    pub entries: Vec<ObservedCell>,
}

impl ObservedCellSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, cell: Cell) -> Option<&ObservedCell> {
        self.entries.iter().find(|e| e.cell == cell)
    }
}

/// Union of the planner discs around the plan cells, each cell tagged with
/// its earliest sighting. An empty plan observes the disc around the start
/// at step 0.
pub fn observed_set(plan: &TrajectoryPlan, width: usize, height: usize, delta_max_plan: f64) -> ObservedCellSet {
    let disc = disc_offsets(delta_max_plan);
    let mut map: BTreeMap<(i32, i32), ObservedCell> = BTreeMap::new();
    let centers: Vec<(Cell, u32)> = if plan.is_empty() {
        vec![(plan.start, 0)]
    } else {
        plan.cells
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, plan.visit_step(i)))
            .collect()
    };
    for (center, kappa) in centers {
        for off in &disc {
            let cell = center.offset(off.dx, off.dy);
            if !in_bounds(width, height, cell) {
                continue;
            }
            map.entry((cell.y, cell.x))
                .and_modify(|e| e.sightings.push((kappa, off.distance)))
                .or_insert_with(|| ObservedCell {
                    cell,
                    kappa,
                    delta: off.distance,
                    sightings: vec![(kappa, off.distance)],
                });
        }
    }
    ObservedCellSet {
        entries: map.into_values().collect(),
    }
}

/// Tuning weights per cell, zero where the plan sees nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField {
    grid: Grid<f64>,
}

impl WeightField {
    pub fn zeros(width: usize, height: usize) -> Self {
        WeightField {
            grid: Grid::new(width, height, 0.0),
        }
    }

    pub fn from_grid(grid: Grid<f64>) -> Self {
        WeightField { grid }
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.grid.get(cell).copied().unwrap_or(0.0)
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.grid
    }
}

/// `1 / (1 - ln(alpha * beta * w_hlc))`, zero if the product is not positive.
#[inline]
pub fn sighting_weight(alpha: f64, beta: f64, w_hlc: f64) -> f64 {
    let p = alpha * beta * w_hlc;
    if p > 0.0 {
        1.0 / (1.0 - p.ln())
    } else {
        0.0
    }
}

#[inline]
pub fn alpha(delta: f64, delta_max: f64) -> f64 {
    (1.0 - delta / delta_max).max(0.0)
}

/// Running maximum of the sighting weights along the plan. `hlc` holds the
/// optional per-cell multiplier injected by the parent planner.
pub fn tuning_weights(
    observed: &ObservedCellSet,
    width: usize,
    height: usize,
    params: &ControllerParams,
    hlc: Option<&Grid<f64>>,
) -> WeightField {
    let mut grid = Grid::new(width, height, 0.0);
    for e in &observed.entries {
        let h = hlc.map_or(1.0, |g| g[e.cell]);
        let mut w: f64 = 0.0;
        for &(kappa, delta) in &e.sightings {
            let beta = params.gamma.powi(kappa as i32);
            w = w.max(sighting_weight(alpha(delta, params.delta_max_plan), beta, h));
        }
        grid[e.cell] = w;
    }
    WeightField { grid }
}

/// Cooperative reduction: `max(0, own - others_max)`.
pub fn cooperative_weight(own: f64, others_max: f64) -> f64 {
    (own - others_max).max(0.0)
}

/// Immutable snapshot a planner grades against.
#[derive(Clone, Copy)]
pub struct PlanningInputs<'a> {
    pub maps: &'a FuzzyMapSet,
    /// Per-cell maximum of the other robots' registered weights.
    pub others: Option<&'a Grid<f64>>,
    /// Parent-layer weight multiplier.
    pub hlc: Option<&'a Grid<f64>>,
}

impl<'a> PlanningInputs<'a> {
    pub fn solo(maps: &'a FuzzyMapSet) -> Self {
        PlanningInputs {
            maps,
            others: None,
            hlc: None,
        }
    }
}

fn goal_degree(maps: &FuzzyMapSet, cell: Cell, params: &AggregationParams) -> f64 {
    params.s_norm.fold(&maps.goal_degrees(cell))
}

/// Straightforward grading: goal degree over the observed set with
/// cooperative tuning weights, Yager constraint degree over plan cells,
/// combined with the t-norm. An empty plan grades 0.
pub fn grade_trajectory(
    plan: &TrajectoryPlan,
    inputs: &PlanningInputs,
    max_observable_count: f64,
    params: &ControllerParams,
) -> f64 {
    if plan.is_empty() {
        return 0.0;
    }
    let maps = inputs.maps;
    let (w, h) = (maps.width(), maps.height());
    let agg = &params.aggregation;
    let observed = observed_set(plan, w, h, params.delta_max_plan);
    let weights = tuning_weights(&observed, w, h, params, inputs.hlc);
    let mut sum = CompensatedSum::new();
    for e in &observed.entries {
        let own = weights.get(e.cell);
        let weight = match inputs.others {
            Some(o) => cooperative_weight(own, o[e.cell]),
            None => own,
        };
        sum.add(weighted_goal_term(goal_degree(maps, e.cell, agg), weight, agg.w_goal));
    }
    let goal = goal_degree_from_sum(sum.total(), max_observable_count, agg.w_goal);
    let mut violation = CompensatedSum::new();
    for &c in &plan.cells {
        for mu in maps.constraint_degrees(c) {
            violation.add(1.0 - mu.powf(agg.w_con));
        }
    }
    aggregate_overall(goal, yager_from_violation(violation.total(), agg.w_con), agg)
}

/// Precomputed grading tables for one snapshot; grades many candidate plans
/// without allocating.
pub struct Grader<'a> {
    params: &'a ControllerParams,
    width: usize,
    height: usize,
    ln_goal: Vec<f64>,
    violation: Vec<f64>,
    others: Option<&'a [f64]>,
    ln_hlc: Option<Vec<f64>>,
    disc: Vec<(i32, i32, f64)>,
    ln_gamma: f64,
    max_count: f64,
    stamp: Vec<u32>,
    best: Vec<f64>,
    touched: Vec<usize>,
    epoch: u32,
}

impl<'a> Grader<'a> {
    pub fn new(inputs: &PlanningInputs<'a>, params: &'a ControllerParams) -> Self {
        let maps = inputs.maps;
        let (width, height) = (maps.width(), maps.height());
        let agg = &params.aggregation;
        let n = width * height;
        let mut ln_goal = Vec::with_capacity(n);
        let mut violation = Vec::with_capacity(n);
        let pass = maps.layer(FuzzyLayer::Passability);
        for i in 0..n {
            let c = pass.cell_at(i);
            let g = goal_degree(maps, c, agg);
            ln_goal.push(if g > 0.0 { g.ln() } else { f64::NEG_INFINITY });
            violation.push(1.0 - pass.as_slice()[i].powf(agg.w_con));
        }
        let ln_hlc = inputs.hlc.map(|g| {
            g.iter()
                .map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
                .collect()
        });
        let disc = disc_offsets(params.delta_max_plan)
            .into_iter()
            .map(|o| (o.dx, o.dy, alpha(o.distance, params.delta_max_plan).ln()))
            .collect();
        Grader {
            params,
            width,
            height,
            ln_goal,
            violation,
            others: inputs.others.map(Grid::as_slice),
            ln_hlc,
            disc,
            ln_gamma: params.gamma.ln(),
            max_count: params.max_observable_count(),
            stamp: vec![0; n],
            best: vec![0.0; n],
            touched: Vec::with_capacity(n),
            epoch: 0,
        }
    }

    fn next_epoch(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.fill(0);
            self.epoch = 1;
        }
        self.touched.clear();
    }

    /// Own (pre-cooperation) weights of every observed cell into `best`,
    /// indices into `touched`.
    fn stamp_weights(&mut self, plan: &TrajectoryPlan) {
        self.next_epoch();
        let (w, h) = (self.width as i32, self.height as i32);
        for (i, &center) in plan.cells.iter().enumerate() {
            let kappa = f64::from(plan.visit_step(i));
            let ln_beta = if kappa == 0.0 { 0.0 } else { kappa * self.ln_gamma };
            for &(dx, dy, ln_alpha) in &self.disc {
                let (x, y) = (center.x + dx, center.y + dy);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let idx = y as usize * self.width + x as usize;
                let ln_h = self.ln_hlc.as_ref().map_or(0.0, |v| v[idx]);
                let denom = 1.0 - ln_alpha - ln_beta - ln_h;
                let weight = if denom.is_finite() { 1.0 / denom } else { 0.0 };
                if self.stamp[idx] != self.epoch {
                    self.stamp[idx] = self.epoch;
                    self.best[idx] = weight;
                    self.touched.push(idx);
                } else if weight > self.best[idx] {
                    self.best[idx] = weight;
                }
            }
        }
    }

    pub fn grade(&mut self, plan: &TrajectoryPlan) -> f64 {
        if plan.is_empty() {
            return 0.0;
        }
        let agg = &self.params.aggregation;
        let mut violation = CompensatedSum::new();
        for &c in &plan.cells {
            violation.add(self.violation[c.y as usize * self.width + c.x as usize]);
        }
        let constraint = yager_from_violation(violation.total(), agg.w_con);
        // both t-norms vanish with a zero argument
        if constraint <= 0.0 {
            return 0.0;
        }
        self.stamp_weights(plan);
        let mut sum = CompensatedSum::new();
        for &idx in &self.touched {
            let own = self.best[idx];
            let weight = match self.others {
                Some(o) => cooperative_weight(own, o[idx]),
                None => own,
            };
            let ln_g = self.ln_goal[idx];
            if weight > 0.0 && ln_g.is_finite() {
                sum.add(((agg.w_goal + 1.0 / weight) * ln_g).exp());
            }
        }
        let goal = goal_degree_from_sum(sum.total(), self.max_count, agg.w_goal);
        aggregate_overall(goal, constraint, agg)
    }

    /// Own weight field of `plan`, as registered with the coordinator.
    pub fn weight_field(&mut self, plan: &TrajectoryPlan) -> WeightField {
        let mut grid = Grid::new(self.width, self.height, 0.0);
        if !plan.is_empty() {
            self.stamp_weights(plan);
            for &idx in &self.touched {
                grid.as_mut_slice()[idx] = self.best[idx];
            }
        }
        WeightField { grid }
    }
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub plan: TrajectoryPlan,
    pub grade: f64,
    pub weights: WeightField,
    pub evaluations: usize,
    pub grading_time: Duration,
}

/// Maximizes the grade over the decision box with particle swarm.
pub fn plan(
    position: Cell,
    inputs: &PlanningInputs,
    params: &ControllerParams,
    pso: &PsoOptions,
) -> Result<PlanOutcome> {
    params.validate()?;
    let (w, h) = (inputs.maps.width(), inputs.maps.height());
    let mut grader = Grader::new(inputs, params);
    let mut spent = Duration::ZERO;
    let objective = |x: &[f64]| {
        let t = Instant::now();
        let p = decode_motion_plan(x, position, w, h, params);
        let g = grader.grade(&p);
        spent += t.elapsed();
        g
    };
    let result = particle_swarm_maximize(objective, &params.bounds(), &[], pso)?;
    let plan = decode_motion_plan(&result.best, position, w, h, params);
    let weights = grader.weight_field(&plan);
    Ok(PlanOutcome {
        plan,
        grade: result.value,
        weights,
        evaluations: result.evaluations,
        grading_time: spent,
    })
}
