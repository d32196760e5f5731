//! Team knowledge: Bayesian probability map, certainty map (used by the
//! stochastic baseline) and the fuzzy map set with its update pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid};
use crate::membership::{
    MembershipFunctionBank, EXPLORATION_REWARD, HUMAN_DETECTION_REWARD, MEASUREMENT_CONSISTENCY, PASSABILITY,
};
use crate::sim::{CellState, Observation, SensorModel};

/// Per-cell categorical belief over the state space.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    n_states: usize,
    data: Vec<f64>,
    rejected_updates: u64,
}

impl ProbabilityMap {
    /// Every cell starts from `prior`, which must be a probability vector.
    pub fn new(width: usize, height: usize, prior: &[f64]) -> Result<Self> {
        if prior.len() < 2 {
            return Err(Error::Config("prior needs at least two states".into()));
        }
        let sum: f64 = prior.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || prior.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("prior {prior:?} is not a probability vector")));
        }
        let data = prior
            .iter()
            .copied()
            .cycle()
            .take(prior.len() * width * height)
            .collect();
        Ok(ProbabilityMap {
            width,
            height,
            n_states: prior.len(),
            data,
            rejected_updates: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    fn offset(&self, cell: Cell) -> usize {
        (cell.y as usize * self.width + cell.x as usize) * self.n_states
    }

    pub fn belief(&self, cell: Cell) -> &[f64] {
        let o = self.offset(cell);
        &self.data[o..o + self.n_states]
    }

    pub fn belief_mut(&mut self, cell: Cell) -> &mut [f64] {
        let o = self.offset(cell);
        &mut self.data[o..o + self.n_states]
    }

    #[inline]
    pub fn prob(&self, cell: Cell, state: usize) -> f64 {
        self.data[self.offset(cell) + state]
    }

    /// Most likely state; ties go to the lower index.
    pub fn map_state(&self, cell: Cell) -> usize {
        argmax(self.belief(cell))
    }

    /// Number of updates dropped because the posterior vanished.
    pub fn rejected_updates(&self) -> u64 {
        self.rejected_updates
    }

    /// Sequential Bayes update with the penalized likelihood. An all-zero
    /// posterior leaves the belief unchanged and bumps a counter.
    pub fn bayes_update(&mut self, observations: &[Observation], sensor: &SensorModel) {
        for obs in observations {
            self.update_cell(obs.cell, obs.observed_state, obs.detectability, sensor);
        }
    }

    pub fn update_cell(&mut self, cell: Cell, observed: usize, d: f64, sensor: &SensorModel) {
        let n = self.n_states;
        let o = self.offset(cell);
        let mut post = [0.0f64; 8];
        let post = if n <= post.len() {
            &mut post[..n]
        } else {
            return self.update_cell_slow(cell, observed, d, sensor);
        };
        let mut total = 0.0;
        for (i, p) in post.iter_mut().enumerate() {
            *p = sensor.likelihood(observed, i, d) * self.data[o + i];
            total += *p;
        }
        if !(total > 0.0 && total.is_finite()) {
            self.rejected_updates += 1;
            return;
        }
        for (i, p) in post.iter().enumerate() {
            self.data[o + i] = p / total;
        }
    }

    fn update_cell_slow(&mut self, cell: Cell, observed: usize, d: f64, sensor: &SensorModel) {
        let o = self.offset(cell);
        let post: Vec<f64> = (0..self.n_states)
            .map(|i| sensor.likelihood(observed, i, d) * self.data[o + i])
            .collect();
        let total: f64 = post.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            self.rejected_updates += 1;
            return;
        }
        for (i, p) in post.iter().enumerate() {
            self.data[o + i] = p / total;
        }
    }

    /// One probability per cell for `state`.
    pub fn state_layer(&self, state: usize) -> Grid<f64> {
        Grid::from_fn(self.width, self.height, |c| self.prob(c, state))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Observation certainty per cell; starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CertaintyMap {
    grid: Grid<f64>,
}

impl CertaintyMap {
    pub fn new(width: usize, height: usize) -> Self {
        CertaintyMap {
            grid: Grid::new(width, height, 0.0),
        }
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.grid[cell]
    }

    /// Observed cells gain `z' = 1 - (1 - z)(1 - d)`; every other cell decays
    /// to `decay * z`.
    pub fn update(&mut self, observations: &[Observation], decay: f64) {
        let mut seen = Grid::new(self.grid.width(), self.grid.height(), false);
        for obs in observations {
            let z = &mut self.grid[obs.cell];
            *z = certainty_gain(*z, obs.detectability);
            seen[obs.cell] = true;
        }
        for (z, &s) in self.grid.as_mut_slice().iter_mut().zip(seen.as_slice()) {
            if !s {
                *z *= decay;
            }
        }
    }
}

#[inline]
pub fn certainty_gain(z: f64, d: f64) -> f64 {
    1.0 - (1.0 - z) * (1.0 - d)
}

/// The five fuzzy variables tracked per cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuzzyLayer {
    Passability,
    HumanDetectionReward,
    ExplorationReward,
    Uncertainty,
    MeasurementConsistency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerRole {
    Constraint,
    Reward,
    Auxiliary,
}

impl FuzzyLayer {
    pub const ALL: [FuzzyLayer; 5] = [
        FuzzyLayer::Passability,
        FuzzyLayer::HumanDetectionReward,
        FuzzyLayer::ExplorationReward,
        FuzzyLayer::Uncertainty,
        FuzzyLayer::MeasurementConsistency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FuzzyLayer::Passability => "passability",
            FuzzyLayer::HumanDetectionReward => "human_detection_reward",
            FuzzyLayer::ExplorationReward => "exploration_reward",
            FuzzyLayer::Uncertainty => "uncertainty",
            FuzzyLayer::MeasurementConsistency => "measurement_consistency",
        }
    }

    pub fn role(self) -> LayerRole {
        match self {
            FuzzyLayer::Passability => LayerRole::Constraint,
            FuzzyLayer::HumanDetectionReward | FuzzyLayer::ExplorationReward => LayerRole::Reward,
            FuzzyLayer::Uncertainty | FuzzyLayer::MeasurementConsistency => LayerRole::Auxiliary,
        }
    }

    pub fn is_dynamic(self) -> bool {
        self == FuzzyLayer::Uncertainty
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// How the uncertainty layer drifts for cells nobody observes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyModel {
    pub ceiling: f64,
    pub rise_per_step: f64,
    pub rate_divisor: f64,
}

impl Default for UncertaintyModel {
    fn default() -> Self {
        UncertaintyModel {
            ceiling: 0.648,
            rise_per_step: 0.002,
            rate_divisor: 1.0,
        }
    }
}

impl UncertaintyModel {
    pub fn with_divisor(rate_divisor: f64) -> Self {
        UncertaintyModel {
            rate_divisor,
            ..Self::default()
        }
    }

    /// Slow rise toward the ceiling; values at or above it are fixed points.
    pub fn unobserved(&self, u: f64, steps: u32) -> f64 {
        if u >= self.ceiling {
            u
        } else {
            (u + f64::from(steps) * self.rise_per_step / self.rate_divisor).min(self.ceiling)
        }
    }
}

/// Uncertainty after an observation: consistency at or below one half leaves
/// it unchanged; above that the drop scales with detectability.
pub fn uncertainty_after_observation(u: f64, consistency: f64, d: f64) -> f64 {
    if consistency <= 0.5 {
        u
    } else {
        (u * (1.0 - d * (2.0 * consistency - 1.0))).clamp(0.0, 1.0)
    }
}

/// Per-cell fuzzy degrees, one grid per [`FuzzyLayer`].
#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyMapSet {
    layers: Vec<Grid<f64>>,
}

impl FuzzyMapSet {
    /// Mission-start maps: uncertainty 1 everywhere, neutral consistency,
    /// static layers derived from `prob`.
    pub fn initial(prob: &ProbabilityMap, bank: &MembershipFunctionBank) -> Result<Self> {
        let (w, h) = (prob.width(), prob.height());
        let mut maps = FuzzyMapSet {
            layers: vec![Grid::new(w, h, 0.0); FuzzyLayer::ALL.len()],
        };
        maps.layers[FuzzyLayer::Uncertainty.slot()].fill(1.0);
        maps.layers[FuzzyLayer::MeasurementConsistency.slot()].fill(0.5);
        maps.refresh_static(prob, bank)?;
        Ok(maps)
    }

    pub fn width(&self) -> usize {
        self.layers[0].width()
    }

    pub fn height(&self) -> usize {
        self.layers[0].height()
    }

    pub fn layer(&self, layer: FuzzyLayer) -> &Grid<f64> {
        &self.layers[layer.slot()]
    }

    pub fn layer_mut(&mut self, layer: FuzzyLayer) -> &mut Grid<f64> {
        &mut self.layers[layer.slot()]
    }

    pub fn degree(&self, layer: FuzzyLayer, cell: Cell) -> f64 {
        self.layers[layer.slot()][cell]
    }

    /// Reward degrees for a cell, in layer order.
    pub fn goal_degrees(&self, cell: Cell) -> [f64; 2] {
        [
            self.degree(FuzzyLayer::HumanDetectionReward, cell),
            self.degree(FuzzyLayer::ExplorationReward, cell),
        ]
    }

    pub fn constraint_degrees(&self, cell: Cell) -> [f64; 1] {
        [self.degree(FuzzyLayer::Passability, cell)]
    }

    /// Runs after the probability map has absorbed `observations`. The
    /// uncertainty layer moves per observation (observed cells) or drifts
    /// for `steps` time steps (unobserved cells); the static layers are then
    /// recomputed.
    pub fn update(
        &mut self,
        prob: &ProbabilityMap,
        observations: &[Observation],
        sensor: &SensorModel,
        bank: &MembershipFunctionBank,
        model: &UncertaintyModel,
        steps: u32,
    ) -> Result<()> {
        let consistency_fn = bank.surface(MEASUREMENT_CONSISTENCY)?;
        let (w, h) = (self.width(), self.height());
        let mut observed = Grid::new(w, h, false);
        for obs in observations {
            let map_state = prob.map_state(obs.cell);
            let likelihood = sensor.base_likelihood(obs.observed_state, map_state);
            let c = consistency_fn.eval(obs.detectability, likelihood);
            self.layers[FuzzyLayer::MeasurementConsistency.slot()][obs.cell] = c;
            let u = &mut self.layers[FuzzyLayer::Uncertainty.slot()][obs.cell];
            *u = uncertainty_after_observation(*u, c, obs.detectability);
            observed[obs.cell] = true;
        }
        let unc = self.layers[FuzzyLayer::Uncertainty.slot()].as_mut_slice();
        for (u, &seen) in unc.iter_mut().zip(observed.as_slice()) {
            if !seen {
                *u = model.unobserved(*u, steps);
            }
        }
        self.refresh_static(prob, bank)
    }

    fn refresh_static(&mut self, prob: &ProbabilityMap, bank: &MembershipFunctionBank) -> Result<()> {
        let pass = bank.linear(PASSABILITY)?;
        let human = bank.linear(HUMAN_DETECTION_REWARD)?;
        let explore = bank.linear(EXPLORATION_REWARD)?;
        let n = prob.n_states();
        let beliefs = prob.as_slice();
        let obstacle = CellState::Obstacle.index();
        let human_idx = CellState::Human.index();
        for i in 0..self.layers[0].len() {
            let b = &beliefs[i * n..(i + 1) * n];
            let u = self.layers[FuzzyLayer::Uncertainty.slot()].as_slice()[i];
            self.layers[FuzzyLayer::Passability.slot()].as_mut_slice()[i] = pass.eval(b[obstacle]);
            self.layers[FuzzyLayer::HumanDetectionReward.slot()].as_mut_slice()[i] = human.eval(b[human_idx]);
            self.layers[FuzzyLayer::ExplorationReward.slot()].as_mut_slice()[i] = explore.eval(u);
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GridSidecar {
    width: usize,
    height: usize,
    layers: Vec<String>,
    dtype: String,
    order: String,
}

/// Writes layers as concatenated little-endian `f64` row-major grids
/// (`<stem>.bin`) plus a JSON sidecar (`<stem>.json`).
pub fn write_layers(stem: &Path, names: &[&str], layers: &[&Grid<f64>]) -> Result<(PathBuf, PathBuf)> {
    let Some(first) = layers.first() else {
        return Err(Error::Contract("no layers to write".into()));
    };
    if names.len() != layers.len() || layers.iter().any(|g| g.dims() != first.dims()) {
        return Err(Error::Contract("layer names and shapes must agree".into()));
    }
    let mut bytes = Vec::with_capacity(layers.len() * first.len() * 8);
    for g in layers {
        for v in g.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    let sidecar = GridSidecar {
        width: first.width(),
        height: first.height(),
        layers: names.iter().map(|s| s.to_string()).collect(),
        dtype: "f64le".into(),
        order: "row-major".into(),
    };
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok((bin, json))
}

pub fn read_layers(stem: &Path) -> Result<Vec<(String, Grid<f64>)>> {
    let json = stem.with_extension("json");
    let bin = stem.with_extension("bin");
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: GridSidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: json.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let cells = sidecar.width * sidecar.height;
    if bytes.len() != cells * 8 * sidecar.layers.len() {
        return Err(Error::Contract(format!("{} has the wrong size", bin.display())));
    }
    let mut out = Vec::new();
    for (k, name) in sidecar.layers.into_iter().enumerate() {
        let data = bytes[k * cells * 8..(k + 1) * cells * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Grid::from_vec(sidecar.width, sidecar.height, data).unwrap()));
    }
    Ok(out)
}

/// Quantizes degrees in `[0, 1]` to bytes (`round(v * 255)`).
pub fn quantize(grid: &Grid<f64>) -> Vec<u8> {
    grid.iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Binary 8-bit PGM (P5); brightness is the degree times 255.
pub fn to_pgm(grid: &Grid<f64>) -> Vec<u8> {
    pgm_from_bytes(grid.width(), grid.height(), &quantize(grid))
}

pub fn pgm_from_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{sensing_rng, SensorModel};
    use proptest::prelude::*;
    use rand::Rng;

    const START: [f64; 3] = [0.34, 0.33, 0.33];

    fn obs(x: i32, y: i32, o: CellState, d: f64) -> Observation {
        Observation {
            cell: Cell::new(x, y),
            observed_state: o.index(),
            detectability: d,
        }
    }

    #[test]
    fn posterior_after_a_clean_observation() {
        let third = 1.0 / 3.0;
        let mut p = ProbabilityMap::new(1, 1, &[third, third, 1.0 - 2.0 * third]).unwrap();
        p.bayes_update(&[obs(0, 0, CellState::Human, 1.0)], &SensorModel::default());
        assert!((p.prob(Cell::new(0, 0), 1) - 0.96).abs() < 1e-12);
    }

    #[test]
    fn certain_beliefs_absorb() {
        let mut p = ProbabilityMap::new(1, 1, &[1.0, 0.0, 0.0]).unwrap();
        for o in CellState::ALL {
            p.bayes_update(&[obs(0, 0, o, 0.6)], &SensorModel::default());
            assert_eq!(p.belief(Cell::new(0, 0)), &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn vanishing_posterior_is_rejected() {
        let sensor = SensorModel {
            hit_prob: 1.0,
            miss_prob: 0.0,
            blend_floor: 0.0,
            delta_max: 6.0,
        };
        let mut p = ProbabilityMap::new(1, 1, &[0.0, 1.0, 0.0]).unwrap();
        p.bayes_update(&[obs(0, 0, CellState::Empty, 1.0)], &sensor);
        assert_eq!(p.belief(Cell::new(0, 0)), &[0.0, 1.0, 0.0]);
        assert_eq!(p.rejected_updates(), 1);
    }

    #[test]
    fn invalid_priors() {
        assert!(ProbabilityMap::new(2, 2, &[0.5, 0.6]).is_err());
        assert!(ProbabilityMap::new(2, 2, &[1.0]).is_err());
        let p = ProbabilityMap::new(2, 2, &START).unwrap();
        assert_eq!(p.belief(Cell::new(1, 1)), &START);
        assert_eq!(p.map_state(Cell::new(0, 0)), 0);
    }

    #[test]
    fn certainty_law() {
        let mut m = CertaintyMap::new(2, 1);
        assert_eq!(m.grid().as_slice(), &[0.0, 0.0]);
        m.update(&[obs(0, 0, CellState::Empty, 1.0)], 0.99);
        assert_eq!(m.get(Cell::new(0, 0)), 1.0);
        m.grid.as_mut_slice()[1] = 0.5;
        m.update(&[], 0.99);
        assert!((m.get(Cell::new(1, 0)) - 0.495).abs() < 1e-15);
    }

    #[test]
    fn uncertainty_rise_and_ceiling() {
        let m = UncertaintyModel::default();
        assert_eq!(m.unobserved(0.648, 10), 0.648);
        assert_eq!(m.unobserved(1.0, 10), 1.0);
        assert!((m.unobserved(0.1, 1) - 0.102).abs() < 1e-15);
        assert_eq!(m.unobserved(0.647, 5), 0.648);
        let slow = UncertaintyModel::with_divisor(100.0);
        assert!((slow.unobserved(0.1, 1) - 0.10002).abs() < 1e-15);
    }

    #[test]
    fn inconsistent_measurements_leave_uncertainty() {
        assert_eq!(uncertainty_after_observation(0.8, 0.3, 1.0), 0.8);
        assert_eq!(uncertainty_after_observation(0.8, 0.5, 1.0), 0.8);
        assert_eq!(uncertainty_after_observation(0.8, 1.0, 1.0), 0.0);
        assert!((uncertainty_after_observation(0.8, 0.75, 0.5) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn fuzzy_start_state_and_unobserved_ceiling() {
        let bank = MembershipFunctionBank::default();
        let prob = ProbabilityMap::new(3, 3, &START).unwrap();
        let mut maps = FuzzyMapSet::initial(&prob, &bank).unwrap();
        assert!(maps.layer(FuzzyLayer::Uncertainty).iter().all(|&u| u == 1.0));
        maps.layer_mut(FuzzyLayer::Uncertainty).fill(0.648);
        maps.refresh_static(&prob, &bank).unwrap();
        let before = maps.clone();
        maps.update(
            &prob,
            &[],
            &SensorModel::default(),
            &bank,
            &UncertaintyModel::default(),
            5,
        )
        .unwrap();
        assert_eq!(maps, before);
    }

    #[test]
    fn observed_cell_with_low_consistency_keeps_uncertainty() {
        let bank = MembershipFunctionBank::default();
        let sensor = SensorModel::default();
        // strongly believed empty, then a far-off "obstacle" reading
        let mut prob = ProbabilityMap::new(1, 1, &[0.98, 0.01, 0.01]).unwrap();
        let mut maps = FuzzyMapSet::initial(&prob, &bank).unwrap();
        maps.layer_mut(FuzzyLayer::Uncertainty).fill(0.4);
        let o = [obs(0, 0, CellState::Obstacle, 0.3)];
        prob.bayes_update(&o, &sensor);
        assert_eq!(prob.map_state(Cell::new(0, 0)), 0);
        maps.update(&prob, &o, &sensor, &bank, &UncertaintyModel::default(), 1)
            .unwrap();
        assert!(maps.degree(FuzzyLayer::MeasurementConsistency, Cell::new(0, 0)) < 0.5);
        assert_eq!(maps.degree(FuzzyLayer::Uncertainty, Cell::new(0, 0)), 0.4);
    }

    #[test]
    fn layer_table() {
        use LayerRole::*;
        let roles: Vec<_> = FuzzyLayer::ALL
            .iter()
            .map(|l| (l.name(), l.role(), l.is_dynamic()))
            .collect();
        assert_eq!(
            roles,
            vec![
                ("passability", Constraint, false),
                ("human_detection_reward", Reward, false),
                ("exploration_reward", Reward, false),
                ("uncertainty", Auxiliary, true),
                ("measurement_consistency", Auxiliary, false),
            ]
        );
    }

    #[test]
    fn layer_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Grid::from_fn(3, 2, |c| f64::from(c.x) * 0.1);
        let b = Grid::from_fn(3, 2, |c| f64::from(c.y) * 0.5);
        let stem = dir.path().join("maps");
        write_layers(&stem, &["a", "b"], &[&a, &b]).unwrap();
        let back = read_layers(&stem).unwrap();
        assert_eq!(back, vec![("a".to_string(), a.clone()), ("b".to_string(), b)]);
        let pgm = to_pgm(&a);
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(pgm.len(), 11 + 6);
    }

    #[test]
    fn consistent_observations_converge() {
        let sensor = SensorModel::default();
        let mut p = ProbabilityMap::new(1, 1, &START).unwrap();
        let mut last = p.prob(Cell::new(0, 0), 2);
        for _ in 0..50 {
            p.bayes_update(&[obs(0, 0, CellState::Obstacle, 0.4)], &sensor);
            let now = p.prob(Cell::new(0, 0), 2);
            assert!(now >= last);
            last = now;
        }
        assert!(last > 0.999);
    }

    proptest! {
        #[test]
        fn beliefs_stay_normalized_and_layers_bounded(seed in any::<u64>(), rounds in 1usize..25) {
            let sensor = SensorModel::default();
            let bank = MembershipFunctionBank::default();
            let model = UncertaintyModel::default();
            let mut prob = ProbabilityMap::new(6, 6, &START).unwrap();
            let mut maps = FuzzyMapSet::initial(&prob, &bank).unwrap();
            let mut rng = sensing_rng(seed, 0, 0);
            for _ in 0..rounds {
                let batch: Vec<Observation> = (0..rng.gen_range(0..30))
                    .map(|_| Observation {
                        cell: Cell::new(rng.gen_range(0..6), rng.gen_range(0..6)),
                        observed_state: rng.gen_range(0..3),
                        detectability: rng.gen_range(0.01..=1.0),
                    })
                    .collect();
                let before = maps.layer(FuzzyLayer::Uncertainty).clone();
                prob.bayes_update(&batch, &sensor);
                maps.update(&prob, &batch, &sensor, &bank, &model, rng.gen_range(1..6)).unwrap();
                for c in before.cells() {
                    let sum: f64 = prob.belief(c).iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                    if !batch.iter().any(|o| o.cell == c) {
                        let (u0, u1) = (before[c], maps.degree(FuzzyLayer::Uncertainty, c));
                        if u0 >= model.ceiling { prop_assert_eq!(u0, u1); } else { prop_assert!(u1 >= u0); }
                    }
                }
                for l in FuzzyLayer::ALL {
                    prop_assert!(maps.layer(l).iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
        }
    }
}
