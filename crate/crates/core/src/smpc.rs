//! Comparison controller: MPC with a stochastic cost over the probability
//! and certainty maps. Shares decoding and the solver with [`crate::flmpc`].

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::belief::{certainty_gain, CertaintyMap, ProbabilityMap};
use crate::error::{Error, Result};
use crate::flmpc::{decode_motion_plan, ControllerParams, PlanOutcome, TrajectoryPlan, WeightField};
use crate::grid::{disc_offsets, in_bounds, Cell, DiscOffset};
use crate::optim::{particle_swarm_maximize, PsoOptions};
use crate::sim::{CellState, Observation, SensorModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticCostParams {
    pub search_weight: f64,
    pub uncertainty_weight: f64,
    pub rescue_weight: f64,
    pub obstacle_weight: f64,
    /// P(human) at which entering a cell earns the rescue reward.
    pub rescue_threshold: f64,
    pub obstacle_sharpness: f64,
    pub obstacle_offset: f64,
    /// Certainty decay applied to unobserved cells per predicted step.
    pub certainty_decay: f64,
}

impl Default for StochasticCostParams {
    fn default() -> Self {
        StochasticCostParams {
            search_weight: 1.0,
            uncertainty_weight: 0.5,
            rescue_weight: 2.0,
            obstacle_weight: 1.0,
            rescue_threshold: 0.95,
            obstacle_sharpness: 20.0,
            obstacle_offset: 0.5,
            certainty_decay: 0.99,
        }
    }
}

impl StochasticCostParams {
    pub fn validate(&self) -> Result<()> {
        let ws = [
            self.search_weight,
            self.uncertainty_weight,
            self.rescue_weight,
            self.obstacle_weight,
        ];
        if ws.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("cost weights must be finite and non-negative".into()));
        }
        if !(self.certainty_decay > 0.0 && self.certainty_decay <= 1.0) {
            return Err(Error::Config("certainty_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Per-step discount `exp(-2 kappa / horizon)`.
    pub fn discount(&self, kappa: usize, horizon: usize) -> f64 {
        (-2.0 * kappa as f64 / horizon as f64).exp()
    }
}

/// Maps after one predicted step.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedStep {
    pub position: Cell,
    pub prob: ProbabilityMap,
    pub certainty: CertaintyMap,
}

/// Robot position at predicted step `kappa` (1-based); the robot holds its
/// last cell once the plan runs out.
fn position_at(plan: &TrajectoryPlan, kappa: usize) -> Cell {
    if plan.cells.is_empty() {
        plan.start
    } else {
        plan.cells[(kappa - 1).min(plan.cells.len() - 1)]
    }
}

fn predicted_observations(
    prob: &ProbabilityMap,
    at: Cell,
    disc: &[DiscOffset],
    sensor: &SensorModel,
) -> Vec<Observation> {
    let mut out = Vec::with_capacity(disc.len());
    for off in disc {
        let cell = at.offset(off.dx, off.dy);
        if !in_bounds(prob.width(), prob.height(), cell) {
            continue;
        }
        let d = sensor.detectability(off.distance);
        if d <= 0.0 {
            continue;
        }
        out.push(Observation {
            cell,
            observed_state: prob.map_state(cell),
            detectability: d,
        });
    }
    out
}

/// Rolls copies of the maps along the plan for `horizon` steps, assuming
/// every future reading equals the current most likely state.
pub fn predict_maps(
    prob: &ProbabilityMap,
    certainty: &CertaintyMap,
    plan: &TrajectoryPlan,
    sensor: &SensorModel,
    horizon: usize,
    decay: f64,
) -> Vec<PredictedStep> {
    let disc = disc_offsets(sensor.delta_max);
    let mut p = prob.clone();
    let mut z = certainty.clone();
    let mut out = Vec::with_capacity(horizon);
    for kappa in 1..=horizon {
        let at = position_at(plan, kappa);
        let obs = predicted_observations(&p, at, &disc, sensor);
        p.bayes_update(&obs, sensor);
        z.update(&obs, decay);
        out.push(PredictedStep {
            position: at,
            prob: p.clone(),
            certainty: z.clone(),
        });
    }
    out
}

/// Discounted cost (lower is better) of following `plan` for `horizon`
/// steps: expected non-detection over the sensor disc, minus certainty
/// gain, minus a rescue reward for entering near-certain human cells, plus
/// an exponential penalty for entering likely obstacles.
pub fn grade_trajectory_stochastic(
    plan: &TrajectoryPlan,
    prob: &ProbabilityMap,
    certainty: &CertaintyMap,
    sensor: &SensorModel,
    params: &StochasticCostParams,
    horizon: usize,
) -> f64 {
    let disc = disc_offsets(sensor.delta_max);
    let steps = predict_maps(prob, certainty, plan, sensor, horizon, params.certainty_decay);
    let human = CellState::Human.index();
    let obstacle = CellState::Obstacle.index();
    let mut cost = 0.0;
    let mut rewarded: Vec<Cell> = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        let kappa = i + 1;
        let (prev_p, prev_z) = if i == 0 {
            (prob, certainty)
        } else {
            (&steps[i - 1].prob, &steps[i - 1].certainty)
        };
        let beta = params.discount(kappa, horizon);
        let at = step.position;
        let mut miss = 1.0;
        let mut gain = 0.0;
        for off in &disc {
            let c = at.offset(off.dx, off.dy);
            if !in_bounds(prob.width(), prob.height(), c) {
                continue;
            }
            let d = sensor.detectability(off.distance);
            if d <= 0.0 {
                continue;
            }
            miss *= 1.0 - prev_p.prob(c, human) * d;
            gain += step.certainty.get(c) - prev_z.get(c);
        }
        cost += params.search_weight * beta * miss;
        cost -= params.uncertainty_weight * beta * gain / disc.len() as f64;
        if kappa <= plan.cells.len() {
            if prev_p.prob(at, human) >= params.rescue_threshold && !rewarded.contains(&at) {
                cost -= params.rescue_weight * beta;
                rewarded.push(at);
            }
            let p_obst = prev_p.prob(at, obstacle);
            cost +=
                params.obstacle_weight * beta * (params.obstacle_sharpness * (p_obst - params.obstacle_offset)).exp();
        }
    }
    cost
}

/// Same decode and solver as the fuzzy planner, minimizing the stochastic
/// cost. The returned weight field is empty: this controller coordinates
/// through predicted maps instead.
#[allow(clippy::too_many_arguments)]
pub fn plan_stochastic(
    position: Cell,
    prob: &ProbabilityMap,
    certainty: &CertaintyMap,
    sensor: &SensorModel,
    controller: &ControllerParams,
    params: &StochasticCostParams,
    pso: &PsoOptions,
) -> Result<PlanOutcome> {
    controller.validate()?;
    params.validate()?;
    let (w, h) = (prob.width(), prob.height());
    let mut spent = Duration::ZERO;
    let objective = |x: &[f64]| {
        let t = Instant::now();
        let p = decode_motion_plan(x, position, w, h, controller);
        let c = grade_trajectory_stochastic(&p, prob, certainty, sensor, params, controller.n_path);
        spent += t.elapsed();
        -c
    };
    let result = particle_swarm_maximize(objective, &controller.bounds(), &[], pso)?;
    Ok(PlanOutcome {
        plan: decode_motion_plan(&result.best, position, w, h, controller),
        grade: result.value,
        weights: WeightField::zeros(w, h),
        evaluations: result.evaluations,
        grading_time: spent,
    })
}

/// Predicted maps at the end of `plan`, used as the base for the next
/// robot in the serial scheme.
pub fn roll_forward(
    prob: &ProbabilityMap,
    certainty: &CertaintyMap,
    plan: &TrajectoryPlan,
    sensor: &SensorModel,
    steps: usize,
    decay: f64,
) -> (ProbabilityMap, CertaintyMap) {
    let mut p = prob.clone();
    let mut z = certainty.clone();
    let disc = disc_offsets(sensor.delta_max);
    for kappa in 1..=steps {
        let obs = predicted_observations(&p, position_at(plan, kappa), &disc, sensor);
        p.bayes_update(&obs, sensor);
        z.update(&obs, decay);
    }
    (p, z)
}

/// One term of the certainty law, exposed for tests.
pub fn predicted_gain(z: f64, d: f64) -> f64 {
    certainty_gain(z, d) - z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flmpc::encode_segments;
    use proptest::prelude::*;

    const START: [f64; 3] = [0.34, 0.33, 0.33];

    fn maps(w: usize, h: usize) -> (ProbabilityMap, CertaintyMap) {
        (ProbabilityMap::new(w, h, &START).unwrap(), CertaintyMap::new(w, h))
    }

    fn set(p: &mut ProbabilityMap, c: Cell, b: [f64; 3]) {
        p.belief_mut(c).copy_from_slice(&b);
    }

    #[test]
    fn predicted_observation_is_map_state() {
        let (mut p, z) = maps(5, 5);
        set(&mut p, Cell::new(2, 2), [0.9, 0.05, 0.05]);
        let plan = TrajectoryPlan {
            start: Cell::new(2, 1),
            cells: vec![Cell::new(2, 2)],
            decision: vec![],
        };
        let steps = predict_maps(&p, &z, &plan, &SensorModel::default(), 1, 0.99);
        assert!(steps[0].prob.prob(Cell::new(2, 2), 0) > 0.9);
        // certainty of the visited cell: gain with d = 1
        assert_eq!(steps[0].certainty.get(Cell::new(2, 2)), 1.0);
    }

    #[test]
    fn unobserved_cells_only_decay() {
        let (p, mut z) = maps(30, 30);
        z.update(
            &[Observation {
                cell: Cell::new(29, 29),
                observed_state: 0,
                detectability: 0.5,
            }],
            1.0,
        );
        let plan = TrajectoryPlan::stay(Cell::new(0, 0));
        let steps = predict_maps(&p, &z, &plan, &SensorModel::default(), 3, 0.99);
        assert!((steps[2].certainty.get(Cell::new(29, 29)) - 0.5 * 0.99f64.powi(3)).abs() < 1e-15);
        assert_eq!(steps[2].prob.belief(Cell::new(29, 29)), &START);
    }

    #[test]
    fn certainty_gain_tracks_detectability() {
        let sensor = SensorModel::default();
        let (p, z) = maps(20, 20);
        let plan = TrajectoryPlan {
            start: Cell::new(10, 10),
            cells: vec![Cell::new(11, 10)],
            decision: vec![],
        };
        let steps = predict_maps(&p, &z, &plan, &sensor, 1, 0.99);
        let d = sensor.detectability(3.0);
        assert!((steps[0].certainty.get(Cell::new(14, 10)) - d).abs() < 1e-15);
        assert!((predicted_gain(0.0, d) - d).abs() < 1e-15);
    }

    #[test]
    fn known_obstacle_dominates() {
        let c = ControllerParams::default();
        let sensor = SensorModel::default();
        let params = StochasticCostParams::default();
        let (mut p, z) = maps(20, 20);
        set(&mut p, Cell::new(11, 10), [0.0, 0.0, 1.0]);
        let into = crate::flmpc::decode_motion_plan(&encode_segments(&[(0, 3)], &c), Cell::new(10, 10), 20, 20, &c);
        let away = crate::flmpc::decode_motion_plan(&encode_segments(&[(4, 3)], &c), Cell::new(10, 10), 20, 20, &c);
        let a = grade_trajectory_stochastic(&into, &p, &z, &sensor, &params, c.n_path);
        let b = grade_trajectory_stochastic(&away, &p, &z, &sensor, &params, c.n_path);
        assert!(a > b + 100.0, "{a} vs {b}");
        assert!(a.is_finite());
    }

    #[test]
    fn heads_for_a_certain_human() {
        let c = ControllerParams {
            n_p: 1,
            n_travel: 3,
            n_path: 3,
            ..ControllerParams::default()
        };
        let sensor = SensorModel::default();
        let params = StochasticCostParams::default();
        let (mut p, z) = maps(9, 9);
        set(&mut p, Cell::new(6, 4), [0.01, 0.98, 0.01]);
        let pso = PsoOptions {
            seed: 3,
            ..PsoOptions::default()
        };
        let out = plan_stochastic(Cell::new(3, 4), &p, &z, &sensor, &c, &params, &pso).unwrap();
        assert_eq!(out.plan.cells.last(), Some(&Cell::new(6, 4)), "{:?}", out.plan.cells);
        let again = plan_stochastic(Cell::new(3, 4), &p, &z, &sensor, &c, &params, &pso).unwrap();
        assert_eq!(out.plan, again.plan);
    }

    #[test]
    fn single_term_isolation() {
        let c = ControllerParams::default();
        let sensor = SensorModel::default();
        let only_obstacle = StochasticCostParams {
            search_weight: 0.0,
            uncertainty_weight: 0.0,
            rescue_weight: 0.0,
            ..StochasticCostParams::default()
        };
        let (p, z) = maps(20, 20);
        let plan = crate::flmpc::decode_motion_plan(&encode_segments(&[(0, 2)], &c), Cell::new(5, 5), 20, 20, &c);
        let cost = grade_trajectory_stochastic(&plan, &p, &z, &sensor, &only_obstacle, c.n_path);
        // the second cell was already seen from the first, so its belief moved
        let steps = predict_maps(&p, &z, &plan, &sensor, 1, 0.99);
        let p2 = steps[0].prob.prob(plan.cells[1], CellState::Obstacle.index());
        assert!(p2 < 0.33);
        let expected = only_obstacle.discount(1, c.n_path) * (20.0f64 * (0.33 - 0.5)).exp()
            + only_obstacle.discount(2, c.n_path) * (20.0 * (p2 - 0.5)).exp();
        assert!((cost - expected).abs() < 1e-9, "{cost} vs {expected}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]
        #[test]
        fn obstacle_term_is_monotone(extra in 0.0f64..0.3, x in 0.0f64..1.0) {
            let c = ControllerParams::default();
            let sensor = SensorModel::default();
            let params = StochasticCostParams { search_weight: 0.0, rescue_weight: 0.0, ..StochasticCostParams::default() };
            let (mut p, z) = maps(12, 12);
            let plan = crate::flmpc::decode_motion_plan(&[5.0, x * std::f64::consts::TAU, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], Cell::new(6, 6), 12, 12, &c);
            prop_assume!(!plan.is_empty());
            let base = grade_trajectory_stochastic(&plan, &p, &z, &sensor, &params, c.n_path);
            let target = plan.cells[0];
            set(&mut p, target, [0.34 - extra, 0.33, 0.33 + extra]);
            let after = grade_trajectory_stochastic(&plan, &p, &z, &sensor, &params, c.n_path);
            prop_assert!(after >= base - 1e-12);
            prop_assert!(after.is_finite());
        }
    }
}
