//! Central mission loop. Every round the robots re-plan one after another
//! in ascending id, each seeing the weight fields the others registered
//! most recently; then all robots execute their plans step by step, sensing
//! after each move, and the shared maps absorb the round's readings.

use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::belief::{quantize, CertaintyMap, FuzzyLayer, FuzzyMapSet, ProbabilityMap, UncertaintyModel};
use crate::error::{Error, Result};
use crate::flmpc::{plan, ControllerParams, PlanOutcome, PlanningInputs, TrajectoryPlan, WeightField};
use crate::grid::{Cell, Grid};
use crate::log::{encode_hex, LogEvent, LogHeader, MissionLog};
use crate::membership::MembershipFunctionBank;
use crate::optim::{GaOptions, PsoOptions};
use crate::parent::{ParentLayer, ParentParams};
use crate::sim::{mix_seed, sense, sensing_rng, CellState, Environment, MoveOutcome, Observation, SensorModel};
use crate::smpc::{plan_stochastic, roll_forward, StochasticCostParams};

pub const LOG_FORMAT: u32 = 1;

/// Belief a rescued human's cell is reset to.
const RESCUED_BELIEF: [f64; 3] = [0.98, 0.01, 0.01];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Single-level fuzzy-logic MPC.
    #[default]
    Flmpc,
    /// Stochastic-cost MPC baseline.
    Smpc,
    /// Fuzzy-logic MPC under the cluster-routing parent layer.
    Bilevel,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Flmpc => "flmpc",
            ControllerKind::Smpc => "smpc",
            ControllerKind::Bilevel => "bilevel",
        }
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flmpc" => Ok(ControllerKind::Flmpc),
            "smpc" => Ok(ControllerKind::Smpc),
            "bilevel" => Ok(ControllerKind::Bilevel),
            other => Err(Error::Config(format!(
                "unknown controller '{other}' (expected flmpc, smpc or bilevel)"
            ))),
        }
    }
}

/// Floor of 500 steps shared across the team.
pub fn budget_for(robots: usize) -> u32 {
    (500 / robots.max(1)) as u32
}

/// Everything a mission needs besides the environment. In scenario files
/// the controller and budget come from the scenario, so they are not
/// serialized here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionConfig {
    #[serde(skip)]
    pub controller: ControllerKind,
    pub sensor: SensorModel,
    pub memberships: MembershipFunctionBank,
    pub uncertainty: UncertaintyModel,
    pub flmpc: ControllerParams,
    pub smpc: StochasticCostParams,
    pub parent: ParentParams,
    pub pso: PsoOptions,
    pub ga: GaOptions,
    pub initial_belief: Vec<f64>,
    pub replan_period: u32,
    #[serde(skip)]
    pub budget_steps: u32,
    /// Uncertainty snapshot cadence in steps; 0 logs only the final map.
    pub map_snapshot_every: u32,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            controller: ControllerKind::Flmpc,
            sensor: SensorModel::default(),
            memberships: MembershipFunctionBank::default(),
            uncertainty: UncertaintyModel::default(),
            flmpc: ControllerParams::default(),
            smpc: StochasticCostParams::default(),
            parent: ParentParams::default(),
            pso: PsoOptions::default(),
            ga: GaOptions::default(),
            initial_belief: vec![0.34, 0.33, 0.33],
            replan_period: 5,
            budget_steps: budget_for(3),
            map_snapshot_every: 0,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replan_period == 0 {
            return Err(Error::Config("replan_period must be positive".into()));
        }
        if self.initial_belief.len() != CellState::COUNT {
            return Err(Error::Config(format!(
                "initial_belief needs {} entries",
                CellState::COUNT
            )));
        }
        self.sensor.validate(CellState::COUNT)?;
        self.flmpc.validate()?;
        self.smpc.validate()?;
        self.pso.validate()?;
        if self.controller == ControllerKind::Bilevel {
            self.parent.validate()?;
            self.ga.validate()?;
        }
        Ok(())
    }
}

/// Wall-clock spent grading candidates. Kept out of the log so logs stay
/// reproducible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub grading_secs: f64,
    pub evaluations: u64,
    pub plans: u64,
}

impl TimingStats {
    pub fn record(&mut self, spent: Duration, evaluations: usize) {
        self.grading_secs += spent.as_secs_f64();
        self.evaluations += evaluations as u64;
        self.plans += 1;
    }

    pub fn per_candidate_secs(&self) -> f64 {
        if self.evaluations == 0 {
            0.0
        } else {
            self.grading_secs / self.evaluations as f64
        }
    }

    pub fn merge(&mut self, other: &TimingStats) {
        self.grading_secs += other.grading_secs;
        self.evaluations += other.evaluations;
        self.plans += other.plans;
    }
}

/// Per cell, own weight minus the strongest claim of any other robot,
/// clamped at zero.
pub fn cooperative_weights(own: &WeightField, others: &[&WeightField]) -> WeightField {
    let grid = own.grid();
    let out = Grid::from_fn(grid.width(), grid.height(), |c| {
        let claim = others.iter().map(|o| o.get(c)).fold(0.0, f64::max);
        crate::flmpc::cooperative_weight(grid[c], claim)
    });
    WeightField::from_grid(out)
}

pub struct MissionState {
    pub config: MissionConfig,
    pub env: Environment,
    pub prob: ProbabilityMap,
    pub maps: FuzzyMapSet,
    pub certainty: CertaintyMap,
    pub plans: Vec<TrajectoryPlan>,
    pub fields: Vec<WeightField>,
    /// Registration number of each robot's field; 0 = nothing registered.
    pub versions: Vec<u64>,
    pub k: u32,
    pub log: MissionLog,
    pub timing: TimingStats,
    pub parent: Option<ParentLayer>,
    version_counter: u64,
    last_snapshot: u32,
    finished: bool,
}

impl MissionState {
    /// Initial readings at step 0, then the first map update.
    pub fn new(env: Environment, config: MissionConfig) -> Result<Self> {
        config.validate()?;
        let (w, h) = (env.width(), env.height());
        let n = env.robots().len();
        let prob = ProbabilityMap::new(w, h, &config.initial_belief)?;
        let maps = FuzzyMapSet::initial(&prob, &config.memberships)?;
        let parent = match config.controller {
            ControllerKind::Bilevel => Some(ParentLayer::new(
                w,
                h,
                config.parent.clone(),
                config.ga.with_seed(mix_seed(&[env.seed(), config.ga.seed])),
            )?),
            _ => None,
        };
        let log = MissionLog::new(LogHeader {
            format: LOG_FORMAT,
            controller: config.controller.as_str().to_string(),
            seed: env.seed(),
            width: w,
            height: h,
            robots: n,
            humans: env.humans_remaining(),
            budget_steps: config.budget_steps,
            replan_period: config.replan_period,
        });
        let mut state = MissionState {
            prob,
            maps,
            certainty: CertaintyMap::new(w, h),
            plans: env.robots().iter().map(|r| TrajectoryPlan::stay(r.position)).collect(),
            fields: vec![WeightField::zeros(w, h); n],
            versions: vec![0; n],
            k: 0,
            log,
            timing: TimingStats::default(),
            parent,
            version_counter: 0,
            last_snapshot: 0,
            finished: false,
            env,
            config,
        };
        let mut obs = Vec::new();
        for r in state.env.robots() {
            let mut rng = sensing_rng(state.env.seed(), r.id, 0);
            obs.extend(sense(&state.env, r.position, &state.config.sensor, &mut rng));
        }
        state.certainty.update(&obs, state.config.smpc.certainty_decay);
        state.absorb(&obs, &[], 0)?;
        if state.env.humans_remaining() == 0 || state.config.budget_steps == 0 {
            state.finish();
        }
        Ok(state)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn positions(&self) -> Vec<Cell> {
        self.env.robots().iter().map(|r| r.position).collect()
    }

    /// Per-cell maximum over every other robot's registered field, with the
    /// (robot, version) pairs read.
    pub fn others_max(&self, robot: usize) -> (Option<Grid<f64>>, Vec<(usize, u64)>) {
        let mut read = Vec::new();
        let mut acc: Option<Grid<f64>> = None;
        for (j, field) in self.fields.iter().enumerate() {
            if j == robot || self.versions[j] == 0 {
                continue;
            }
            read.push((j, self.versions[j]));
            match acc.as_mut() {
                None => acc = Some(field.grid().clone()),
                Some(g) => {
                    for (a, &b) in g.as_mut_slice().iter_mut().zip(field.grid().as_slice()) {
                        *a = a.max(b);
                    }
                }
            }
        }
        (acc, read)
    }

    fn absorb(&mut self, obs: &[Observation], rescued: &[Cell], steps: u32) -> Result<()> {
        self.prob.bayes_update(obs, &self.config.sensor);
        for &c in rescued {
            self.prob.belief_mut(c).copy_from_slice(&RESCUED_BELIEF);
        }
        self.maps.update(
            &self.prob,
            obs,
            &self.config.sensor,
            &self.config.memberships,
            &self.config.uncertainty,
            steps,
        )
    }

    fn snapshot(&mut self) {
        let bytes = quantize(self.maps.layer(FuzzyLayer::Uncertainty));
        self.log.push(LogEvent::Map {
            k: self.k,
            uncertainty: encode_hex(&bytes),
        });
        self.last_snapshot = self.k;
    }

    fn finish(&mut self) {
        self.snapshot();
        let humans = self.log.header.humans;
        let remaining = self.env.humans_remaining();
        self.log.push(LogEvent::End {
            k: self.k,
            complete: remaining == 0,
            rescued: humans - remaining,
        });
        self.finished = true;
    }

    fn register(&mut self, robot: usize, outcome: PlanOutcome, read: Vec<(usize, u64)>) {
        self.version_counter += 1;
        self.log.push(LogEvent::Replan {
            k: self.k,
            robot,
            version: self.version_counter,
            read,
            grade: outcome.grade,
            plan_len: outcome.plan.len(),
        });
        self.timing.record(outcome.grading_time, outcome.evaluations);
        self.versions[robot] = self.version_counter;
        self.fields[robot] = outcome.weights;
        self.plans[robot] = outcome.plan;
    }

    fn pso_for(&self, robot: usize) -> PsoOptions {
        self.config.pso.with_seed(mix_seed(&[
            self.env.seed(),
            self.config.pso.seed,
            robot as u64,
            u64::from(self.k),
        ]))
    }

    fn plan_fuzzy(&mut self, hlc: &[Option<Grid<f64>>]) -> Result<()> {
        for i in 0..self.env.robots().len() {
            let (others, read) = self.others_max(i);
            let inputs = PlanningInputs {
                maps: &self.maps,
                others: others.as_ref(),
                hlc: hlc.get(i).and_then(Option::as_ref),
            };
            let position = self.env.robots()[i].position;
            let outcome = plan(position, &inputs, &self.config.flmpc, &self.pso_for(i))?;
            self.register(i, outcome, read);
        }
        Ok(())
    }

    fn plan_stochastic(&mut self) -> Result<()> {
        let mut base = (self.prob.clone(), self.certainty.clone());
        let steps = self.config.replan_period as usize;
        for i in 0..self.env.robots().len() {
            let position = self.env.robots()[i].position;
            let outcome = plan_stochastic(
                position,
                &base.0,
                &base.1,
                &self.config.sensor,
                &self.config.flmpc,
                &self.config.smpc,
                &self.pso_for(i),
            )?;
            base = roll_forward(
                &base.0,
                &base.1,
                &outcome.plan,
                &self.config.sensor,
                steps,
                self.config.smpc.certainty_decay,
            );
            let read = (0..i).map(|j| (j, self.versions[j])).collect();
            self.register(i, outcome, read);
        }
        Ok(())
    }
}

/// One round: (parent pass), serial re-planning, up to `replan_period`
/// interleaved moves with sensing, then the map update.
pub fn mission_step(state: &mut MissionState) -> Result<()> {
    if state.finished {
        return Err(Error::Contract("mission already finished".into()));
    }
    match state.config.controller {
        ControllerKind::Flmpc => state.plan_fuzzy(&[])?,
        ControllerKind::Smpc => state.plan_stochastic()?,
        ControllerKind::Bilevel => {
            let positions = state.positions();
            let mut layer = state.parent.take().expect("bilevel mission has a parent layer");
            let replans = layer.replans;
            let states: Vec<_> = layer.clusters.iter().map(|c| (c.id, c.state)).collect();
            let hlc = layer.round(state.k, &state.maps, &positions);
            let changed = layer.replans != replans
                || states != layer.clusters.iter().map(|c| (c.id, c.state)).collect::<Vec<_>>();
            if changed {
                state.log.push(LogEvent::Clusters {
                    k: state.k,
                    clusters: layer.dump(),
                });
            }
            state.parent = Some(layer);
            state.plan_fuzzy(&hlc?)?;
        }
    }

    let n = state.env.robots().len();
    let period = state.config.replan_period.min(state.config.budget_steps - state.k);
    let mut idle = vec![false; n];
    let mut obs_all = Vec::new();
    let mut rescued = Vec::new();
    let mut executed = 0;
    for t in 0..period {
        let now = state.k + t + 1;
        let mut step_obs = Vec::new();
        for (i, is_idle) in idle.iter_mut().enumerate() {
            let id = state.env.robots()[i].id;
            let here = state.env.robots()[i].position;
            let target = state.plans[i].cells.get(t as usize).copied();
            if let (Some(target), false) = (target, *is_idle) {
                match state.env.step_robot(id, target)? {
                    MoveOutcome::Moved => state.log.push(LogEvent::Move {
                        k: now,
                        robot: id,
                        cell: target,
                    }),
                    MoveOutcome::Rescued => {
                        rescued.push(target);
                        state.log.push(LogEvent::Rescue {
                            k: now,
                            robot: id,
                            cell: target,
                        });
                    }
                    MoveOutcome::Canceled => {
                        *is_idle = true;
                        state.log.push(LogEvent::Cancel {
                            k: now,
                            robot: id,
                            cell: target,
                        });
                    }
                }
            } else if target.is_none() {
                *is_idle = true;
            }
            let position = state.env.robots()[i].position;
            debug_assert!(position == here || position.is_adjacent_or_same(here));
            let mut rng = sensing_rng(state.env.seed(), id, now);
            step_obs.extend(sense(&state.env, position, &state.config.sensor, &mut rng));
        }
        state.certainty.update(&step_obs, state.config.smpc.certainty_decay);
        obs_all.extend(step_obs);
        executed += 1;
        if state.env.humans_remaining() == 0 {
            break;
        }
    }
    state.absorb(&obs_all, &rescued, executed)?;
    state.k += executed;

    let every = state.config.map_snapshot_every;
    if every > 0 && state.k / every > state.last_snapshot / every {
        state.snapshot();
    }
    if state.env.humans_remaining() == 0 || state.k >= state.config.budget_steps {
        state.finish();
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MissionOutput {
    pub log: MissionLog,
    pub timing: TimingStats,
    pub final_uncertainty: Grid<f64>,
    pub rejected_updates: u64,
}

/// Runs rounds until every human is rescued or the budget is spent.
pub fn run_mission(env: Environment, config: MissionConfig) -> Result<MissionOutput> {
    let mut state = MissionState::new(env, config)?;
    while !state.is_finished() {
        mission_step(&mut state)?;
    }
    Ok(MissionOutput {
        final_uncertainty: state.maps.layer(FuzzyLayer::Uncertainty).clone(),
        rejected_updates: state.prob.rejected_updates(),
        timing: state.timing,
        log: state.log,
    })
}

/// Mission without the parent layer (fuzzy or stochastic controller).
pub fn run_single_level_mission(env: Environment, config: &MissionConfig, budget_steps: u32) -> Result<MissionLog> {
    if budget_steps == 0 {
        return Err(Error::Config("budget_steps must be positive".into()));
    }
    if config.controller == ControllerKind::Bilevel {
        return Err(Error::Config(
            "single-level mission cannot use the bilevel controller".into(),
        ));
    }
    let config = MissionConfig {
        budget_steps,
        ..config.clone()
    };
    Ok(run_mission(env, config)?.log)
}
