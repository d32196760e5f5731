//! Batch experiments: scenario files, paired runs over seeds, milestone
//! win/advantage statistics and artifact export. Reports are computed from
//! logs alone, so a directory of logs regenerates every table.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::belief::{pgm_from_bytes, UncertaintyModel};
use crate::coordination::{run_mission, ControllerKind, MissionConfig, TimingStats};
use crate::error::{Error, Result};
use crate::grid::Cell;
use crate::log::{LogEvent, MissionLog};
use crate::optim::PsoOptions;
use crate::parent::ParentParams;
use crate::sim::{generate_environment, EnvironmentConfig};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetRule {
    /// Total steps shared by the team: budget = total / robots.
    PerRobot(u32),
    Fixed(u32),
}

impl BudgetRule {
    pub fn steps(self, robots: usize) -> u32 {
        match self {
            BudgetRule::PerRobot(total) => total / robots.max(1) as u32,
            BudgetRule::Fixed(n) => n,
        }
    }
}

/// A complete experiment description. Every field is required in the file
/// and the effective scenario is written next to the results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub environment: EnvironmentConfig,
    pub controllers: Vec<ControllerKind>,
    pub seeds: Vec<u64>,
    pub budget: BudgetRule,
    pub mission: MissionConfig,
}

impl Scenario {
    /// 40x40 grid, 3 robots, 10 humans, fuzzy vs. stochastic controller.
    /// Both controllers share a reduced 20x20 swarm so the stochastic runs
    /// stay affordable.
    pub fn case_study_1() -> Self {
        let mut s = Scenario {
            version: SCENARIO_VERSION,
            name: "case-study-1".into(),
            environment: EnvironmentConfig {
                width: 40,
                height: 40,
                humans: 10,
                obstacle_density: 0.1,
                robots: 3,
            },
            controllers: vec![ControllerKind::Flmpc, ControllerKind::Smpc],
            seeds: (0..20).collect(),
            budget: BudgetRule::PerRobot(500),
            mission: MissionConfig {
                pso: PsoOptions {
                    swarm_size: 20,
                    iterations: 20,
                    ..PsoOptions::default()
                },
                map_snapshot_every: 25,
                ..MissionConfig::default()
            },
        };
        s.sync_budget();
        s
    }

    /// 120x120 grid in nine 40x40 clusters, 3 robots, single- vs. bi-level.
    pub fn case_study_2() -> Self {
        let mut s = Scenario {
            version: SCENARIO_VERSION,
            name: "case-study-2".into(),
            environment: EnvironmentConfig {
                width: 120,
                height: 120,
                humans: 10,
                obstacle_density: 0.1,
                robots: 3,
            },
            controllers: vec![ControllerKind::Flmpc, ControllerKind::Bilevel],
            seeds: (0..10).collect(),
            budget: BudgetRule::Fixed(1500),
            mission: MissionConfig {
                uncertainty: UncertaintyModel::with_divisor(100.0),
                parent: ParentParams {
                    cluster_side: 40,
                    ..ParentParams::default()
                },
                map_snapshot_every: 50,
                ..MissionConfig::default()
            },
        };
        s.sync_budget();
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::Config(format!(
                "scenario version {} is not supported (expected {SCENARIO_VERSION})",
                self.version
            )));
        }
        if self.controllers.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "scenario needs at least one controller and one seed".into(),
            ));
        }
        for &c in &self.controllers {
            self.config_for(c).validate()?;
        }
        Ok(())
    }

    /// Keeps the embedded mission budget equal to the scenario rule.
    fn sync_budget(&mut self) {
        self.mission.budget_steps = self.budget_steps();
    }

    pub fn budget_steps(&self) -> u32 {
        self.budget.steps(self.environment.robots)
    }

    pub fn config_for(&self, controller: ControllerKind) -> MissionConfig {
        MissionConfig {
            controller,
            budget_steps: self.budget_steps(),
            ..self.mission.clone()
        }
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let mut scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        scenario.sync_budget();
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub controller: ControllerKind,
    pub seed: u64,
    pub log: MissionLog,
    pub timing: TimingStats,
}

/// One mission per (controller, seed) on the environment generated from
/// the seed, so controllers are paired on identical worlds. Runs in
/// parallel on `threads` workers; results come back in controller-major,
/// seed order regardless of scheduling.
pub fn run_batch(scenario: &Scenario, threads: usize) -> Result<Vec<RunRecord>> {
    scenario.validate()?;
    let jobs: Vec<(ControllerKind, u64)> = scenario
        .controllers
        .iter()
        .flat_map(|&c| scenario.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(controller, seed)| {
                let env = generate_environment(&scenario.environment, seed)?;
                let out = run_mission(env, scenario.config_for(controller))?;
                Ok(RunRecord {
                    controller,
                    seed,
                    log: out.log,
                    timing: out.timing,
                })
            })
            .collect()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Advantage {
    Steps(u32),
    /// Only the winner reached the milestone within the budget.
    Infinite,
}

impl Serialize for Advantage {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Advantage::Steps(n) => s.serialize_u32(*n),
            Advantage::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Advantage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Advantage::Steps(n)),
            Raw::S(s) if s == "inf" => Ok(Advantage::Infinite),
            Raw::S(s) => Err(serde::de::Error::custom(format!("bad advantage '{s}'"))),
        }
    }
}

impl fmt::Display for Advantage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Advantage::Steps(n) => write!(f, "{n}"),
            Advantage::Infinite => write!(f, "inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilestoneOutcome {
    pub seed: u64,
    pub milestone: usize,
    pub step_a: Option<u32>,
    pub step_b: Option<u32>,
    /// `None` when neither controller reached the milestone.
    pub winner: Option<Winner>,
    pub advantage: Option<Advantage>,
}

/// Advantage histogram bins, shared by both sides.
pub const ADVANTAGE_BINS: [&str; 6] = ["1-9", "10-24", "25-49", "50-99", "100+", "inf"];

fn bin(adv: Advantage) -> usize {
    match adv {
        Advantage::Infinite => 5,
        Advantage::Steps(n) => match n {
            0..=9 => 0,
            10..=24 => 1,
            25..=49 => 2,
            50..=99 => 3,
            _ => 4,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilestoneSummary {
    pub milestone: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// Seeds where neither controller reached the milestone.
    pub unreached: usize,
    pub histogram_a: Vec<usize>,
    pub histogram_b: Vec<usize>,
}

impl MilestoneSummary {
    pub fn decided(&self) -> usize {
        self.wins_a + self.wins_b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinAdvantageReport {
    pub controller_a: String,
    pub controller_b: String,
    pub milestones: Vec<usize>,
    pub bins: Vec<String>,
    pub outcomes: Vec<MilestoneOutcome>,
    pub summary: Vec<MilestoneSummary>,
}

impl WinAdvantageReport {
    pub fn summary_for(&self, milestone: usize) -> Option<&MilestoneSummary> {
        self.summary.iter().find(|s| s.milestone == milestone)
    }

    /// Plain-text table: one row per milestone.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "milestone  {a:>8} wins  {b:>8} wins  ties  unreached   {a} histogram {bins:?}   {b} histogram\n",
            a = self.controller_a,
            b = self.controller_b,
            bins = self.bins,
        );
        for s in &self.summary {
            out.push_str(&format!(
                "{:>9}  {:>13}  {:>13}  {:>4}  {:>9}   {:?}   {:?}\n",
                s.milestone, s.wins_a, s.wins_b, s.ties, s.unreached, s.histogram_a, s.histogram_b
            ));
        }
        out
    }
}

/// Pairs logs by seed and decides each milestone: the earlier controller
/// wins by the step difference, or by an infinite margin when the other
/// never got there.
pub fn compare_controllers(a: &[MissionLog], b: &[MissionLog], milestones: &[usize]) -> Result<WinAdvantageReport> {
    let index = |logs: &[MissionLog], side: &str| -> Result<BTreeMap<u64, usize>> {
        let mut m = BTreeMap::new();
        for (i, l) in logs.iter().enumerate() {
            if m.insert(l.header.seed, i).is_some() {
                return Err(Error::Contract(format!(
                    "seed {} appears twice in {side}",
                    l.header.seed
                )));
            }
        }
        Ok(m)
    };
    let ia = index(a, "A")?;
    let ib = index(b, "B")?;
    if ia.keys().ne(ib.keys()) {
        let only: Vec<u64> = ia
            .keys()
            .filter(|k| !ib.contains_key(k))
            .chain(ib.keys().filter(|k| !ia.contains_key(k)))
            .copied()
            .collect();
        return Err(Error::Contract(format!("unpaired seeds: {only:?}")));
    }
    let name = |logs: &[MissionLog]| logs.first().map(|l| l.header.controller.clone()).unwrap_or_default();
    let mut outcomes = Vec::new();
    for (&seed, &i) in &ia {
        let (la, lb) = (&a[i], &b[ib[&seed]]);
        for &m in milestones {
            let (sa, sb) = (la.milestone(m), lb.milestone(m));
            let (winner, advantage) = match (sa, sb) {
                (None, None) => (None, None),
                (Some(_), None) => (Some(Winner::A), Some(Advantage::Infinite)),
                (None, Some(_)) => (Some(Winner::B), Some(Advantage::Infinite)),
                (Some(x), Some(y)) if x < y => (Some(Winner::A), Some(Advantage::Steps(y - x))),
                (Some(x), Some(y)) if y < x => (Some(Winner::B), Some(Advantage::Steps(x - y))),
                _ => (Some(Winner::Tie), Some(Advantage::Steps(0))),
            };
            outcomes.push(MilestoneOutcome {
                seed,
                milestone: m,
                step_a: sa,
                step_b: sb,
                winner,
                advantage,
            });
        }
    }
    let summary = milestones
        .iter()
        .map(|&m| {
            let mut s = MilestoneSummary {
                milestone: m,
                wins_a: 0,
                wins_b: 0,
                ties: 0,
                unreached: 0,
                histogram_a: vec![0; ADVANTAGE_BINS.len()],
                histogram_b: vec![0; ADVANTAGE_BINS.len()],
            };
            for o in outcomes.iter().filter(|o| o.milestone == m) {
                match (o.winner, o.advantage) {
                    (Some(Winner::A), Some(adv)) => {
                        s.wins_a += 1;
                        s.histogram_a[bin(adv)] += 1;
                    }
                    (Some(Winner::B), Some(adv)) => {
                        s.wins_b += 1;
                        s.histogram_b[bin(adv)] += 1;
                    }
                    (Some(Winner::Tie), _) => s.ties += 1,
                    _ => s.unreached += 1,
                }
            }
            s
        })
        .collect();
    Ok(WinAdvantageReport {
        controller_a: name(a),
        controller_b: name(b),
        milestones: milestones.to_vec(),
        bins: ADVANTAGE_BINS.iter().map(|s| s.to_string()).collect(),
        outcomes,
        summary,
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn log_file_name(controller: &str, seed: u64) -> String {
    format!("{controller}_{seed:04}.jsonl")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub controller: String,
    pub missions: usize,
    pub plans: u64,
    pub evaluations: u64,
    pub grading_secs: f64,
    pub per_candidate_secs: f64,
}

pub fn timing_summary(records: &[RunRecord]) -> Vec<TimingSummary> {
    let mut by: BTreeMap<&str, (usize, TimingStats)> = BTreeMap::new();
    for r in records {
        let e = by.entry(r.controller.as_str()).or_default();
        e.0 += 1;
        e.1.merge(&r.timing);
    }
    by.into_iter()
        .map(|(c, (n, t))| TimingSummary {
            controller: c.to_string(),
            missions: n,
            plans: t.plans,
            evaluations: t.evaluations,
            grading_secs: t.grading_secs,
            per_candidate_secs: t.per_candidate_secs(),
        })
        .collect()
}

/// Writes the effective scenario, every log, and the grading-time summary.
pub fn write_run(records: &[RunRecord], scenario: &Scenario, out_dir: &Path) -> Result<()> {
    write(&out_dir.join("scenario.json"), scenario.to_json())?;
    for r in records {
        write(
            &out_dir.join("logs").join(log_file_name(r.controller.as_str(), r.seed)),
            r.log.to_jsonl(),
        )?;
    }
    let timing = serde_json::to_string_pretty(&timing_summary(records)).expect("timing serializes");
    write(&out_dir.join("timing.json"), timing)
}

/// Reads every `*.jsonl` under `dir`, sorted by file name.
pub fn load_logs(dir: &Path) -> Result<Vec<MissionLog>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| MissionLog::read(p)).collect()
}

/// Splits logs by controller name, keeping file order.
pub fn group_by_controller(logs: Vec<MissionLog>) -> BTreeMap<String, Vec<MissionLog>> {
    let mut out: BTreeMap<String, Vec<MissionLog>> = BTreeMap::new();
    for l in logs {
        out.entry(l.header.controller.clone()).or_default().push(l);
    }
    out
}

/// Every milestone from 1 to the largest human count in the logs.
pub fn all_milestones(logs: &[MissionLog]) -> Vec<usize> {
    let n = logs.iter().map(|l| l.header.humans).max().unwrap_or(0);
    (1..=n).collect()
}

/// Milestone CSV, end-of-mission uncertainty images and, when given, the
/// comparison report.
pub fn export(logs: &[MissionLog], report: Option<&WinAdvantageReport>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut csv = String::from("controller,seed,milestone,step\n");
    let mut summary = String::from("controller,seed,humans,rescued,complete,end_step,explored_fraction\n");
    for l in logs {
        let h = &l.header;
        for m in 1..=h.humans {
            let step = l.milestone(m).map(|s| s.to_string()).unwrap_or_default();
            csv.push_str(&format!("{},{},{},{}\n", h.controller, h.seed, m, step));
        }
        let (end, complete, rescued) = l.end().unwrap_or((0, false, 0));
        let explored = l
            .explored_fraction(EXPLORED_THRESHOLD)
            .map(|f| format!("{f:.6}"))
            .unwrap_or_default();
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            h.controller, h.seed, h.humans, rescued, complete, end, explored
        ));
        if let Some(bytes) = l.final_uncertainty() {
            let p = out_dir.join("maps").join(format!("{}_{:04}.pgm", h.controller, h.seed));
            write(&p, pgm_from_bytes(h.width, h.height, &bytes))?;
            written.push(p);
        }
    }
    for (name, body) in [("milestones.csv", csv), ("missions.csv", summary)] {
        let p = out_dir.join(name);
        write(&p, body)?;
        written.push(p);
    }
    if let Some(r) = report {
        let p = out_dir.join("report.json");
        write(&p, serde_json::to_string_pretty(r).expect("report serializes"))?;
        written.push(p);
        let p = out_dir.join("report.txt");
        write(&p, r.to_table())?;
        written.push(p);
    }
    Ok(written)
}

/// Uncertainty below which a cell counts as explored.
pub const EXPLORED_THRESHOLD: f64 = 0.3;

/// Positions after every step, rebuilt from a log.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub steps: u32,
    /// `positions[k][robot]` after step k (index 0 = start).
    pub positions: Vec<Vec<Cell>>,
    pub rescues: Vec<(u32, usize, Cell)>,
    pub cancels: usize,
    pub replans: usize,
}

/// Rebuilds the per-step trajectory from the start cells of the world the
/// log was recorded on.
pub fn replay(log: &MissionLog, start: &[Cell]) -> Result<Replay> {
    let n = log.header.robots;
    if start.len() != n {
        return Err(Error::Contract(format!("{} start cells for {n} robots", start.len())));
    }
    let end = log.end().map(|(k, _, _)| k).unwrap_or(0);
    let mut changes: Vec<Vec<(usize, Cell)>> = vec![Vec::new(); end as usize + 1];
    let mut rescues = Vec::new();
    let (mut cancels, mut replans) = (0, 0);
    for e in &log.events {
        match e {
            LogEvent::Move { k, robot, cell } | LogEvent::Rescue { k, robot, cell } => {
                if *robot >= n || *k > end {
                    return Err(Error::Contract(format!(
                        "move of robot {robot} at step {k} is out of range"
                    )));
                }
                changes[*k as usize].push((*robot, *cell));
                if matches!(e, LogEvent::Rescue { .. }) {
                    rescues.push((*k, *robot, *cell));
                }
            }
            LogEvent::Cancel { .. } => cancels += 1,
            LogEvent::Replan { .. } => replans += 1,
            _ => {}
        }
    }
    let mut current = start.to_vec();
    let positions = changes
        .iter()
        .map(|step| {
            for &(r, c) in step {
                current[r] = c;
            }
            current.clone()
        })
        .collect();
    Ok(Replay {
        steps: end,
        positions,
        rescues,
        cancels,
        replans,
    })
}
