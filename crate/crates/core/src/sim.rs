//! Ground-truth grid world: environment generation, robot motion, rescues
//! and the distance-degraded sensor.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{disc_offsets, Cell, Grid, MOVES8};

/// Ordered set of possible cell states. Indices are stable for a scenario.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStateSpace {
    labels: Vec<String>,
}

impl CellStateSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::Config("a state space needs at least two states".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Config(format!("duplicate state label `{l}`")));
            }
        }
        Ok(CellStateSpace { labels })
    }

    /// `{empty, human, obstacle}` in that order.
    pub fn search_and_rescue() -> Self {
        CellStateSpace {
            labels: CellState::ALL.iter().map(|s| s.label().to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum CellState {
    Empty = 0,
    Human = 1,
    Obstacle = 2,
}

impl CellState {
    pub const ALL: [CellState; 3] = [CellState::Empty, CellState::Human, CellState::Obstacle];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            CellState::Empty => "empty",
            CellState::Human => "human",
            CellState::Obstacle => "obstacle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: usize,
    pub position: Cell,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveOutcome {
    Moved,
    Canceled,
    Rescued,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub width: usize,
    pub height: usize,
    pub humans: usize,
    pub obstacle_density: f64,
    pub robots: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    truth: Grid<CellState>,
    robots: Vec<RobotState>,
    seed: u64,
}

const OBSTACLE_ATTEMPTS: usize = 20;
const PLACEMENT_ATTEMPTS: usize = 50;

/// Builds a random environment. Obstacles are independent per-cell coin
/// flips; humans and robots go on distinct empty cells, and placements that
/// leave a human unreachable from every robot are redrawn.
pub fn generate_environment(config: &EnvironmentConfig, seed: u64) -> Result<Environment> {
    let EnvironmentConfig {
        width,
        height,
        humans,
        obstacle_density,
        robots,
    } = *config;
    if width == 0 || height == 0 {
        return Err(Error::Config("grid dimensions must be positive".into()));
    }
    if robots == 0 {
        return Err(Error::Config("at least one robot is required".into()));
    }
    if !(0.0..1.0).contains(&obstacle_density) {
        return Err(Error::Config(format!(
            "obstacle density must lie in [0, 1), got {obstacle_density}"
        )));
    }
    let cells = width * height;
    let expected_obstacles = obstacle_density * cells as f64;
    if cells as f64 <= (humans + robots) as f64 + expected_obstacles {
        return Err(Error::Config(format!(
            "{width}x{height} grid cannot hold {humans} humans, {robots} robots and ~{expected_obstacles:.0} obstacles"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..OBSTACLE_ATTEMPTS {
        let mut truth = Grid::from_fn(width, height, |_| {
            if rng.gen::<f64>() < obstacle_density {
                CellState::Obstacle
            } else {
                CellState::Empty
            }
        });
        let free: Vec<usize> = (0..cells)
            .filter(|&i| truth.as_slice()[i] == CellState::Empty)
            .collect();
        if free.len() < humans + robots {
            continue;
        }
        for _ in 0..PLACEMENT_ATTEMPTS {
            let picks = sample(&mut rng, free.len(), humans + robots).into_vec();
            let human_cells: Vec<Cell> = picks[..humans].iter().map(|&p| truth.cell_at(free[p])).collect();
            let mut robot_cells: Vec<Cell> = picks[humans..].iter().map(|&p| truth.cell_at(free[p])).collect();
            // ids follow row-major order, matching the text format
            robot_cells.sort_by_key(|c| (c.y, c.x));
            let reach = reachable_from(&truth, &robot_cells);
            if human_cells.iter().all(|&h| reach[h]) {
                for &h in &human_cells {
                    truth[h] = CellState::Human;
                }
                let robots = robot_cells
                    .into_iter()
                    .enumerate()
                    .map(|(id, position)| RobotState { id, position })
                    .collect();
                return Ok(Environment { truth, robots, seed });
            }
        }
    }
    Err(Error::Config(format!(
        "could not place {humans} reachable humans and {robots} robots at obstacle density {obstacle_density}"
    )))
}

/// 8-connected flood fill over non-obstacle cells.
fn reachable_from(truth: &Grid<CellState>, starts: &[Cell]) -> Grid<bool> {
    let mut seen = Grid::new(truth.width(), truth.height(), false);
    let mut queue: VecDeque<Cell> = VecDeque::new();
    for &s in starts {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(c) = queue.pop_front() {
        for (dx, dy) in MOVES8 {
            let n = c.offset(dx, dy);
            if truth.contains(n) && !seen[n] && truth[n] != CellState::Obstacle {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    seen
}

impl Environment {
    pub fn new(truth: Grid<CellState>, robots: Vec<RobotState>, seed: u64) -> Result<Self> {
        for r in &robots {
            match truth.get(r.position) {
                None => return Err(Error::Config(format!("robot {} outside the grid", r.id))),
                Some(CellState::Obstacle) => {
                    return Err(Error::Config(format!("robot {} starts on an obstacle", r.id)))
                }
                _ => {}
            }
        }
        Ok(Environment { truth, robots, seed })
    }

    pub fn width(&self) -> usize {
        self.truth.width()
    }

    pub fn height(&self) -> usize {
        self.truth.height()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn truth(&self) -> &Grid<CellState> {
        &self.truth
    }

    pub fn state(&self, cell: Cell) -> Option<CellState> {
        self.truth.get(cell).copied()
    }

    pub fn robots(&self) -> &[RobotState] {
        &self.robots
    }

    pub fn robot(&self, id: usize) -> Option<&RobotState> {
        self.robots.iter().find(|r| r.id == id)
    }

    pub fn humans_remaining(&self) -> usize {
        self.truth.iter().filter(|&&s| s == CellState::Human).count()
    }

    /// Moves a robot one cell (or keeps it in place). Obstacles cancel the
    /// move; entering a human's cell rescues them and empties the cell.
    pub fn step_robot(&mut self, robot_id: usize, target: Cell) -> Result<MoveOutcome> {
        let idx = self
            .robots
            .iter()
            .position(|r| r.id == robot_id)
            .ok_or_else(|| Error::Contract(format!("no robot with id {robot_id}")))?;
        let from = self.robots[idx].position;
        if !from.is_adjacent_or_same(target) {
            return Err(Error::Contract(format!(
                "robot {robot_id} cannot move from {from:?} to non-adjacent {target:?}"
            )));
        }
        let Some(state) = self.truth.get(target).copied() else {
            return Ok(MoveOutcome::Canceled);
        };
        match state {
            CellState::Obstacle => Ok(MoveOutcome::Canceled),
            CellState::Human => {
                self.truth[target] = CellState::Empty;
                self.robots[idx].position = target;
                Ok(MoveOutcome::Rescued)
            }
            CellState::Empty => {
                self.robots[idx].position = target;
                Ok(MoveOutcome::Moved)
            }
        }
    }

    /// Plain-text grid: a `W H` header, then `H` rows of `W` characters
    /// (`.` empty, `H` human, `#` obstacle, `R` robot start on an empty cell).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.width(), self.height());
        for y in 0..self.height() {
            for x in 0..self.width() {
                let c = Cell::new(x as i32, y as i32);
                let ch = if self.robots.iter().any(|r| r.position == c) {
                    'R'
                } else {
                    match self.truth[c] {
                        CellState::Empty => '.',
                        CellState::Human => 'H',
                        CellState::Obstacle => '#',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Parses the plain-text grid; robots are numbered in row-major order of
    /// their `R` markers.
    pub fn from_text(text: &str, seed: u64) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: "<grid>".into(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(1, format!("bad header `{header}`: {e}")))?;
        let [width, height] = dims[..] else {
            return Err(parse_err(1, format!("header must be `W H`, got `{header}`")));
        };
        let mut truth = Grid::new(width, height, CellState::Empty);
        let mut robots = Vec::new();
        for y in 0..height {
            let row = lines.next().ok_or_else(|| parse_err(y + 2, "missing row".into()))?;
            let chars: Vec<char> = row.chars().collect();
            if chars.len() != width {
                return Err(parse_err(
                    y + 2,
                    format!("expected {width} columns, got {}", chars.len()),
                ));
            }
            for (x, ch) in chars.into_iter().enumerate() {
                let c = Cell::new(x as i32, y as i32);
                truth[c] = match ch {
                    '.' => CellState::Empty,
                    'H' => CellState::Human,
                    '#' => CellState::Obstacle,
                    'R' => {
                        robots.push(RobotState {
                            id: robots.len(),
                            position: c,
                        });
                        CellState::Empty
                    }
                    other => return Err(parse_err(y + 2, format!("unexpected character `{other}`"))),
                };
            }
        }
        Environment::new(truth, robots, seed)
    }
}

/// Distance-degraded observation quality: `max{1 - (delta/delta_max)^2, 0}`.
pub fn detectability(delta: f64, delta_max: f64) -> f64 {
    (1.0 - (delta / delta_max).powi(2)).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    pub hit_prob: f64,
    pub miss_prob: f64,
    pub blend_floor: f64,
    pub delta_max: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            hit_prob: 0.96,
            miss_prob: 0.02,
            blend_floor: 0.25,
            delta_max: 6.0,
        }
    }
}

impl SensorModel {
    pub fn validate(&self, n_states: usize) -> Result<()> {
        let total = self.hit_prob + (n_states as f64 - 1.0) * self.miss_prob;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "hit and miss probabilities sum to {total} over {n_states} states, expected 1"
            )));
        }
        if !(self.delta_max > 0.0) {
            return Err(Error::Config("sensor radius must be positive".into()));
        }
        Ok(())
    }

    /// Distance-zero model `p0(o | rho)`.
    #[inline]
    pub fn base_likelihood(&self, observed: usize, true_state: usize) -> f64 {
        if observed == true_state {
            self.hit_prob
        } else {
            self.miss_prob
        }
    }

    /// Penalized likelihood `p0(o | rho) * d + blend_floor * (1 - d)`.
    ///
    /// With three states the row over `o` does not sum to one for `d < 1`
    /// (the blend constant corresponds to four outcomes). Bayesian updates
    /// use it as is; [`SensorModel::sample`] renormalizes.
    #[inline]
    pub fn likelihood(&self, observed: usize, true_state: usize, d: f64) -> f64 {
        self.base_likelihood(observed, true_state) * d + self.blend_floor * (1.0 - d)
    }

    pub fn detectability(&self, delta: f64) -> f64 {
        detectability(delta, self.delta_max)
    }

    /// Draws an observation for a cell whose true state is `true_state`,
    /// from the normalized penalized row.
    pub fn sample<R: Rng + ?Sized>(&self, true_state: usize, d: f64, n_states: usize, rng: &mut R) -> usize {
        let total: f64 = (0..n_states).map(|o| self.likelihood(o, true_state, d)).sum();
        let mut u = rng.gen::<f64>() * total;
        for o in 0..n_states {
            u -= self.likelihood(o, true_state, d);
            if u < 0.0 {
                return o;
            }
        }
        n_states - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cell: Cell,
    pub observed_state: usize,
    pub detectability: f64,
}

/// Observes every cell with positive detectability around `position`
/// (row-major over the disc).
pub fn sense<R: Rng + ?Sized>(
    env: &Environment,
    position: Cell,
    sensor: &SensorModel,
    rng: &mut R,
) -> Vec<Observation> {
    let mut out = Vec::new();
    for off in disc_offsets(sensor.delta_max) {
        let cell = position.offset(off.dx, off.dy);
        let Some(state) = env.state(cell) else { continue };
        let d = sensor.detectability(off.distance);
        if d <= 0.0 {
            continue;
        }
        let observed_state = sensor.sample(state.index(), d, CellState::COUNT, rng);
        out.push(Observation {
            cell,
            observed_state,
            detectability: d,
        });
    }
    out
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes several identifiers into one well-spread 64-bit seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Dedicated sensing stream for one robot at one time step.
pub fn sensing_rng(seed: u64, robot_id: usize, step: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5E75E, robot_id as u64, u64::from(step)]))
}
