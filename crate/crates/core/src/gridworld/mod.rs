//! Deterministic grid-worlds: the named layouts, the MetaGrid generator, and
//! the ego-centric observation model.

mod layouts;
mod metagrid;
mod observation;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layouts::{make_named_env, named_layout, NamedEnv};
pub use metagrid::{generate_metagrid, MetaGridSize, BLOCK_SIZE};
pub use observation::{direction_sector, CellKind, ObsDigest, Observation, VIEW_RADIUS, VIEW_SIZE};

/// Reward for reaching the goal, before the per-step penalty.
pub const GOAL_REWARD: f64 = 1.0;
/// Penalty charged on every primitive step, including the goal step.
pub const STEP_PENALTY: f64 = 0.001;
/// Episode cap used by the experiments.
pub const DEFAULT_MAX_EPISODE_STEPS: u32 = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("cannot place {what} at ({row}, {col}): {reason}")]
    Placement {
        what: &'static str,
        row: usize,
        col: usize,
        reason: &'static str,
    },
    #[error("malformed map: {0}")]
    Malformed(String),
    #[error("goal is not reachable from spawn")]
    Unreachable,
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid metagrid size `{0}`")]
    BadSize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

impl FromStr for Pos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, c) = s
            .split_once(',')
            .ok_or_else(|| format!("expected `row,col`, got `{s}`"))?;
        let row = r.trim().parse().map_err(|e| format!("bad row in `{s}`: {e}"))?;
        let col = c.trim().parse().map_err(|e| format!("bad col in `{s}`: {e}"))?;
        Ok(Pos { row, col })
    }
}

/// The four primitive moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn from_index(idx: usize) -> Option<Move> {
        Move::ALL.get(idx).copied()
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Move::Up => (-1, 0),
            Move::Down => (1, 0),
            Move::Left => (0, -1),
            Move::Right => (0, 1),
        }
    }
}

/// A closed rectangular arena with walls, a spawn cell and a goal cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    spawn: Pos,
    goal: Pos,
}

impl GridWorld {
    /// Builds a grid and checks the arena invariants: closed boundary, spawn
    /// and goal on free cells, goal reachable from spawn.
    pub fn new(width: usize, height: usize, walls: Vec<bool>, spawn: Pos, goal: Pos) -> Result<Self, GridError> {
        if width < 3 || height < 3 || walls.len() != width * height {
            return Err(GridError::Malformed(format!(
                "{width}x{height} grid with {} cells",
                walls.len()
            )));
        }
        let grid = GridWorld {
            width,
            height,
            walls,
            spawn,
            goal,
        };
        for r in 0..height {
            for c in 0..width {
                let edge = r == 0 || c == 0 || r + 1 == height || c + 1 == width;
                if edge && !grid.is_wall(Pos::new(r, c)) {
                    return Err(GridError::Malformed(format!("boundary cell ({r}, {c}) is open")));
                }
            }
        }
        grid.check_free("spawn", spawn)?;
        grid.check_free("goal", goal)?;
        if grid.shortest_path_len(spawn, goal).is_none() {
            return Err(GridError::Unreachable);
        }
        Ok(grid)
    }

    fn check_free(&self, what: &'static str, p: Pos) -> Result<(), GridError> {
        if !self.in_bounds(p) {
            return Err(GridError::Placement {
                what,
                row: p.row,
                col: p.col,
                reason: "out of bounds",
            });
        }
        if self.is_wall(p) {
            return Err(GridError::Placement {
                what,
                row: p.row,
                col: p.col,
                reason: "cell is a wall",
            });
        }
        Ok(())
    }

    /// Parses the golden ASCII format: `#` wall, `.` empty, `S` spawn, `G` goal.
    /// A map without `G` needs `goal` to be supplied.
    pub fn from_ascii(text: &str, goal: Option<Pos>) -> Result<Self, GridError> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        let mut walls = Vec::with_capacity(width * height);
        let mut spawn = None;
        let mut map_goal = None;
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(GridError::Malformed(format!("row {r} has ragged width")));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' => {
                        spawn = Some(Pos::new(r, c));
                        walls.push(false)
                    }
                    'G' => {
                        map_goal = Some(Pos::new(r, c));
                        walls.push(false)
                    }
                    other => {
                        return Err(GridError::Malformed(format!(
                            "unexpected character `{other}` at ({r}, {c})"
                        )))
                    }
                }
            }
        }
        let spawn = spawn.ok_or_else(|| GridError::Malformed("no spawn `S`".into()))?;
        let goal = goal
            .or(map_goal)
            .ok_or_else(|| GridError::Malformed("no goal `G`".into()))?;
        GridWorld::new(width, height, walls, spawn, goal)
    }

    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let p = Pos::new(r, c);
                out.push(if p == self.goal {
                    'G'
                } else if p == self.spawn {
                    'S'
                } else if self.is_wall(p) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spawn(&self) -> Pos {
        self.spawn
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        self.walls[p.row * self.width + p.col]
    }

    pub fn index(&self, p: Pos) -> usize {
        p.row * self.width + p.col
    }

    /// Every non-wall cell in row-major order.
    pub fn free_cells(&self) -> Vec<Pos> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| Pos::new(r, c)))
            .filter(|&p| !self.is_wall(p))
            .collect()
    }

    /// Same walls and spawn, different goal.
    pub fn with_goal(&self, goal: Pos) -> Result<Self, GridError> {
        GridWorld::new(self.width, self.height, self.walls.clone(), self.spawn, goal)
    }

    /// The cell reached by `mv`; walls block movement.
    pub fn next_pos(&self, p: Pos, mv: Move) -> Pos {
        let (dr, dc) = mv.delta();
        let r = p.row as isize + dr;
        let c = p.col as isize + dc;
        if r < 0 || c < 0 {
            return p;
        }
        let q = Pos::new(r as usize, c as usize);
        if !self.in_bounds(q) || self.is_wall(q) {
            p
        } else {
            q
        }
    }

    /// BFS distances (4-connectivity) from `from` to every cell; `None` when unreachable.
    pub fn distances_from(&self, from: Pos) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.width * self.height];
        if !self.in_bounds(from) || self.is_wall(from) {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[self.index(from)] = Some(0);
        queue.push_back(from);
        while let Some(p) = queue.pop_front() {
            let d = dist[self.index(p)].unwrap_or(0);
            for mv in Move::ALL {
                let q = self.next_pos(p, mv);
                if dist[self.index(q)].is_none() {
                    dist[self.index(q)] = Some(d + 1);
                    queue.push_back(q);
                }
            }
        }
        dist
    }

    pub fn shortest_path_len(&self, from: Pos, to: Pos) -> Option<u32> {
        if !self.in_bounds(to) {
            return None;
        }
        self.distances_from(from)[self.index(to)]
    }
}

/// One MDP: a grid plus its success threshold and identity.
#[derive(Debug, Clone)]
pub struct Task {
    grid: Arc<GridWorld>,
    pub success_threshold: f64,
    pub task_id: String,
    pub rng_seed: u64,
    pub max_episode_steps: u32,
    obs_cache: Arc<Vec<ObsDigest>>,
}

impl Task {
    pub fn new(grid: GridWorld, success_threshold: f64, task_id: impl Into<String>, rng_seed: u64) -> Self {
        let obs_cache = (0..grid.height())
            .flat_map(|r| (0..grid.width()).map(move |c| Pos::new(r, c)))
            .map(|p| Observation::at(&grid, p).digest())
            .collect();
        Task {
            grid: Arc::new(grid),
            success_threshold,
            task_id: task_id.into(),
            rng_seed,
            max_episode_steps: DEFAULT_MAX_EPISODE_STEPS,
            obs_cache: Arc::new(obs_cache),
        }
    }

    pub fn with_max_episode_steps(mut self, cap: u32) -> Self {
        self.max_episode_steps = cap;
        self
    }

    pub fn grid(&self) -> &GridWorld {
        &self.grid
    }

    pub fn reset(&self) -> EnvState {
        EnvState {
            agent_pos: self.grid.spawn(),
            steps_elapsed: 0,
            done: false,
        }
    }

    pub fn state_at(&self, pos: Pos) -> EnvState {
        EnvState {
            agent_pos: pos,
            steps_elapsed: 0,
            done: pos == self.grid.goal(),
        }
    }

    /// Digest of the observation at `pos`, precomputed for every cell.
    pub fn digest_at(&self, pos: Pos) -> ObsDigest {
        self.obs_cache[self.grid.index(pos)]
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        Observation::at(&self.grid, state.agent_pos)
    }

    /// Applies one primitive move.
    pub fn step(&self, state: &EnvState, mv: Move) -> Result<StepOutcome, GridError> {
        let (state, reward, reached) = self.advance(state, mv)?;
        Ok(StepOutcome {
            observation: Observation::at(&self.grid, state.agent_pos),
            state,
            reward,
            done: state.done,
            reached_goal: reached,
        })
    }

    /// [`Task::step`] without building the observation: `(state, reward, reached_goal)`.
    pub fn advance(&self, state: &EnvState, mv: Move) -> Result<(EnvState, f64, bool), GridError> {
        if state.done {
            return Err(GridError::EpisodeFinished);
        }
        let agent_pos = self.grid.next_pos(state.agent_pos, mv);
        let steps_elapsed = state.steps_elapsed + 1;
        let reached = agent_pos == self.grid.goal();
        let reward = if reached {
            GOAL_REWARD - STEP_PENALTY
        } else {
            -STEP_PENALTY
        };
        let state = EnvState {
            agent_pos,
            steps_elapsed,
            done: reached || steps_elapsed >= self.max_episode_steps,
        };
        Ok((state, reward, reached))
    }

    /// Undiscounted return of an episode that took `steps` primitive steps.
    pub fn episode_return(steps: u32, reached_goal: bool) -> f64 {
        let bonus = if reached_goal { GOAL_REWARD } else { 0.0 };
        bonus - STEP_PENALTY * steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_pos: Pos,
    pub steps_elapsed: u32,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub reached_goal: bool,
}
