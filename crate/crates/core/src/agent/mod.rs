//! Tabular Q-learning over a mixed action space of primitives and options.

mod metrics;
mod policy;
mod qtable;
mod train;
mod trajectory;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{Move, DEFAULT_MAX_EPISODE_STEPS};

pub use metrics::{iqm, mean, standard_error, MetricsError};
pub use policy::select_action;
pub use qtable::{init_q_for_options, option_init_scale, q_update, smdp_q_update, QTable, StateKey};
pub use train::{
    evaluate, run_episode, train_task, ConvergenceRule, EvalPoint, MiningSource, TrainConfig, TrainOutcome,
};
pub use trajectory::{read_trajectories, write_trajectories, TrajStep, Trajectory};

/// Number of primitive moves; ids `0..NUM_PRIMITIVES` are primitives.
pub const NUM_PRIMITIVES: usize = 4;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no available actions")]
    NoActions,
    #[error("invalid hyperparameter: {0}")]
    BadHyperparams(String),
    #[error(transparent)]
    Options(#[from] crate::options::OptionError),
    #[error("trajectory io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory parse: {0}")]
    Json(#[from] serde_json::Error),
}

/// Dense action identifier: primitives first, then options level by level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u32);

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_primitive(self) -> bool {
        self.index() < NUM_PRIMITIVES
    }

    pub fn as_move(self) -> Option<Move> {
        Move::from_index(self.index())
    }
}

impl From<Move> for ActionId {
    fn from(m: Move) -> Self {
        ActionId(m as u32)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Primitives plus per-level option counts. Level `l` options occupy one
/// contiguous id range that starts right after level `l - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub primitives: usize,
    pub options_per_level: Vec<usize>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        ActionSpace::primitives_only()
    }
}

impl ActionSpace {
    pub fn primitives_only() -> Self {
        ActionSpace {
            primitives: NUM_PRIMITIVES,
            options_per_level: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.primitives + self.options_per_level.iter().sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn depth(&self) -> u32 {
        self.options_per_level.len() as u32
    }

    /// Ids usable by a level-`level` option: everything below that level.
    pub fn ids_below(&self, level: u32) -> Range<u32> {
        let end = self.primitives
            + self
                .options_per_level
                .iter()
                .take(level.saturating_sub(1) as usize)
                .sum::<usize>();
        0..end as u32
    }

    pub fn level_ids(&self, level: u32) -> Range<u32> {
        if level == 0 {
            return 0..self.primitives as u32;
        }
        let start = self.ids_below(level).end;
        let count = self.options_per_level.get(level as usize - 1).copied().unwrap_or(0);
        start..start + count as u32
    }

    /// 0 for primitives, otherwise the option level.
    pub fn level_of(&self, id: ActionId) -> Option<u32> {
        (0..=self.depth()).find(|&l| self.level_ids(l).contains(&id.0))
    }

    pub fn push_level(&mut self, count: usize) -> Range<u32> {
        self.options_per_level.push(count);
        self.level_ids(self.depth())
    }

    pub fn all_ids(&self) -> impl Iterator<Item = ActionId> {
        (0..self.len() as u32).map(ActionId)
    }
}

/// Tabular Q-learning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub eps: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub num_envs: usize,
    pub num_steps: usize,
    pub max_episode_steps: u32,
    pub bias_factor: f64,
    pub bias_depth_anneal: bool,
    /// Value multiplied by the bias scale to give an option's initial Q.
    pub option_init_base: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            eps: 0.1,
            alpha: 0.1,
            gamma: 0.99,
            num_envs: 64,
            num_steps: 64,
            max_episode_steps: DEFAULT_MAX_EPISODE_STEPS,
            bias_factor: 100.0,
            bias_depth_anneal: true,
            option_init_base: 1e-4,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::BadHyperparams(m.to_string()));
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad("eps must lie in (0, 1]");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.num_envs == 0 || self.num_steps == 0 || self.max_episode_steps == 0 {
            return bad("num_envs, num_steps and max_episode_steps must be positive");
        }
        if self.bias_factor.is_nan() || self.bias_factor <= 0.0 {
            return bad("bias_factor must be positive");
        }
        Ok(())
    }
}
