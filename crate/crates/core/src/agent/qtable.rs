use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ActionId, ActionSpace};
use crate::gridworld::Pos;

/// Absolute agent cell. A [`QTable`] belongs to one task, so the key is
/// scoped by the table's `task_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub Pos);

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Serialize for StateKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map(StateKey).map_err(serde::de::Error::custom)
    }
}

/// Scale applied to a level-`level` option's initial value.
///
/// With annealing the top level gets the full factor and level `d` of a
/// depth-`D` hierarchy gets its `(D - d + 1)`-th root.
pub fn option_init_scale(bias_factor: f64, level: u32, depth: u32, anneal: bool) -> f64 {
    if !anneal || depth == 0 {
        return bias_factor;
    }
    let root = depth.saturating_sub(level) + 1;
    bias_factor.powf(1.0 / root as f64)
}

/// Per-action initial values: 0 for primitives, `base * scale(level)` for options.
pub fn init_q_for_options(space: &ActionSpace, bias_factor: f64, base: f64, anneal: bool) -> Vec<f64> {
    let depth = space.depth();
    let mut init = vec![0.0; space.len()];
    for level in 1..=depth {
        let v = base * option_init_scale(bias_factor, level, depth, anneal);
        for id in space.level_ids(level) {
            init[id as usize] = v;
        }
    }
    init
}

/// Sparse action-value table; unseen states read as the per-action init values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub task_id: String,
    init: Vec<f64>,
    #[serde(with = "rows_as_list")]
    rows: HashMap<StateKey, Vec<f64>>,
}

mod rows_as_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rows: &HashMap<StateKey, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let mut sorted: Vec<_> = rows.iter().collect();
        sorted.sort_by_key(|(k, _)| **k);
        s.collect_seq(sorted)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<HashMap<StateKey, Vec<f64>>, D::Error> {
        let list: Vec<(StateKey, Vec<f64>)> = Vec::deserialize(d)?;
        Ok(list.into_iter().collect())
    }
}

impl QTable {
    pub fn new(task_id: impl Into<String>, init: Vec<f64>) -> Self {
        QTable {
            task_id: task_id.into(),
            init,
            rows: HashMap::new(),
        }
    }

    /// Table whose options start optimistic per the bias rule.
    pub fn for_space(
        task_id: impl Into<String>,
        space: &ActionSpace,
        bias_factor: f64,
        base: f64,
        anneal: bool,
    ) -> Self {
        QTable::new(task_id, init_q_for_options(space, bias_factor, base, anneal))
    }

    pub fn num_actions(&self) -> usize {
        self.init.len()
    }

    pub fn init_values(&self) -> &[f64] {
        &self.init
    }

    pub fn row(&self, s: StateKey) -> &[f64] {
        self.rows.get(&s).map(Vec::as_slice).unwrap_or(&self.init)
    }

    pub fn get(&self, s: StateKey, a: ActionId) -> f64 {
        self.row(s)[a.index()]
    }

    pub fn set(&mut self, s: StateKey, a: ActionId, v: f64) {
        let init = &self.init;
        self.rows.entry(s).or_insert_with(|| init.clone())[a.index()] = v;
    }

    pub fn max_over(&self, s: StateKey, available: &[ActionId]) -> f64 {
        let row = self.row(s);
        available
            .iter()
            .map(|a| row[a.index()])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn visited_states(&self) -> usize {
        self.rows.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.values().flatten().copied()
    }
}

/// One-step Q-learning. `s_next = None` marks a terminal transition.
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    q: &mut QTable,
    s: StateKey,
    a: ActionId,
    r: f64,
    s_next: Option<StateKey>,
    alpha: f64,
    gamma: f64,
    available_next: &[ActionId],
) {
    let bootstrap = match s_next {
        Some(n) if !available_next.is_empty() => q.max_over(n, available_next),
        _ => 0.0,
    };
    let old = q.get(s, a);
    let target = r + gamma * bootstrap;
    q.set(s, a, old + alpha * (target - old));
}

/// SMDP Q-learning for an action that ran `k` primitive steps and collected
/// `discounted_return` (discounted from its start).
#[allow(clippy::too_many_arguments)]
pub fn smdp_q_update(
    q: &mut QTable,
    s: StateKey,
    option: ActionId,
    discounted_return: f64,
    k: u32,
    s_terminal: Option<StateKey>,
    alpha: f64,
    gamma: f64,
    available_next: &[ActionId],
) {
    let bootstrap = match s_terminal {
        Some(n) if !available_next.is_empty() => q.max_over(n, available_next),
        _ => 0.0,
    };
    let old = q.get(s, option);
    let target = discounted_return + gamma.powi(k as i32) * bootstrap;
    q.set(s, option, old + alpha * (target - old));
}
