use std::collections::HashMap;
use std::sync::Arc;

use super::{initiation, Hierarchy, OptionError};
use crate::agent::ActionId;
use crate::gridworld::{EnvState, ObsDigest, Task};

/// Result of running one option to termination.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionOutcome {
    /// Rewards discounted from the option's first step.
    pub discounted_return: f64,
    pub total_reward: f64,
    /// Primitive steps taken.
    pub steps: u32,
    pub final_state: EnvState,
    /// A nested option could not be initiated and the whole execution stopped.
    pub terminated_early: bool,
    pub reached_goal: bool,
    /// Deepest option call reached, 1 for the option itself.
    pub max_depth: u32,
}

enum Flow {
    Completed,
    Early,
    EpisodeOver,
}

/// Memoised initiation queries for one hierarchy.
///
/// Everything is keyed by observation, so a runtime can be reused across
/// tasks that share the hierarchy.
#[derive(Debug)]
pub struct OptionRuntime<'h> {
    hierarchy: &'h Hierarchy,
    best: HashMap<(ObsDigest, ActionId), Option<Arc<[ActionId]>>>,
    runnable: HashMap<(ObsDigest, ActionId), bool>,
    available: HashMap<ObsDigest, Arc<[ActionId]>>,
}

impl<'h> OptionRuntime<'h> {
    pub fn new(hierarchy: &'h Hierarchy) -> Self {
        OptionRuntime {
            hierarchy,
            best: HashMap::new(),
            runnable: HashMap::new(),
            available: HashMap::new(),
        }
    }

    pub fn hierarchy(&self) -> &'h Hierarchy {
        self.hierarchy
    }

    /// Action sequence of the top initiation candidate, if any.
    pub fn best_fracture(&mut self, obs: ObsDigest, option: ActionId) -> Result<Option<Arc<[ActionId]>>, OptionError> {
        if let Some(hit) = self.best.get(&(obs, option)) {
            return Ok(hit.clone());
        }
        let fraco = self
            .hierarchy
            .option(option)
            .ok_or(OptionError::UnknownOption(option))?;
        let g = initiation(obs, fraco, self.hierarchy.candidate_cap)?;
        let best: Option<Arc<[ActionId]>> = g.best().map(|f| f.actions.clone().into());
        self.best.insert((obs, option), best.clone());
        Ok(best)
    }

    /// Whether running `option` from `obs` takes at least one primitive step.
    pub fn is_runnable(&mut self, obs: ObsDigest, option: ActionId) -> Result<bool, OptionError> {
        if option.is_primitive() {
            return Ok(true);
        }
        if let Some(&hit) = self.runnable.get(&(obs, option)) {
            return Ok(hit);
        }
        let ok = match self.best_fracture(obs, option)? {
            Some(seq) => self.is_runnable(obs, seq[0])?,
            None => false,
        };
        self.runnable.insert((obs, option), ok);
        Ok(ok)
    }

    /// Primitives plus every option that can be initiated and run from `obs`.
    pub fn available(&mut self, obs: ObsDigest) -> Result<Arc<[ActionId]>, OptionError> {
        if let Some(hit) = self.available.get(&obs) {
            return Ok(hit.clone());
        }
        let space = &self.hierarchy.action_space;
        let mut ids: Vec<ActionId> = (0..space.primitives as u32).map(ActionId).collect();
        for id in space.primitives as u32..space.len() as u32 {
            if self.is_runnable(obs, ActionId(id))? {
                ids.push(ActionId(id));
            }
        }
        let ids: Arc<[ActionId]> = ids.into();
        self.available.insert(obs, ids.clone());
        Ok(ids)
    }

    /// Runs `option` from `state` until its fracture is exhausted, a nested
    /// option has no candidates, or the episode ends.
    pub fn execute(
        &mut self,
        task: &Task,
        state: EnvState,
        option: ActionId,
        gamma: f64,
    ) -> Result<OptionOutcome, OptionError> {
        let obs = task.digest_at(state.agent_pos);
        if self.best_fracture(obs, option)?.is_none() {
            return Err(OptionError::NotAvailable { option, obs });
        }
        let mut out = OptionOutcome {
            discounted_return: 0.0,
            total_reward: 0.0,
            steps: 0,
            final_state: state,
            terminated_early: false,
            reached_goal: false,
            max_depth: 0,
        };
        let mut discount = 1.0;
        let flow = self.run(task, option, gamma, 1, &mut discount, &mut out)?;
        out.terminated_early = matches!(flow, Flow::Early);
        Ok(out)
    }

    fn run(
        &mut self,
        task: &Task,
        option: ActionId,
        gamma: f64,
        depth: u32,
        discount: &mut f64,
        out: &mut OptionOutcome,
    ) -> Result<Flow, OptionError> {
        let obs = task.digest_at(out.final_state.agent_pos);
        let Some(seq) = self.best_fracture(obs, option)? else {
            return Ok(Flow::Early);
        };
        out.max_depth = out.max_depth.max(depth);
        for &a in seq.iter() {
            if out.final_state.done {
                return Ok(Flow::EpisodeOver);
            }
            if let Some(mv) = a.as_move() {
                let (next, r, reached) = task.advance(&out.final_state, mv)?;
                out.discounted_return += *discount * r;
                out.total_reward += r;
                *discount *= gamma;
                out.steps += 1;
                out.reached_goal |= reached;
                out.final_state = next;
            } else {
                match self.run(task, a, gamma, depth + 1, discount, out)? {
                    Flow::Completed => {}
                    other => return Ok(other),
                }
            }
        }
        Ok(Flow::Completed)
    }
}
