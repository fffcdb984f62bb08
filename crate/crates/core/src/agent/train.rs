use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    iqm, select_action, smdp_q_update, ActionId, AgentError, Hyperparams, QTable, StateKey, TrajStep, Trajectory,
};
use crate::gridworld::{EnvState, Task};
use crate::options::OptionRuntime;
use crate::rng::stream;

/// Which episodes are kept for fracture mining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningSource {
    /// Greedy episodes run after training ends.
    #[default]
    Greedy,
    /// The last exploratory episodes completed during training.
    Exploration,
}

/// Stop once two consecutive windows of evaluation episodes agree and the
/// latest clears the task's success threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceRule {
    pub window: usize,
    pub tolerance: f64,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule {
            window: 20,
            tolerance: 0.01,
        }
    }
}

impl ConvergenceRule {
    pub fn is_met(&self, history: &[f64], threshold: f64) -> bool {
        let w = self.window;
        if w == 0 || history.len() < 2 * w {
            return false;
        }
        let n = history.len();
        let (Ok(last), Ok(prev)) = (iqm(&history[n - w..]), iqm(&history[n - 2 * w..n - w])) else {
            return false;
        };
        (last - prev).abs() < self.tolerance && last >= threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hp: Hyperparams,
    /// Primitive environment steps; options count every step they take.
    pub budget_steps: u64,
    /// Evaluate at every multiple of this many steps, starting at 0.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub convergence: ConvergenceRule,
    pub stop_on_convergence: bool,
    pub mining: MiningSource,
    pub mining_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hp: Hyperparams::default(),
            budget_steps: 300_000,
            eval_interval: 2_000,
            eval_episodes: 10,
            convergence: ConvergenceRule::default(),
            stop_on_convergence: true,
            mining: MiningSource::Greedy,
            mining_episodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Nominal checkpoint, a multiple of the evaluation interval.
    pub env_steps: u64,
    pub returns: Vec<f64>,
    pub iqm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub qtable: QTable,
    pub trajectories: Vec<Trajectory>,
    pub converged: bool,
    pub env_steps: u64,
    pub episodes: usize,
    pub curve: Vec<EvalPoint>,
}

/// One decision and its consequence, waiting for the batched update.
struct Transition {
    s: StateKey,
    a: ActionId,
    discounted_return: f64,
    k: u32,
    next: Option<(StateKey, Arc<[ActionId]>)>,
}

struct Decision {
    action: ActionId,
    discounted_return: f64,
    total_reward: f64,
    k: u32,
    next: EnvState,
    reached_goal: bool,
}

fn decide<R: Rng>(
    q: &QTable,
    task: &Task,
    runtime: &mut OptionRuntime<'_>,
    state: EnvState,
    eps: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<Decision, AgentError> {
    let obs = task.digest_at(state.agent_pos);
    let available = runtime.available(obs)?;
    let action = select_action(q, StateKey(state.agent_pos), &available, eps, rng)?;
    if let Some(mv) = action.as_move() {
        let (next, r, reached) = task.advance(&state, mv).map_err(crate::options::OptionError::from)?;
        return Ok(Decision {
            action,
            discounted_return: r,
            total_reward: r,
            k: 1,
            next,
            reached_goal: reached,
        });
    }
    let out = runtime.execute(task, state, action, gamma)?;
    Ok(Decision {
        action,
        discounted_return: out.discounted_return,
        total_reward: out.total_reward,
        k: out.steps,
        next: out.final_state,
        reached_goal: out.reached_goal,
    })
}

/// Plays one episode from spawn. With `eps = 0` the policy is greedy with
/// random tie-breaking.
pub fn run_episode<R: Rng>(
    q: &QTable,
    task: &Task,
    runtime: &mut OptionRuntime<'_>,
    eps: f64,
    gamma: f64,
    rng: &mut R,
    seed: u64,
) -> Result<Trajectory, AgentError> {
    let mut state = task.reset();
    let mut steps = Vec::new();
    let mut reached = false;
    while !state.done {
        let d = decide(q, task, runtime, state, eps, gamma, rng)?;
        steps.push(TrajStep {
            state_key: StateKey(state.agent_pos),
            obs_digest: task.digest_at(state.agent_pos),
            action_id: d.action,
            reward: d.total_reward,
        });
        reached |= d.reached_goal;
        state = d.next;
    }
    let episode_return = Task::episode_return(state.steps_elapsed, reached);
    Ok(Trajectory {
        task_id: task.task_id.clone(),
        seed,
        steps,
        episode_return,
        success: episode_return > task.success_threshold,
    })
}

/// Greedy returns of `episodes` episodes.
pub fn evaluate(
    q: &QTable,
    task: &Task,
    runtime: &mut OptionRuntime<'_>,
    episodes: usize,
    gamma: f64,
    rng_seed: u64,
) -> Result<Vec<f64>, AgentError> {
    let mut rng = stream(rng_seed, "evaluate");
    (0..episodes)
        .map(|_| run_episode(q, task, runtime, 0.0, gamma, &mut rng, rng_seed).map(|t| t.episode_return))
        .collect()
}

fn apply(q: &mut QTable, pending: &mut Vec<Transition>, hp: &Hyperparams) {
    for t in pending.drain(..) {
        let (next, avail): (Option<StateKey>, &[ActionId]) = match &t.next {
            Some((s, a)) => (Some(*s), a),
            None => (None, &[]),
        };
        smdp_q_update(q, t.s, t.a, t.discounted_return, t.k, next, hp.alpha, hp.gamma, avail);
    }
}

/// Epsilon-greedy SMDP Q-learning on `task` over the runtime's action space.
///
/// `num_envs` copies of the task step in lockstep; transitions are applied in
/// environment order every `num_steps` rounds. Reaching the goal is terminal;
/// hitting the step cap only truncates, so those transitions still bootstrap.
pub fn train_task(
    task: &Task,
    runtime: &mut OptionRuntime<'_>,
    cfg: &TrainConfig,
    rng_seed: u64,
) -> Result<TrainOutcome, AgentError> {
    let hp = &cfg.hp;
    hp.validate()?;
    let task = &task.clone().with_max_episode_steps(hp.max_episode_steps);
    let space = &runtime.hierarchy().action_space;
    let mut q = QTable::for_space(
        task.task_id.clone(),
        space,
        hp.bias_factor,
        hp.option_init_base,
        hp.bias_depth_anneal,
    );
    let mut outcome = TrainOutcome {
        qtable: q.clone(),
        trajectories: Vec::new(),
        converged: false,
        env_steps: 0,
        episodes: 0,
        curve: Vec::new(),
    };
    if cfg.budget_steps == 0 {
        return Ok(outcome);
    }

    let mut rng: ChaCha8Rng = stream(rng_seed, "train");
    let mut envs: Vec<EnvState> = vec![task.reset(); hp.num_envs];
    let mut partial: Vec<(Vec<TrajStep>, bool)> = vec![(Vec::new(), false); hp.num_envs];
    let mut finished: VecDeque<Trajectory> = VecDeque::new();
    let mut pending: Vec<Transition> = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut steps: u64 = 0;
    let mut next_eval: u64 = 0;
    let mut rounds: usize = 0;
    let keep_exploration = cfg.mining == MiningSource::Exploration;

    'train: loop {
        // evaluation checkpoints passed so far
        while cfg.eval_interval > 0 && next_eval <= steps && next_eval <= cfg.budget_steps {
            apply(&mut q, &mut pending, hp);
            let seed = crate::rng::derive_seed(rng_seed, &format!("eval/{next_eval}"));
            let returns = evaluate(&q, task, runtime, cfg.eval_episodes, hp.gamma, seed)?;
            history.extend_from_slice(&returns);
            outcome.curve.push(EvalPoint {
                env_steps: next_eval,
                iqm: iqm(&returns).unwrap_or(f64::NAN),
                returns,
            });
            next_eval += cfg.eval_interval;
            if cfg.convergence.is_met(&history, task.success_threshold) {
                outcome.converged = true;
                if cfg.stop_on_convergence {
                    break 'train;
                }
            }
        }
        if steps >= cfg.budget_steps {
            break;
        }
        for i in 0..envs.len() {
            if steps >= cfg.budget_steps {
                break;
            }
            let state = envs[i];
            let d = decide(&q, task, runtime, state, hp.eps, hp.gamma, &mut rng)?;
            steps += d.k as u64;
            let next = if d.reached_goal {
                None
            } else {
                let avail = runtime.available(task.digest_at(d.next.agent_pos))?;
                Some((StateKey(d.next.agent_pos), avail))
            };
            pending.push(Transition {
                s: StateKey(state.agent_pos),
                a: d.action,
                discounted_return: d.discounted_return,
                k: d.k,
                next,
            });
            if keep_exploration {
                partial[i].0.push(TrajStep {
                    state_key: StateKey(state.agent_pos),
                    obs_digest: task.digest_at(state.agent_pos),
                    action_id: d.action,
                    reward: d.total_reward,
                });
                partial[i].1 |= d.reached_goal;
            }
            envs[i] = d.next;
            if d.next.done {
                outcome.episodes += 1;
                if keep_exploration {
                    let (traj_steps, reached) = std::mem::take(&mut partial[i]);
                    let ret = Task::episode_return(d.next.steps_elapsed, reached);
                    finished.push_back(Trajectory {
                        task_id: task.task_id.clone(),
                        seed: rng_seed,
                        steps: traj_steps,
                        episode_return: ret,
                        success: ret > task.success_threshold,
                    });
                    if finished.len() > cfg.mining_episodes {
                        finished.pop_front();
                    }
                }
                envs[i] = task.reset();
            }
        }
        rounds += 1;
        if rounds.is_multiple_of(hp.num_steps) {
            apply(&mut q, &mut pending, hp);
        }
    }
    apply(&mut q, &mut pending, hp);
    outcome.env_steps = steps;

    outcome.trajectories = match cfg.mining {
        MiningSource::Exploration => finished.into(),
        MiningSource::Greedy => {
            let mut rng = stream(rng_seed, "mine");
            (0..cfg.mining_episodes)
                .map(|_| run_episode(&q, task, runtime, 0.0, hp.gamma, &mut rng, rng_seed))
                .collect::<Result<_, _>>()?
        }
    };
    outcome.qtable = q;
    Ok(outcome)
}
