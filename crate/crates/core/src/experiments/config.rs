use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::agent::{ConvergenceRule, Hyperparams, MiningSource, TrainConfig};
use crate::clustering::{ClusterConfig, GeneralisationStrength};
use crate::gridworld::{MetaGridSize, NamedEnv, Pos};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Environment {
    /// Fixed layout; tasks differ only in goal cell.
    Named {
        name: NamedEnv,
        /// Explicit goals; sampled when absent.
        #[serde(default)]
        train_goals: Option<Vec<Pos>>,
        #[serde(default)]
        test_goals: Option<Vec<Pos>>,
    },
    /// Procedural maps; tasks differ in layout, spawn and goal.
    Metagrid {
        train_size: MetaGridSize,
        test_sizes: Vec<MetaGridSize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: Environment,
    pub n_train_tasks: usize,
    /// Held-out tasks per test size.
    pub n_test_tasks: usize,
    pub k_options_per_level: usize,
    pub max_depth: u32,
    pub chain_length: usize,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub hyperparams: Hyperparams,
    pub cluster: ClusterConfig,
    pub generalisation: GeneralisationStrength,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Step budget of each discovery agent.
    pub train_budget_steps: u64,
    /// Step budget of each agent on a held-out task.
    pub test_budget_steps: u64,
    pub convergence: ConvergenceRule,
    pub mining: MiningSource,
    pub mining_episodes: usize,
    /// Run independent jobs on the rayon pool.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            environment: Environment::Named {
                name: NamedEnv::FourRooms,
                train_goals: None,
                test_goals: None,
            },
            n_train_tasks: 50,
            n_test_tasks: 10,
            k_options_per_level: 20,
            max_depth: 4,
            chain_length: 2,
            master_seed: 0,
            seeds: (0..10).collect(),
            hyperparams: Hyperparams::default(),
            cluster: ClusterConfig::default(),
            generalisation: GeneralisationStrength::default(),
            eval_interval: 2_000,
            eval_episodes: 10,
            train_budget_steps: 300_000,
            test_budget_steps: 300_000,
            convergence: ConvergenceRule::default(),
            mining: MiningSource::Greedy,
            mining_episodes: 10,
            parallel: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serialisable")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.n_train_tasks == 0 {
            return bad("n_train_tasks must be at least 1".into());
        }
        if self.n_test_tasks == 0 {
            return bad("n_test_tasks must be at least 1".into());
        }
        if self.chain_length == 0 {
            return bad("chain_length must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.max_depth > 0 && self.k_options_per_level == 0 {
            return bad("k_options_per_level must be at least 1".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        self.hyperparams
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.cluster
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.generalisation
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        match &self.environment {
            Environment::Named {
                train_goals,
                test_goals,
                ..
            } => {
                if let Some(g) = train_goals {
                    if g.len() != self.n_train_tasks {
                        return bad(format!(
                            "{} train goals for n_train_tasks = {}",
                            g.len(),
                            self.n_train_tasks
                        ));
                    }
                }
                if let Some(g) = test_goals {
                    if g.len() != self.n_test_tasks {
                        return bad(format!(
                            "{} test goals for n_test_tasks = {}",
                            g.len(),
                            self.n_test_tasks
                        ));
                    }
                }
                if let (Some(tr), Some(te)) = (train_goals, test_goals) {
                    let train: HashSet<&Pos> = tr.iter().collect();
                    if let Some(p) = te.iter().find(|p| train.contains(p)) {
                        return bad(format!("goal {p} is both a train and a test goal"));
                    }
                }
            }
            Environment::Metagrid { test_sizes, .. } => {
                if test_sizes.is_empty() {
                    return bad("metagrid needs at least one test size".into());
                }
            }
        }
        Ok(())
    }

    /// Agent settings for one training run under this experiment.
    pub fn train_config(&self, budget: u64, stop_on_convergence: bool) -> TrainConfig {
        TrainConfig {
            hp: self.hyperparams.clone(),
            budget_steps: budget,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            convergence: self.convergence,
            stop_on_convergence,
            mining: self.mining,
            mining_episodes: self.mining_episodes,
        }
    }
}
