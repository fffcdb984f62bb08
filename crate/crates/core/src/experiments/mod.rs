//! Transfer experiments: discover a hierarchy on training tasks, then learn
//! held-out tasks from scratch at every hierarchy depth.

use std::collections::BTreeSet;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::agent::{standard_error, train_task, AgentError, TrainOutcome, Trajectory};
use crate::gridworld::{generate_metagrid, make_named_env, named_layout, GridError, MetaGridSize, NamedEnv, Pos, Task};
use crate::options::{build_hierarchy_level, DiscoveryConfig, Hierarchy, LevelReport, OptionError, OptionRuntime};
use crate::rng::{derive_seed, stream};

mod config;
mod curves;

pub use config::{Environment, ExperimentConfig};
pub use curves::{
    aggregate_curves, area_under_curve, per_seed_auc, read_curves_csv, write_aggregate_csv, write_curves_csv,
    AggregatePoint, CurvePoint,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("held-out task leaked into discovery: {0}")]
    Leak(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Option(#[from] OptionError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Train and test tasks of one seed. Test tasks carry the label of the size
/// or layout they belong to.
#[derive(Debug, Clone)]
pub struct TaskSplit {
    pub train: Vec<Task>,
    pub test: Vec<(String, Task)>,
}

impl TaskSplit {
    pub fn train_ids(&self) -> Vec<String> {
        self.train.iter().map(|t| t.task_id.clone()).collect()
    }
}

/// Everything one seed produced.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub hierarchy: Hierarchy,
    pub reports: Vec<LevelReport>,
    pub train_tasks: Vec<String>,
    pub test_tasks: Vec<String>,
    /// Discovery agents per level that met the convergence rule.
    pub converged_per_level: Vec<usize>,
}

#[derive(Debug)]
pub struct ExperimentResults {
    pub points: Vec<CurvePoint>,
    pub runs: Vec<SeedRun>,
}

/// Goals drawn without replacement from the free cells other than the spawn.
fn sample_goals(env: NamedEnv, n: usize, master: u64, seed: u64) -> Result<Vec<Pos>, ExperimentError> {
    let layout = named_layout(env);
    let mut cells: Vec<Pos> = layout
        .free_cells()
        .into_iter()
        .filter(|&p| p != layout.spawn())
        .collect();
    if cells.len() < n {
        return Err(ExperimentError::Config(format!(
            "{env} has {} goal cells, {n} requested",
            cells.len()
        )));
    }
    let mut rng = stream(master, &format!("seed{seed}/goals"));
    cells.shuffle(&mut rng);
    cells.truncate(n);
    Ok(cells)
}

/// Builds the tasks for one seed. Train and test tasks never share a goal
/// (named layouts) or a generator seed (MetaGrid).
pub fn make_tasks(cfg: &ExperimentConfig, seed: u64) -> Result<TaskSplit, ExperimentError> {
    let cap = cfg.hyperparams.max_episode_steps;
    let split = match &cfg.environment {
        Environment::Named {
            name,
            train_goals,
            test_goals,
        } => {
            let (train_goals, test_goals) = match (train_goals, test_goals) {
                (Some(tr), Some(te)) => (tr.clone(), te.clone()),
                _ => {
                    let mut goals = sample_goals(*name, cfg.n_train_tasks + cfg.n_test_tasks, cfg.master_seed, seed)?;
                    let test = goals.split_off(cfg.n_train_tasks);
                    (train_goals.clone().unwrap_or(goals), test_goals.clone().unwrap_or(test))
                }
            };
            let make = |g: &Pos| make_named_env(name.name(), *g).map(|t| t.with_max_episode_steps(cap));
            TaskSplit {
                train: train_goals.iter().map(make).collect::<Result<_, _>>()?,
                test: test_goals
                    .iter()
                    .map(|g| make(g).map(|t| (name.name().to_string(), t)))
                    .collect::<Result<_, _>>()?,
            }
        }
        Environment::Metagrid { train_size, test_sizes } => {
            let gen = |size: MetaGridSize, label: String| {
                let s = derive_seed(cfg.master_seed, &label);
                generate_metagrid(size, s).map(|t| t.with_max_episode_steps(cap))
            };
            let train = (0..cfg.n_train_tasks)
                .map(|i| gen(*train_size, format!("seed{seed}/train/{i}")))
                .collect::<Result<Vec<_>, _>>()?;
            let mut test = Vec::new();
            for size in test_sizes {
                for i in 0..cfg.n_test_tasks {
                    test.push((size.to_string(), gen(*size, format!("seed{seed}/test/{size}/{i}"))?));
                }
            }
            TaskSplit { train, test }
        }
    };
    let train_ids: BTreeSet<&str> = split.train.iter().map(|t| t.task_id.as_str()).collect();
    if let Some((_, t)) = split.test.iter().find(|(_, t)| train_ids.contains(t.task_id.as_str())) {
        return Err(ExperimentError::Leak(t.task_id.clone()));
    }
    Ok(split)
}

/// Runs `n` independent jobs, on the rayon pool when `parallel`, and returns
/// their results in job order.
fn run_jobs<T, F>(n: usize, parallel: bool, job: F) -> Result<Vec<T>, ExperimentError>
where
    T: Send,
    F: Fn(usize) -> Result<T, ExperimentError> + Sync,
{
    if parallel {
        (0..n).into_par_iter().map(&job).collect()
    } else {
        (0..n).map(&job).collect()
    }
}

/// Hierarchy built on one seed's train tasks.
#[derive(Debug)]
pub struct Discovery {
    pub hierarchy: Hierarchy,
    pub reports: Vec<LevelReport>,
    pub converged_per_level: Vec<usize>,
}

/// Grows a hierarchy to `cfg.max_depth` levels. Each level is mined from
/// agents trained on the train tasks with all earlier levels available.
pub fn discover(cfg: &ExperimentConfig, tasks: &TaskSplit, seed: u64) -> Result<Discovery, ExperimentError> {
    let train_ids = tasks.train_ids();
    let test_ids: BTreeSet<&str> = tasks.test.iter().map(|(_, t)| t.task_id.as_str()).collect();
    let mut hierarchy = Hierarchy::new(cfg.chain_length, cfg.generalisation);
    let dcfg = DiscoveryConfig {
        b: cfg.chain_length,
        k_options_per_level: cfg.k_options_per_level,
        cluster: cfg.cluster.clone(),
        success_threshold: tasks.train.first().map_or(1.0, |t| t.success_threshold),
    };
    let mut reports = Vec::new();
    let mut converged_per_level = Vec::new();
    let discovery_cfg = cfg.train_config(cfg.train_budget_steps, true);
    for level in 1..=cfg.max_depth {
        let outcomes = run_jobs(tasks.train.len(), cfg.parallel, |i| {
            let task = &tasks.train[i];
            let mut runtime = OptionRuntime::new(&hierarchy);
            let agent_seed = derive_seed(
                cfg.master_seed,
                &format!("seed{seed}/discover/L{level}/{}", task.task_id),
            );
            Ok(train_task(task, &mut runtime, &discovery_cfg, agent_seed)?)
        })?;
        converged_per_level.push(outcomes.iter().filter(|o| o.converged).count());
        let trajectories: Vec<Trajectory> = outcomes.into_iter().flat_map(|o| o.trajectories).collect();
        if let Some(t) = trajectories.iter().find(|t| test_ids.contains(t.task_id.as_str())) {
            return Err(ExperimentError::Leak(t.task_id.clone()));
        }
        let frozen = hierarchy.fingerprint(level - 1);
        let report = build_hierarchy_level(&mut hierarchy, &trajectories, &train_ids, &dcfg)?;
        if hierarchy.fingerprint(level - 1) != frozen {
            return Err(ExperimentError::Config(format!(
                "level {level} altered the levels below it"
            )));
        }
        info!(
            "seed {seed} level {level}: {} fractures, {} clusters, {} options, {}/{} agents converged",
            report.n_fractures,
            report.n_clusters,
            report.selected.len(),
            converged_per_level.last().copied().unwrap_or(0),
            tasks.train.len()
        );
        reports.push(report);
    }
    Ok(Discovery {
        hierarchy,
        reports,
        converged_per_level,
    })
}

/// A fresh agent trained on one test task.
#[derive(Debug)]
pub struct TestRun {
    pub test_size: String,
    pub outcome: TrainOutcome,
}

/// Trains a fresh agent per test task over `hierarchy` for the full test budget.
/// The agent seed ignores depth, so depths differ only in their options.
pub fn train_test_tasks(
    cfg: &ExperimentConfig,
    tasks: &TaskSplit,
    seed: u64,
    hierarchy: &Hierarchy,
) -> Result<Vec<TestRun>, ExperimentError> {
    let test_cfg = cfg.train_config(cfg.test_budget_steps, false);
    run_jobs(tasks.test.len(), cfg.parallel, |i| {
        let (label, task) = &tasks.test[i];
        let mut runtime = OptionRuntime::new(hierarchy);
        let agent_seed = derive_seed(cfg.master_seed, &format!("seed{seed}/test/{}", task.task_id));
        Ok(TestRun {
            test_size: label.clone(),
            outcome: train_task(task, &mut runtime, &test_cfg, agent_seed)?,
        })
    })
}

pub fn curve_points(depth: u32, seed: u64, runs: &[TestRun]) -> Vec<CurvePoint> {
    runs.iter()
        .flat_map(|r| {
            r.outcome.curve.iter().map(move |p| CurvePoint {
                depth,
                seed,
                task_id: r.outcome.qtable.task_id.clone(),
                test_size: r.test_size.clone(),
                env_steps: p.env_steps,
                iqm_return: p.iqm,
                stderr: standard_error(&p.returns),
            })
        })
        .collect()
}

/// Discovery on the train tasks followed by from-scratch learning on every
/// test task at each depth `0..=max_depth`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(SeedRun, Vec<CurvePoint>), ExperimentError> {
    let tasks = make_tasks(cfg, seed)?;
    let found = discover(cfg, &tasks, seed)?;
    let mut points = Vec::new();
    for depth in 0..=cfg.max_depth {
        let truncated = found.hierarchy.truncated(depth);
        let runs = train_test_tasks(cfg, &tasks, seed, &truncated)?;
        points.extend(curve_points(depth, seed, &runs));
    }
    let run = SeedRun {
        seed,
        hierarchy: found.hierarchy,
        reports: found.reports,
        train_tasks: tasks.train_ids(),
        test_tasks: tasks.test.iter().map(|(_, t)| t.task_id.clone()).collect(),
        converged_per_level: found.converged_per_level,
    };
    Ok((run, points))
}

fn run_all(cfg: &ExperimentConfig) -> Result<ExperimentResults, ExperimentError> {
    cfg.validate()?;
    let mut results = ExperimentResults {
        points: Vec::new(),
        runs: Vec::new(),
    };
    for &seed in &cfg.seeds {
        let (run, points) = run_seed(cfg, seed)?;
        results.points.extend(points);
        results.runs.push(run);
    }
    Ok(results)
}

/// Goals vary, layout fixed.
pub fn run_reward_generalisation(cfg: &ExperimentConfig) -> Result<ExperimentResults, ExperimentError> {
    if !matches!(cfg.environment, Environment::Named { .. }) {
        return Err(ExperimentError::Config(
            "reward generalisation needs a named environment".into(),
        ));
    }
    run_all(cfg)
}

/// Layout, spawn and goal all vary.
pub fn run_state_generalisation(cfg: &ExperimentConfig) -> Result<ExperimentResults, ExperimentError> {
    if !matches!(cfg.environment, Environment::Metagrid { .. }) {
        return Err(ExperimentError::Config(
            "state generalisation needs a metagrid environment".into(),
        ));
    }
    run_all(cfg)
}

#[derive(Serialize)]
struct SeedSummary<'a> {
    seed: u64,
    train_tasks: &'a [String],
    test_tasks: &'a [String],
    converged_per_level: &'a [usize],
    levels: Vec<LevelSummary>,
    fingerprint: String,
}

#[derive(Serialize)]
struct LevelSummary {
    level: u32,
    n_successful: usize,
    n_fractures: usize,
    n_clusters: usize,
    n_options: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    code_version: &'static str,
    config: &'a ExperimentConfig,
    seeds: Vec<SeedSummary<'a>>,
}

/// Writes `curves.csv`, `aggregate.csv`, `manifest.json` and one hierarchy
/// bundle per seed under `seed_<s>/`.
pub fn write_results(
    cfg: &ExperimentConfig,
    results: &ExperimentResults,
    out_dir: &Path,
) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(out_dir)?;
    write_curves_csv(&out_dir.join("curves.csv"), &results.points)?;
    write_aggregate_csv(&out_dir.join("aggregate.csv"), &aggregate_curves(&results.points))?;
    for run in &results.runs {
        run.hierarchy.save(&out_dir.join(format!("seed_{}", run.seed)))?;
    }
    let manifest = Manifest {
        code_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seeds: results
            .runs
            .iter()
            .map(|r| SeedSummary {
                seed: r.seed,
                train_tasks: &r.train_tasks,
                test_tasks: &r.test_tasks,
                converged_per_level: &r.converged_per_level,
                levels: r
                    .reports
                    .iter()
                    .map(|l| LevelSummary {
                        level: l.level,
                        n_successful: l.n_successful,
                        n_fractures: l.n_fractures,
                        n_clusters: l.n_clusters,
                        n_options: l.selected.len(),
                    })
                    .collect(),
                fingerprint: r.hierarchy.fingerprint(r.hierarchy.depth()),
            })
            .collect(),
    };
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n_train_tasks: 4,
            n_test_tasks: 2,
            max_depth: 1,
            seeds: vec![3],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn goal_split_is_disjoint_and_seeded() {
        let cfg = tiny();
        let a = make_tasks(&cfg, 3).unwrap();
        let b = make_tasks(&cfg, 3).unwrap();
        assert_eq!(a.train_ids(), b.train_ids());
        let spawn = a.train[0].grid().spawn();
        let mut goals: Vec<Pos> = a
            .train
            .iter()
            .chain(a.test.iter().map(|(_, t)| t))
            .map(|t| t.grid().goal())
            .collect();
        assert!(goals.iter().all(|&g| g != spawn));
        goals.sort();
        goals.dedup();
        assert_eq!(goals.len(), 6);
        assert_ne!(make_tasks(&cfg, 4).unwrap().train_ids(), a.train_ids());
    }

    #[test]
    fn metagrid_split_labels_sizes() {
        let cfg = ExperimentConfig {
            environment: Environment::Metagrid {
                train_size: MetaGridSize::S14,
                test_sizes: vec![MetaGridSize::S14, MetaGridSize::S21],
            },
            ..tiny()
        };
        let split = make_tasks(&cfg, 0).unwrap();
        assert_eq!(split.train.len(), 4);
        let labels: Vec<&str> = split.test.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["14x14", "14x14", "21x21", "21x21"]);
        assert_eq!(split.test[3].1.grid().width(), 21);
    }

    #[test]
    fn too_many_goals_is_an_error() {
        let cfg = ExperimentConfig {
            n_train_tasks: 5000,
            ..tiny()
        };
        assert!(matches!(make_tasks(&cfg, 0), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn wrong_runner_for_environment() {
        assert!(run_state_generalisation(&tiny()).is_err());
    }
}
