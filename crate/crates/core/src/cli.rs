//! Command-line front end.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::agent::{evaluate, read_trajectories, standard_error, write_trajectories, QTable};
use crate::experiments::{
    curve_points, discover, make_tasks, run_reward_generalisation, run_state_generalisation, train_test_tasks,
    write_curves_csv, write_results, ExperimentConfig, ExperimentError,
};
use crate::fracture::{export_fractures, filter_successful, FractureSet};
use crate::options::{Hierarchy, OptionRuntime};
use crate::rng::derive_seed;
use crate::usefulness::write_score_report;

#[derive(Debug, Parser)]
#[command(name = "fracos", version, about = "Fracture cluster option discovery and transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Hierarchy depth (overrides max_depth, or truncates a loaded bundle).
    #[arg(long)]
    depth: Option<u32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a hierarchy bundle from the train tasks of one seed.
    Discover(Common),
    /// Train fresh agents on the test tasks using a bundle.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Greedy evaluation of Q-tables written by `train`.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        /// Output directory of a previous `train` run.
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Reward generalisation on a named layout.
    Exp1(Common),
    /// State generalisation on MetaGrid.
    Exp2(Common),
    /// Write the usefulness CSV of every level in a bundle.
    ScoreReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Mine fractures from a trajectory file into JSONL.
    ExportFractures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectories: PathBuf,
        /// Keep only trajectories whose return exceeds this.
        #[arg(long)]
        min_return: Option<f64>,
        /// Size of the action universe the trajectories were recorded in.
        #[arg(long, default_value_t = 4)]
        num_actions: usize,
        #[arg(long, default_value_t = 1)]
        level: u32,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(d) = common.depth {
        cfg.max_depth = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, fallback: &str) -> Result<PathBuf, ExperimentError> {
    let dir = common.out_dir.clone().unwrap_or_else(|| PathBuf::from(fallback));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_bundle(path: &Path, depth: Option<u32>) -> Result<Hierarchy, ExperimentError> {
    if !path.is_dir() {
        return Err(ExperimentError::Config(format!(
            "bundle directory {} not found",
            path.display()
        )));
    }
    let h = Hierarchy::load(path)?;
    Ok(match depth {
        Some(d) if d > h.depth() => {
            return Err(ExperimentError::Config(format!(
                "bundle {} has depth {}, {d} requested",
                path.display(),
                h.depth()
            )))
        }
        Some(d) => h.truncated(d),
        None => h,
    })
}

#[derive(Serialize)]
struct EvalRow<'a> {
    depth: u32,
    seed: u64,
    task_id: &'a str,
    test_size: &'a str,
    iqm_return: f64,
    stderr: f64,
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Discover(common) => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let tasks = make_tasks(&cfg, seed)?;
            let found = discover(&cfg, &tasks, seed)?;
            let dir = out_dir(&common, "bundle")?;
            found.hierarchy.save(&dir)?;
            println!("wrote depth-{} bundle to {}", found.hierarchy.depth(), dir.display());
        }
        Command::Train { common, bundle } => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let hierarchy = load_bundle(&bundle, common.depth)?;
            let tasks = make_tasks(&cfg, seed)?;
            let runs = train_test_tasks(&cfg, &tasks, seed, &hierarchy)?;
            let dir = out_dir(&common, "train")?;
            write_curves_csv(&dir.join("curves.csv"), &curve_points(hierarchy.depth(), seed, &runs))?;
            let trajectories: Vec<_> = runs
                .iter()
                .flat_map(|r| r.outcome.trajectories.iter().cloned())
                .collect();
            write_trajectories(&dir.join("trajectories.jsonl"), &trajectories)?;
            let mut qfile = BufWriter::new(File::create(dir.join("qtables.jsonl"))?);
            for r in &runs {
                serde_json::to_writer(&mut qfile, &r.outcome.qtable)?;
                writeln!(qfile)?;
            }
            qfile.flush()?;
            println!("trained {} agents, results in {}", runs.len(), dir.display());
        }
        Command::Evaluate {
            common,
            bundle,
            run_dir,
        } => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let hierarchy = load_bundle(&bundle, common.depth)?;
            let tasks = make_tasks(&cfg, seed)?;
            let qpath = run_dir.join("qtables.jsonl");
            let qfile = File::open(&qpath)
                .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", qpath.display())))?;
            let mut tables = Vec::new();
            for line in BufReader::new(qfile).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    tables.push(serde_json::from_str::<QTable>(&line)?);
                }
            }
            let dir = out_dir(&common, run_dir.to_str().unwrap_or("."))?;
            let mut w = csv::Writer::from_path(dir.join("eval.csv"))?;
            for q in &tables {
                let Some((label, task)) = tasks.test.iter().find(|(_, t)| t.task_id == q.task_id) else {
                    return Err(ExperimentError::Config(format!(
                        "no test task {} for seed {seed}",
                        q.task_id
                    )));
                };
                if q.num_actions() != hierarchy.action_space.len() {
                    return Err(ExperimentError::Config(format!(
                        "Q-table for {} has {} actions, bundle has {}",
                        q.task_id,
                        q.num_actions(),
                        hierarchy.action_space.len()
                    )));
                }
                let mut runtime = OptionRuntime::new(&hierarchy);
                let task = task.clone().with_max_episode_steps(cfg.hyperparams.max_episode_steps);
                let eval_seed = derive_seed(cfg.master_seed, &format!("seed{seed}/evaluate/{}", task.task_id));
                let returns = evaluate(
                    q,
                    &task,
                    &mut runtime,
                    cfg.eval_episodes,
                    cfg.hyperparams.gamma,
                    eval_seed,
                )?;
                let row = EvalRow {
                    depth: hierarchy.depth(),
                    seed,
                    task_id: &task.task_id,
                    test_size: label,
                    iqm_return: crate::agent::iqm(&returns).unwrap_or(f64::NAN),
                    stderr: standard_error(&returns),
                };
                println!("{}: IQM return {:.4}", row.task_id, row.iqm_return);
                w.serialize(row)?;
            }
            w.flush()?;
        }
        Command::Exp1(common) => {
            let cfg = load_config(&common)?;
            let results = run_reward_generalisation(&cfg)?;
            let dir = out_dir(&common, "exp1")?;
            write_results(&cfg, &results, &dir)?;
            println!("wrote {} curve points to {}", results.points.len(), dir.display());
        }
        Command::Exp2(common) => {
            let cfg = load_config(&common)?;
            let results = run_state_generalisation(&cfg)?;
            let dir = out_dir(&common, "exp2")?;
            write_results(&cfg, &results, &dir)?;
            println!("wrote {} curve points to {}", results.points.len(), dir.display());
        }
        Command::ScoreReport { common, bundle } => {
            let hierarchy = load_bundle(&bundle, common.depth)?;
            let dir = out_dir(&common, bundle.to_str().unwrap_or("."))?;
            for rec in &hierarchy.levels {
                let path = dir.join(format!("usefulness_L{}.csv", rec.level));
                write_score_report(&path, rec.level, &rec.scores, &rec.selected)
                    .map_err(crate::options::OptionError::from)?;
                println!("{}", path.display());
            }
        }
        Command::ExportFractures {
            common,
            trajectories,
            min_return,
            num_actions,
            level,
        } => {
            let cfg = load_config(&common)?;
            if !trajectories.is_file() {
                return Err(ExperimentError::Config(format!(
                    "trajectory file {} not found",
                    trajectories.display()
                )));
            }
            let all = read_trajectories(&trajectories)?;
            let kept: Vec<_> = match min_return {
                Some(thr) => filter_successful(&all, thr).0,
                None => all.iter().collect(),
            };
            let fset = FractureSet::from_trajectories(kept.iter().copied(), cfg.chain_length, level, num_actions)
                .map_err(crate::options::OptionError::from)?;
            let dir = out_dir(&common, ".")?;
            let path = dir.join("fractures.jsonl");
            export_fractures(&path, &fset).map_err(crate::options::OptionError::from)?;
            println!("wrote {} fractures to {}", fset.len(), path.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
