//! Acceptance runner: one line per criterion, `PASS` or `FAIL`, with the
//! measured numbers.
//!
//! Criteria 5 and 6 are empirical reproductions; their failures are printed
//! but only fail the process when `FRACOS_STRICT_ACCEPTANCE=1`. Every other
//! criterion is a hard contract. Pass a criterion number to run just that one.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{four_rooms, random_hierarchy, random_trajectory, workspace_root};
use fracos::agent::{iqm, ActionId, StateKey, TrajStep, Trajectory};
use fracos::cli::cli_main;
use fracos::clustering::{
    cluster_fractures, membership_probability, ClusterConfig, GeneralisationStrength, ObsMatch, Strategy,
};
use fracos::experiments::{per_seed_auc, read_curves_csv, ExperimentConfig};
use fracos::fracture::{extract_fractures, FractureSet};
use fracos::gridworld::Pos;
use fracos::options::{OptionError, OptionRuntime};
use fracos::rng::stream;
use fracos::usefulness::{appearance_probability, expected_usefulness, usefulness_inputs};
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::Beta;
use statrs::statistics::Distribution;

type Check = fn(&Workspace) -> Verdict;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Shared between criteria that reuse experiment outputs.
struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn config_path(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

fn run_cli(args: &[&str]) -> i32 {
    cli_main(std::iter::once("fracos").chain(args.iter().copied()))
}

fn run_experiment(cmd: &str, config: &Path, out: &Path) -> Result<(), String> {
    let code = run_cli(&[
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    if code == 0 {
        Ok(())
    } else {
        Err(format!("{cmd} exited with {code}"))
    }
}

// ---------------------------------------------------------------------------
// 1

/// Literal transcription of the expected-usefulness formula, computed from
/// the raw trajectories without the production fracture set.
fn brute_force_usefulness(
    successful: &[&Trajectory],
    tasks: &[String],
    b: usize,
) -> (Vec<Vec<ActionId>>, Vec<[f64; 4]>) {
    let windows = |t: &Trajectory| -> Vec<Vec<ActionId>> {
        if t.steps.len() < b {
            return Vec::new();
        }
        (0..=t.steps.len() - b)
            .map(|i| t.steps[i..i + b].iter().map(|s| s.action_id).collect())
            .collect()
    };
    let mut clusters: Vec<Vec<ActionId>> = Vec::new();
    for t in successful {
        for w in windows(t) {
            if !clusters.contains(&w) {
                clusters.push(w);
            }
        }
    }
    let n_phi = clusters.len().max(2) as f64;
    let phi_s: usize = successful.iter().map(|t| windows(t).len()).sum();
    let scores = clusters
        .iter()
        .map(|c| {
            let big_n = tasks.len() as f64;
            let omega_sum = tasks
                .iter()
                .filter(|task| successful.iter().any(|t| &t.task_id == *task && windows(t).contains(c)))
                .count() as f64;
            let appearance = (omega_sum + 1.0) / (big_n + 1.0 + 1.0);
            let count_phi_s = successful
                .iter()
                .map(|t| windows(t).iter().filter(|w| *w == c).count())
                .sum::<usize>() as f64;
            let rel = count_phi_s / phi_s as f64;
            let mut entropy = 0.0;
            for t in successful {
                let w = windows(t);
                if w.is_empty() {
                    continue;
                }
                let p = w.iter().filter(|x| *x == c).count() as f64 / w.len() as f64;
                if p > 0.0 {
                    entropy -= p * (p.ln() / n_phi.ln());
                }
            }
            let entropy: f64 = if entropy == 0.0 { 0.0 } else { entropy };
            [appearance, rel, entropy, (appearance + rel + entropy) / 3.0]
        })
        .collect();
    (clusters, scores)
}

fn criterion_1(_: &Workspace) -> Verdict {
    let task_pool: Vec<_> = (0..5).map(|i| four_rooms(Pos::new(9, 1 + i))).collect();
    let mut rng = stream(1, "usefulness-corpora");
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    let corpora = 300;
    for _ in 0..corpora {
        let n_tasks = rng.gen_range(1..=5);
        let tasks: Vec<String> = task_pool[..n_tasks].iter().map(|t| t.task_id.clone()).collect();
        let mut trajs: Vec<Trajectory> = (0..rng.gen_range(1..=6))
            .map(|_| {
                let task = &task_pool[rng.gen_range(0..n_tasks)];
                let len = rng.gen_range(0..=20);
                // actions 0 and 1 only, so at most four sequences of length 2
                let mut t = random_trajectory(&mut rng, task, 2, len, 2);
                t.episode_return = if rng.gen_bool(0.7) { 0.9 } else { 0.1 };
                t
            })
            .collect();
        trajs[0].episode_return = 0.9;
        if trajs[0].steps.len() < 2 {
            let extra = random_trajectory(&mut rng, &task_pool[0], 2, 5, 2);
            trajs[0].steps.extend(extra.steps);
        }

        let start = Instant::now();
        let (successful, _) = fracos::fracture::filter_successful(&trajs, 0.5);
        let fset = FractureSet::from_trajectories(successful.iter().copied(), 2, 1, 4).unwrap();
        let cfg = ClusterConfig {
            strategy: Strategy::ExactSequence,
            min_cluster_size: 1,
            ..ClusterConfig::default()
        };
        let clustering = cluster_fractures(&fset, &cfg).unwrap();
        let inputs = usefulness_inputs(&fset, &clustering.labels, clustering.clusters.len(), &tasks);
        let produced: Vec<_> = inputs.iter().map(|i| expected_usefulness(i).unwrap()).collect();
        slowest = slowest.max(start.elapsed().as_secs_f64());

        let (sequences, oracle) = brute_force_usefulness(&successful, &tasks, 2);
        if sequences.len() != clustering.clusters.len() || sequences.len() > 4 {
            return verdict(
                false,
                format!("{} oracle clusters vs {}", sequences.len(), clustering.clusters.len()),
            );
        }
        for (cluster, score) in clustering.clusters.iter().zip(&produced) {
            let seq = cluster.members[0].actions.to_vec();
            let Some(k) = sequences.iter().position(|s| *s == seq) else {
                return verdict(false, format!("cluster {:?} unknown to the oracle", seq));
            };
            let ours = [score.appearance, score.rel_freq, score.entropy, score.total];
            for (a, b) in ours.iter().zip(&oracle[k]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    verdict(
        worst <= 1e-12 && slowest < 1.0,
        format!(
            "{corpora} corpora, max |diff| {worst:.1e}, slowest pipeline {:.2} ms",
            slowest * 1e3
        ),
    )
}

// ---------------------------------------------------------------------------
// 2

fn criterion_2(_: &Workspace) -> Verdict {
    let mut rng = stream(2, "beta-fixtures");
    let mut worst = 0.0f64;
    for i in 0..200 {
        let n = if i < 5 { 0 } else { rng.gen_range(0..80) };
        let rate = rng.gen_range(0.0..1.0);
        let omega: Vec<bool> = (0..n).map(|_| rng.gen_bool(rate)).collect();
        let (alpha, beta) = if i < 5 {
            let a = rng.gen_range(0.1..10.0);
            (a, a)
        } else {
            (rng.gen_range(0.05..20.0), rng.gen_range(0.05..20.0))
        };
        let hits = omega.iter().filter(|&&w| w).count() as f64;
        let posterior = Beta::new(alpha + hits, beta + n as f64 - hits).unwrap();
        let expected = posterior.mean().unwrap();
        let got = appearance_probability(&omega, alpha, beta).unwrap();
        worst = worst.max((got - expected).abs());
    }
    let prior = appearance_probability(&[], 1.0, 1.0).unwrap();
    verdict(
        worst <= 1e-12 && prior == 0.5,
        format!("200 fixtures, max |diff| {worst:.1e}, empty-data mean {prior}"),
    )
}

// ---------------------------------------------------------------------------
// 3

fn criterion_3(_: &Workspace) -> Verdict {
    let task = four_rooms(Pos::new(9, 9));
    let mut rng = stream(3, "fracture-count");
    let mut checked = 0;
    for i in 0..1000 {
        let n = rng.gen_range(0..60);
        let t = random_trajectory(&mut rng, &task, 4, n, 4);
        for b in 1..=4usize {
            let fr = extract_fractures(&t, i, b);
            let expected = (n + 1).saturating_sub(b);
            if fr.len() != expected {
                return verdict(
                    false,
                    format!("n={n} b={b}: {} fractures, expected {expected}", fr.len()),
                );
            }
            for (k, f) in fr.iter().enumerate() {
                let acts: Vec<ActionId> = t.steps[k..k + b].iter().map(|s| s.action_id).collect();
                if f.actions.to_vec() != acts || f.obs != t.steps[k].obs_digest || f.source.t != k {
                    return verdict(false, format!("window {k} of trajectory {i} is wrong"));
                }
            }
            checked += 1;
        }
    }
    verdict(true, format!("{checked} (trajectory, b) pairs match max(0, n-b+1)"))
}

// ---------------------------------------------------------------------------
// 4

fn criterion_4(_: &Workspace) -> Verdict {
    let mut rng = stream(4, "hierarchies");
    let goals = [Pos::new(9, 9), Pos::new(2, 9), Pos::new(9, 2)];
    let tasks: Vec<_> = goals.iter().map(|&g| four_rooms(g)).collect();
    let (mut runs, mut early, mut nested, mut max_steps) = (0u64, 0u64, 0u64, 0u32);
    for h_i in 0..10_000 {
        let task = &tasks[h_i % tasks.len()];
        let depth = rng.gen_range(1..=4);
        let obs_match = if rng.gen_bool(0.5) {
            ObsMatch::Seen
        } else {
            ObsMatch::Any
        };
        let h = random_hierarchy(&mut rng, task, depth, obs_match);
        let mut rt = OptionRuntime::new(&h);
        let free: Vec<Pos> = task
            .grid()
            .free_cells()
            .into_iter()
            .filter(|&p| p != task.grid().goal())
            .collect();
        for _ in 0..4 {
            let level = rng.gen_range(1..=depth);
            let ids = h.action_space.level_ids(level);
            let option = ActionId(rng.gen_range(ids.start..ids.end));
            // start where the option was seen so Seen-mode options can run
            let fraco = h.option(option).unwrap();
            let pos = if rng.gen_bool(0.7) {
                let member = fraco.cluster.members.choose(&mut rng).unwrap();
                free.iter()
                    .copied()
                    .find(|&p| task.digest_at(p) == member.obs)
                    .unwrap_or(free[0])
            } else {
                *free.choose(&mut rng).unwrap()
            };
            let out = match rt.execute(task, task.state_at(pos), option, 0.99) {
                Ok(out) => out,
                Err(OptionError::NotAvailable { .. }) => continue,
                Err(e) => return verdict(false, format!("hierarchy {h_i}: {e}")),
            };
            runs += 1;
            let cap = 2u32.pow(level);
            if out.steps > cap || out.max_depth > level || out.max_depth == 0 {
                return verdict(
                    false,
                    format!(
                        "hierarchy {h_i}: level {level} took {} steps at depth {}",
                        out.steps, out.max_depth
                    ),
                );
            }
            if out.terminated_early {
                early += 1;
                if out.steps >= cap {
                    return verdict(false, format!("early termination after {} of {cap} steps", out.steps));
                }
            }
            if out.max_depth > 1 {
                nested += 1;
            }
            max_steps = max_steps.max(out.steps);
        }
    }
    verdict(
        runs > 10_000 && early > 0 && nested > 0,
        format!("{runs} executions, {nested} nested, {early} early terminations, longest {max_steps} steps"),
    )
}

// ---------------------------------------------------------------------------
// 5

fn seed_aucs(curves: &Path, horizon: u64) -> BTreeMap<(String, u32, u64), f64> {
    per_seed_auc(&read_curves_csv(curves).unwrap(), horizon)
}

fn criterion_5(ws: &Workspace) -> Verdict {
    let start = Instant::now();
    let out = ws.path("exp1_a");
    if let Err(e) = run_experiment("exp1", &config_path("exp1_desk.toml"), &out) {
        return verdict(false, e);
    }
    let auc = seed_aucs(&out.join("curves.csv"), 100_000);
    let seeds: Vec<u64> = auc
        .keys()
        .map(|k| k.2)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let at = |d: u32, s: u64| auc[&("four_rooms".to_string(), d, s)];
    let d1_over_d0 = seeds.iter().filter(|&&s| at(1, s) > at(0, s)).count();
    let d2_ge_d1 = seeds.iter().filter(|&&s| at(2, s) >= at(1, s)).count();
    let mean = |d: u32| seeds.iter().map(|&s| at(d, s)).sum::<f64>() / seeds.len() as f64 / 1e5;
    verdict(
        seeds.len() == 10 && d1_over_d0 >= 8 && d2_ge_d1 >= 6,
        format!(
            "depth1 > depth0 on {d1_over_d0}/10, depth2 >= depth1 on {d2_ge_d1}/10; mean normalised AUC {:.3} / {:.3} / {:.3}; {:.0} s",
            mean(0),
            mean(1),
            mean(2),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6

fn criterion_6(ws: &Workspace) -> Verdict {
    let start = Instant::now();
    let path = config_path("exp2_desk.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let out = ws.path("exp2");
    if let Err(e) = run_experiment("exp2", &path, &out) {
        return verdict(false, e);
    }
    let auc = seed_aucs(&out.join("curves.csv"), cfg.test_budget_steps);
    let sizes = ["14x14", "21x21"];
    let beats = |size: &str, s: u64| auc[&(size.to_string(), 1, s)] > auc[&(size.to_string(), 0, s)];
    let both = cfg.seeds.iter().filter(|&&s| sizes.iter().all(|z| beats(z, s))).count();
    let per_size: Vec<String> = sizes
        .iter()
        .map(|z| {
            format!(
                "{z} {}/{}",
                cfg.seeds.iter().filter(|&&s| beats(z, s)).count(),
                cfg.seeds.len()
            )
        })
        .collect();
    verdict(
        2 * both > cfg.seeds.len(),
        format!(
            "depth1 > depth0 in both sizes on {both}/{} seeds (per size: {}); {:.0} s",
            cfg.seeds.len(),
            per_size.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 7

fn criterion_7(ws: &Workspace) -> Verdict {
    let config = config_path("exp1_desk.toml");
    let first = ws.path("exp1_a");
    if !first.join("curves.csv").is_file() {
        if let Err(e) = run_experiment("exp1", &config, &first) {
            return verdict(false, e);
        }
    }
    let second = ws.path("exp1_b");
    if let Err(e) = run_experiment("exp1", &config, &second) {
        return verdict(false, e);
    }
    let a = std::fs::read(first.join("curves.csv")).unwrap();
    let b = std::fs::read(second.join("curves.csv")).unwrap();
    let manifests_equal =
        std::fs::read(first.join("manifest.json")).unwrap() == std::fs::read(second.join("manifest.json")).unwrap();
    verdict(
        a == b && manifests_equal,
        format!(
            "curves.csv {} bytes, identical: {}, manifests identical: {manifests_equal}",
            a.len(),
            a == b
        ),
    )
}

// ---------------------------------------------------------------------------
// 8

fn criterion_8(_: &Workspace) -> Verdict {
    let task = four_rooms(Pos::new(9, 9));
    let mut rng = stream(8, "exact-contract");
    // skewed action use, so some sequences stay below the size floor
    let weights = [12u32, 6, 2, 1];
    let trajs: Vec<Trajectory> = (0..30)
        .map(|_| {
            let free = task.grid().free_cells();
            let steps = (0..rng.gen_range(2..25))
                .map(|_| {
                    let pos = *free.choose(&mut rng).unwrap();
                    let mut pick = rng.gen_range(0..weights.iter().sum::<u32>());
                    let a = weights.iter().position(|&w| {
                        if pick < w {
                            true
                        } else {
                            pick -= w;
                            false
                        }
                    });
                    TrajStep {
                        state_key: StateKey(pos),
                        obs_digest: task.digest_at(pos),
                        action_id: ActionId(a.unwrap() as u32),
                        reward: -0.001,
                    }
                })
                .collect();
            Trajectory {
                task_id: task.task_id.clone(),
                seed: 0,
                steps,
                episode_return: 1.0,
                success: true,
            }
        })
        .collect();
    let fset = FractureSet::from_trajectories(&trajs, 2, 1, 4).unwrap();
    let mut sizes = HashMap::new();
    for f in &fset.fractures {
        *sizes.entry(f.actions.to_vec()).or_insert(0usize) += 1;
    }
    let small_sequences = sizes.values().filter(|&&n| n < 15).count();
    let mut emitted = 0;
    for obs_match in [ObsMatch::Any, ObsMatch::Seen] {
        let cfg = ClusterConfig {
            strategy: Strategy::ExactSequence,
            obs_match,
            ..ClusterConfig::default()
        };
        let clustering = cluster_fractures(&fset, &cfg).unwrap();
        emitted = clustering.clusters.len();
        for c in &clustering.clusters {
            if c.members.len() < 15 {
                return verdict(
                    false,
                    format!("cluster {} has {} members", c.cluster_id, c.members.len()),
                );
            }
            for m in &c.members {
                if membership_probability(c, m).unwrap() != 1.0 {
                    return verdict(false, format!("member of cluster {} below probability 1", c.cluster_id));
                }
            }
        }
    }
    let g = GeneralisationStrength::default();
    let rule = g.strength == 0.01 && g.passes(0.995) && g.passes(0.9901) && g.passes(1.0) && !g.passes(0.98);
    verdict(
        rule && small_sequences > 0,
        format!(
            "{emitted} clusters from {} fractures ({small_sequences} sequences under 15 dropped); threshold passes 0.995, fails 0.98: {rule}",
            fset.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9

fn criterion_9(_: &Workspace) -> Verdict {
    let head = iqm(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut rng = stream(9, "iqm");
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // four copies of each value make the quartile cut land between elements
        let mut rep: Vec<f64> = v.iter().flat_map(|&x| [x; 4]).collect();
        rep.sort_by(f64::total_cmp);
        let mid = &rep[n..3 * n];
        let reference = mid.iter().sum::<f64>() / mid.len() as f64;
        worst = worst.max((iqm(&v).unwrap() - reference).abs());
    }
    verdict(
        head == 2.5 && worst <= 1e-12,
        format!("iqm([1,2,3,4]) = {head}, 1000 vectors max |diff| {worst:.1e}"),
    )
}

fn main() {
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let strict = std::env::var("FRACOS_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    let ws = Workspace {
        dir: tempfile::tempdir().unwrap(),
    };
    let criteria: [(u32, &str, Check); 9] = [
        (1, "usefulness oracle equivalence", criterion_1),
        (2, "appearance posterior mean", criterion_2),
        (3, "fracture-count law", criterion_3),
        (4, "option execution bounds", criterion_4),
        (5, "exp1 transfer speed-up (desk scale)", criterion_5),
        (6, "exp2 state generalisation (desk scale)", criterion_6),
        (7, "exp1 determinism", criterion_7),
        (8, "exact-sequence clustering contracts", criterion_8),
        (9, "IQM correctness", criterion_9),
    ];
    let reported_only = [5, 6];
    let mut fatal = Vec::new();
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let v = check(&ws);
        println!(
            "{} criterion {id} ({name}): {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed.push(id);
            if strict || !reported_only.contains(&id) {
                fatal.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
    }
    if !fatal.is_empty() {
        std::process::exit(1);
    }
}
