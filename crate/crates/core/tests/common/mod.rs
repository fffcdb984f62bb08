#![allow(dead_code)]

use std::path::PathBuf;

use fracos::agent::{ActionId, StateKey, TrajStep, Trajectory};
use fracos::clustering::{cluster_fractures, ClusterConfig, Clusterer, GeneralisationStrength, ObsMatch, Strategy};
use fracos::fracture::FractureSet;
use fracos::gridworld::{make_named_env, Pos, Task};
use fracos::options::Hierarchy;
use fracos::usefulness::UsefulnessScore;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn four_rooms(goal: Pos) -> Task {
    make_named_env("four_rooms", goal).unwrap()
}

/// A successful trajectory through random free cells with random action ids.
/// The dynamics are not followed; only the (observation, action) pairs matter.
pub fn random_trajectory<R: Rng>(
    rng: &mut R,
    task: &Task,
    universe: usize,
    len: usize,
    favour_from: usize,
) -> Trajectory {
    let free = task.grid().free_cells();
    let steps = (0..len)
        .map(|_| {
            let pos = *free.choose(rng).unwrap();
            // half the picks come from the newest level so nesting goes deep
            let a = if favour_from < universe && rng.gen_bool(0.5) {
                rng.gen_range(favour_from..universe)
            } else {
                rng.gen_range(0..universe)
            };
            TrajStep {
                state_key: StateKey(pos),
                obs_digest: task.digest_at(pos),
                action_id: ActionId(a as u32),
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
}

/// Hierarchy of exactly `depth` non-empty levels built from random fractures
/// with exact-sequence clusters.
pub fn random_hierarchy<R: Rng>(rng: &mut R, task: &Task, depth: u32, obs_match: ObsMatch) -> Hierarchy {
    let mut h = Hierarchy::new(2, GeneralisationStrength::default());
    let cfg = ClusterConfig {
        strategy: Strategy::ExactSequence,
        min_cluster_size: 1,
        obs_match,
        ..ClusterConfig::default()
    };
    for level in 1..=depth {
        let universe = h.action_space.len();
        let newest = h.action_space.level_ids(level - 1).start as usize;
        let trajs: Vec<Trajectory> = (0..rng.gen_range(1..4))
            .map(|_| {
                let len = rng.gen_range(2..10);
                random_trajectory(rng, task, universe, len, newest)
            })
            .collect();
        let fset = FractureSet::from_trajectories(&trajs, 2, level, universe).unwrap();
        let clustering = cluster_fractures(&fset, &cfg).unwrap();
        let n = clustering.clusters.len();
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(rng);
        ids.truncate(rng.gen_range(1..=n.min(6)));
        let scores = (0..n)
            .map(|c| {
                let s = UsefulnessScore {
                    appearance: 0.5,
                    rel_freq: 0.0,
                    entropy: 0.0,
                    total: 0.5 / 3.0,
                };
                (c, s)
            })
            .collect();
        let clusterer = Clusterer::new(&fset, &cfg, clustering.clusters);
        h.push_level(clusterer, scores, ids).unwrap();
    }
    h
}
