//! Fractures: an observation paired with the `b` actions that followed it.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ActionId, Trajectory};
use crate::gridworld::{CellKind, ObsDigest, VIEW_SIZE};

const DIRECTION_SLOTS: usize = 8;

#[derive(Debug, Error)]
pub enum FractureError {
    #[error("chain length must be at least 1")]
    ZeroChain,
    #[error("action {action} is outside the level-{level} action space of {universe} actions")]
    UnknownAction {
        action: ActionId,
        level: u32,
        universe: usize,
    },
    #[error("fracture export: {0}")]
    Io(#[from] std::io::Error),
    #[error("fracture export: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FractureSource {
    pub task_id: String,
    pub trajectory: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fracture {
    pub obs: ObsDigest,
    pub actions: Vec<ActionId>,
    pub source: FractureSource,
}

impl Fracture {
    /// A fracture not tied to any trajectory, e.g. an initiation candidate.
    pub fn probe(obs: ObsDigest, actions: Vec<ActionId>) -> Self {
        Fracture {
            obs,
            actions,
            source: FractureSource {
                task_id: String::new(),
                trajectory: 0,
                t: 0,
            },
        }
    }

    pub fn b(&self) -> usize {
        self.actions.len()
    }
}

/// Fractures mined at one hierarchy level with one chain length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractureSet {
    pub fractures: Vec<Fracture>,
    pub b: usize,
    pub level: u32,
    /// Size of the action universe the fractures were mined from.
    pub num_actions: usize,
}

impl FractureSet {
    /// Mines every trajectory; `trajectory` indices in the sources follow the
    /// slice order. Actions must lie in `0..universe`.
    pub fn from_trajectories<'a>(
        trajectories: impl IntoIterator<Item = &'a Trajectory>,
        b: usize,
        level: u32,
        universe: usize,
    ) -> Result<Self, FractureError> {
        if b == 0 {
            return Err(FractureError::ZeroChain);
        }
        let mut fractures = Vec::new();
        for (i, traj) in trajectories.into_iter().enumerate() {
            for f in extract_fractures(traj, i, b) {
                if let Some(&bad) = f.actions.iter().find(|a| a.index() >= universe) {
                    return Err(FractureError::UnknownAction {
                        action: bad,
                        level,
                        universe,
                    });
                }
                fractures.push(f);
            }
        }
        Ok(FractureSet {
            fractures,
            b,
            level,
            num_actions: universe,
        })
    }

    pub fn len(&self) -> usize {
        self.fractures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractures.is_empty()
    }
}

/// Sliding window of width `b` over the decisions of one trajectory.
pub fn extract_fractures(trajectory: &Trajectory, trajectory_index: usize, b: usize) -> Vec<Fracture> {
    let steps = &trajectory.steps;
    if b == 0 || steps.len() < b {
        return Vec::new();
    }
    (0..=steps.len() - b)
        .map(|t| Fracture {
            obs: steps[t].obs_digest,
            actions: steps[t..t + b].iter().map(|s| s.action_id).collect(),
            source: FractureSource {
                task_id: trajectory.task_id.clone(),
                trajectory: trajectory_index,
                t,
            },
        })
        .collect()
}

/// Trajectories whose return strictly exceeds `threshold`, and their task ids.
pub fn filter_successful(trajectories: &[Trajectory], threshold: f64) -> (Vec<&Trajectory>, BTreeSet<String>) {
    let kept: Vec<&Trajectory> = trajectories.iter().filter(|t| t.episode_return > threshold).collect();
    let tasks = kept.iter().map(|t| t.task_id.clone()).collect();
    (kept, tasks)
}

pub fn vector_len(b: usize, num_actions: usize) -> usize {
    VIEW_SIZE * VIEW_SIZE * CellKind::ALL.len() + DIRECTION_SLOTS + b * num_actions
}

/// One-hot encoding: window cells, direction sector, then one block per chain slot.
pub fn vectorize(fracture: &Fracture, num_actions: usize) -> Vec<f64> {
    let mut v = vec![0.0; vector_len(fracture.b(), num_actions)];
    let cats = CellKind::ALL.len();
    for r in 0..VIEW_SIZE {
        for c in 0..VIEW_SIZE {
            v[(r * VIEW_SIZE + c) * cats + fracture.obs.cell(r, c) as usize] = 1.0;
        }
    }
    let base = VIEW_SIZE * VIEW_SIZE * cats;
    v[base + fracture.obs.direction() as usize] = 1.0;
    let base = base + DIRECTION_SLOTS;
    for (slot, a) in fracture.actions.iter().enumerate() {
        v[base + slot * num_actions + a.index()] = 1.0;
    }
    v
}

/// Number of differing one-hot blocks between two fractures of equal length.
pub fn mismatch_count(obs_a: &ObsDigest, acts_a: &[ActionId], obs_b: &ObsDigest, acts_b: &[ActionId]) -> u32 {
    obs_a.mismatches(obs_b) + acts_a.iter().zip(acts_b).filter(|(x, y)| x != y).count() as u32
}

/// Euclidean distance between the one-hot vectors of two fractures, without
/// materialising them: each differing block contributes 2 to the squared norm.
pub fn fracture_distance(a: &Fracture, b: &Fracture) -> f64 {
    (2.0 * mismatch_count(&a.obs, &a.actions, &b.obs, &b.actions) as f64).sqrt()
}

#[derive(Serialize)]
struct ExportRecord<'a> {
    level: u32,
    b: usize,
    obs_digest: &'a ObsDigest,
    actions: &'a [ActionId],
    source: &'a FractureSource,
}

/// JSONL export for external embedding or plotting tools.
pub fn export_fractures(path: &Path, set: &FractureSet) -> Result<(), FractureError> {
    let mut out = BufWriter::new(File::create(path)?);
    for f in &set.fractures {
        let rec = ExportRecord {
            level: set.level,
            b: set.b,
            obs_digest: &f.obs,
            actions: &f.actions,
            source: &f.source,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{StateKey, TrajStep};
    use crate::gridworld::Pos;
    use proptest::prelude::*;

    pub(crate) fn synthetic(task: &str, actions: &[u32], ret: f64) -> Trajectory {
        Trajectory {
            task_id: task.into(),
            seed: 0,
            steps: actions
                .iter()
                .enumerate()
                .map(|(i, &a)| TrajStep {
                    state_key: StateKey(Pos::new(1, i)),
                    obs_digest: ObsDigest(i as u128),
                    action_id: ActionId(a),
                    reward: -0.001,
                })
                .collect(),
            episode_return: ret,
            success: false,
        }
    }

    #[test]
    fn window_counts() {
        let t = synthetic("a", &[0, 1, 2, 3, 0, 1, 2, 3, 0, 1], 1.0);
        assert_eq!(extract_fractures(&t, 0, 2).len(), 9);
        assert_eq!(extract_fractures(&t, 0, 10).len(), 1);
        assert_eq!(extract_fractures(&synthetic("a", &[0], 1.0), 0, 2).len(), 0);
        let f = &extract_fractures(&t, 4, 3)[2];
        assert_eq!(f.actions, vec![ActionId(2), ActionId(3), ActionId(0)]);
        assert_eq!(f.obs, ObsDigest(2));
        assert_eq!(f.source.trajectory, 4);
        assert_eq!(f.source.t, 2);
    }

    #[test]
    fn success_is_strict() {
        let ts = vec![
            synthetic("a", &[0], 0.98),
            synthetic("b", &[0], 0.5),
            synthetic("c", &[0], 0.97),
        ];
        let (kept, tasks) = filter_successful(&ts, 0.97);
        assert_eq!(kept.len(), 1);
        assert_eq!(tasks.into_iter().collect::<Vec<_>>(), vec!["a".to_string()]);
        assert!(filter_successful(&ts, 0.99).0.is_empty());
        assert_eq!(filter_successful(&ts, f64::NEG_INFINITY).0.len(), 3);
        assert!(filter_successful(&ts, f64::INFINITY).0.is_empty());
    }

    #[test]
    fn unknown_actions_rejected() {
        let t = synthetic("a", &[0, 7, 1], 1.0);
        assert!(matches!(
            FractureSet::from_trajectories([&t], 2, 1, 4),
            Err(FractureError::UnknownAction { .. })
        ));
        assert!(FractureSet::from_trajectories([&t], 2, 2, 8).is_ok());
        assert!(matches!(
            FractureSet::from_trajectories([&t], 0, 1, 8),
            Err(FractureError::ZeroChain)
        ));
    }

    #[test]
    fn vector_length_golden() {
        assert_eq!(vector_len(2, 4), 212);
        let f = Fracture::probe(ObsDigest(0), vec![ActionId(1), ActionId(3)]);
        let v = vectorize(&f, 4);
        assert_eq!(v.len(), 212);
        assert_eq!(v.iter().sum::<f64>(), 49.0 + 1.0 + 2.0);
    }

    #[test]
    fn last_action_only_changes_last_block() {
        let a = Fracture::probe(ObsDigest(12345), vec![ActionId(1), ActionId(3)]);
        let b = Fracture::probe(ObsDigest(12345), vec![ActionId(1), ActionId(0)]);
        let (va, vb) = (vectorize(&a, 4), vectorize(&b, 4));
        assert_eq!(va, vectorize(&a, 4));
        let diff: Vec<usize> = (0..va.len()).filter(|&i| va[i] != vb[i]).collect();
        assert!(diff.iter().all(|&i| i >= 208), "{diff:?}");
        assert_eq!(diff.len(), 2);
    }

    fn digest_strategy() -> impl Strategy<Value = ObsDigest> {
        (any::<u128>(), 0u128..8).prop_map(|(bits, dir)| ObsDigest((bits & ((1u128 << 98) - 1)) | (dir << 98)))
    }

    proptest! {
        #[test]
        fn window_law(n in 0usize..40, b in 1usize..5) {
            let acts: Vec<u32> = (0..n as u32).map(|i| i % 4).collect();
            let t = synthetic("x", &acts, 0.0);
            let fs = extract_fractures(&t, 0, b);
            prop_assert_eq!(fs.len(), (n + 1).saturating_sub(b));
            for (i, f) in fs.iter().enumerate() {
                prop_assert_eq!(f.source.t, i);
            }
        }

        #[test]
        fn structured_distance_matches_euclid(
            oa in digest_strategy(), ob in digest_strategy(),
            aa in prop::collection::vec(0u32..6, 2), ab in prop::collection::vec(0u32..6, 2),
        ) {
            let fa = Fracture::probe(oa, aa.into_iter().map(ActionId).collect());
            let fb = Fracture::probe(ob, ab.into_iter().map(ActionId).collect());
            let (va, vb) = (vectorize(&fa, 6), vectorize(&fb, 6));
            let euclid = va.iter().zip(&vb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!((euclid - fracture_distance(&fa, &fb)).abs() < 1e-12);
            // injective: distinct fractures give distinct vectors
            prop_assert_eq!(va == vb, fa.obs == fb.obs && fa.actions == fb.actions);
        }
    }
}
