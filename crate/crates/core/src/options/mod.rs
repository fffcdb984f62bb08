//! Fracture cluster options: initiation by discrete search over candidate
//! fractures, recursive execution, and multi-level hierarchies.

mod bundle;
mod discovery;
mod runtime;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ActionId, ActionSpace};
use crate::clustering::{ClusterError, Clusterer, FractureCluster, GeneralisationStrength, Strategy};
use crate::fracture::{Fracture, FractureError};
use crate::gridworld::{GridError, ObsDigest};
use crate::usefulness::{UsefulnessError, UsefulnessScore};

pub use bundle::BUNDLE_VERSION;
pub use discovery::{build_hierarchy_level, DiscoveryConfig, LevelReport};
pub use runtime::{OptionOutcome, OptionRuntime};

/// Default ceiling on `|A|^b` candidate fractures per initiation query.
pub const DEFAULT_CANDIDATE_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum OptionError {
    #[error("{count} candidate fractures exceed the cap of {cap}")]
    TooManyCandidates { count: String, cap: usize },
    #[error("option {0} is not part of the hierarchy")]
    UnknownOption(ActionId),
    #[error("option {option} cannot be initiated from observation {obs}")]
    NotAvailable { option: ActionId, obs: ObsDigest },
    #[error("bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Fracture(#[from] FractureError),
    #[error(transparent)]
    Usefulness(#[from] UsefulnessError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("bundle io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bundle json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A selected cluster promoted to an option.
#[derive(Debug, Clone, PartialEq)]
pub struct FraCO {
    pub option_id: ActionId,
    pub level: u32,
    pub cluster: FractureCluster,
    pub b: usize,
    pub strength: GeneralisationStrength,
    /// Actions `0..universe` may appear in this option's fractures.
    pub universe: usize,
}

/// Candidate fractures that pass the membership threshold, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct InitiationResult {
    pub candidates: Vec<(Fracture, f64)>,
}

impl InitiationResult {
    pub fn is_available(&self) -> bool {
        !self.candidates.is_empty()
    }

    pub fn best(&self) -> Option<&Fracture> {
        self.candidates.first().map(|(f, _)| f)
    }
}

fn check_cap(universe: usize, b: usize, cap: usize) -> Result<(), OptionError> {
    let count = (universe as u128).checked_pow(b as u32);
    match count {
        Some(c) if c <= cap as u128 => Ok(()),
        Some(c) => Err(OptionError::TooManyCandidates {
            count: c.to_string(),
            cap,
        }),
        None => Err(OptionError::TooManyCandidates {
            count: format!("{universe}^{b}"),
            cap,
        }),
    }
}

/// Calls `visit` on every sequence in `0..universe` of length `b`, in
/// lexicographic order.
fn for_each_sequence(universe: usize, b: usize, mut visit: impl FnMut(&[ActionId])) {
    if universe == 0 {
        return;
    }
    let mut seq = vec![ActionId(0); b];
    loop {
        visit(&seq);
        let mut slot = b;
        loop {
            if slot == 0 {
                return;
            }
            slot -= 1;
            if seq[slot].index() + 1 < universe {
                seq[slot].0 += 1;
                break;
            }
            seq[slot] = ActionId(0);
        }
    }
}

/// Every length-`b` action sequence over `0..universe` paired with `obs`.
pub fn enumerate_candidate_fractures(
    obs: ObsDigest,
    universe: usize,
    b: usize,
    cap: usize,
) -> Result<Vec<Fracture>, OptionError> {
    check_cap(universe, b, cap)?;
    let mut out = Vec::new();
    for_each_sequence(universe, b, |seq| out.push(Fracture::probe(obs, seq.to_vec())));
    Ok(out)
}

/// Candidates in `obs` that pass the option's membership threshold, sorted by
/// probability (descending) with the lexicographically smaller sequence first
/// among ties.
pub fn initiation(obs: ObsDigest, fraco: &FraCO, cap: usize) -> Result<InitiationResult, OptionError> {
    check_cap(fraco.universe, fraco.b, cap)?;
    let cluster = &fraco.cluster;
    let strength = &fraco.strength;
    let mut candidates: Vec<(Fracture, f64)> = Vec::new();
    let mut keep = |seq: &[ActionId], p: f64| {
        if strength.passes(p) {
            candidates.push((Fracture::probe(obs, seq.to_vec()), p));
        }
    };

    match (cluster.strategy, strength.max_passing_distance(cluster.sigma)) {
        (Strategy::Density, Some(d_max)) => {
            // only members close enough in observation can make a candidate pass
            let limit = d_max * d_max + 1e-9;
            let near: Vec<(u32, &[ActionId])> = cluster
                .unique_members()
                .iter()
                .filter_map(|(o, a)| {
                    let m = obs.mismatches(o);
                    (2.0 * m as f64 <= limit).then_some((m, a.as_slice()))
                })
                .collect();
            if !near.is_empty() {
                for_each_sequence(fraco.universe, fraco.b, |seq| {
                    let nearest = near
                        .iter()
                        .map(|(m, a)| m + a.iter().zip(seq).filter(|(x, y)| x != y).count() as u32)
                        .min()
                        .expect("non-empty");
                    let p = crate::clustering::density_probability((2.0 * nearest as f64).sqrt(), cluster.sigma);
                    keep(seq, p);
                });
            }
        }
        _ => for_each_sequence(fraco.universe, fraco.b, |seq| keep(seq, cluster.probability(&obs, seq))),
    }
    // stable: enumeration order is already lexicographic
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(InitiationResult { candidates })
}

/// One discovery round as stored in a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: u32,
    pub clusterer: Clusterer,
    pub scores: Vec<(usize, UsefulnessScore)>,
    /// Cluster ids promoted to options, in option-id order.
    pub selected: Vec<usize>,
}

/// Options of every level plus the action space they extend.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub action_space: ActionSpace,
    pub b: usize,
    pub strength: GeneralisationStrength,
    pub candidate_cap: usize,
    pub levels: Vec<LevelRecord>,
    options: Vec<FraCO>,
}

impl Hierarchy {
    pub fn new(b: usize, strength: GeneralisationStrength) -> Self {
        Hierarchy {
            action_space: ActionSpace::primitives_only(),
            b,
            strength,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            levels: Vec::new(),
            options: Vec::new(),
        }
    }

    pub fn depth(&self) -> u32 {
        self.action_space.depth()
    }

    pub fn options(&self) -> &[FraCO] {
        &self.options
    }

    pub fn option(&self, id: ActionId) -> Option<&FraCO> {
        let first = self.action_space.primitives;
        id.index().checked_sub(first).and_then(|i| self.options.get(i))
    }

    /// Appends a level whose options are the `selected` clusters of `clusterer`.
    pub fn push_level(
        &mut self,
        clusterer: Clusterer,
        scores: Vec<(usize, UsefulnessScore)>,
        selected: Vec<usize>,
    ) -> Result<std::ops::Range<u32>, OptionError> {
        let level = self.depth() + 1;
        if clusterer.level != level || clusterer.b != self.b {
            return Err(OptionError::Bundle(format!(
                "clusterer for level {} with b={} cannot extend depth {} with b={}",
                clusterer.level,
                clusterer.b,
                self.depth(),
                self.b
            )));
        }
        let universe = self.action_space.len();
        let mut fracos = Vec::with_capacity(selected.len());
        for &cid in &selected {
            let cluster = clusterer
                .clusters
                .iter()
                .find(|c| c.cluster_id == cid)
                .ok_or_else(|| OptionError::Bundle(format!("selected cluster {cid} missing")))?;
            if cluster.num_actions != universe {
                return Err(OptionError::Bundle(format!(
                    "cluster {cid} was mined over {} actions, level {level} has {universe}",
                    cluster.num_actions
                )));
            }
            fracos.push(cluster.clone());
        }
        let ids = self.action_space.push_level(fracos.len());
        for (id, cluster) in ids.clone().zip(fracos) {
            self.options.push(FraCO {
                option_id: ActionId(id),
                level,
                cluster,
                b: self.b,
                strength: self.strength,
                universe,
            });
        }
        self.levels.push(LevelRecord {
            level,
            clusterer,
            scores,
            selected,
        });
        Ok(ids)
    }

    /// The first `depth` levels of this hierarchy.
    pub fn truncated(&self, depth: u32) -> Hierarchy {
        let mut h = Hierarchy::new(self.b, self.strength);
        h.candidate_cap = self.candidate_cap;
        for rec in self.levels.iter().take(depth as usize) {
            h.push_level(rec.clusterer.clone(), rec.scores.clone(), rec.selected.clone())
                .expect("prefix of a valid hierarchy");
        }
        h
    }
}
