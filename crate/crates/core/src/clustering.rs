//! Fracture clusters and the membership predictor used for option initiation.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::ActionId;
use crate::fracture::{mismatch_count, vectorize, Fracture, FractureSet};
use crate::gridworld::ObsDigest;

pub const CLUSTERER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("cannot cluster an empty fracture set")]
    EmptySet,
    #[error("invalid cluster config: {0}")]
    BadConfig(String),
    #[error("fracture does not fit cluster {cluster_id}: {reason}")]
    Mismatch { cluster_id: usize, reason: String },
    #[error("unsupported clusterer version {0}")]
    Version(u32),
    #[error("clusterer io: {0}")]
    Io(#[from] std::io::Error),
    #[error("clusterer json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ExactSequence,
    #[default]
    Density,
}

/// How exact-sequence clusters treat the observation part of a fracture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMatch {
    /// Only the action sequence matters.
    #[default]
    Any,
    /// The observation must also have been seen among the members.
    Seen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub strategy: Strategy,
    pub min_cluster_size: usize,
    /// Weighted neighbourhood count (self included) that makes a point a core point.
    pub min_samples: usize,
    pub distance_metric: DistanceMetric,
    /// Euclidean radius on one-hot fracture vectors; density strategy only.
    pub neighborhood_radius: f64,
    pub obs_match: ObsMatch,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            strategy: Strategy::Density,
            min_cluster_size: 15,
            min_samples: 1,
            distance_metric: DistanceMetric::Euclidean,
            neighborhood_radius: 2.0,
            obs_match: ObsMatch::Any,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.min_cluster_size == 0 {
            return Err(ClusterError::BadConfig("min_cluster_size must be at least 1".into()));
        }
        if self.min_samples == 0 {
            return Err(ClusterError::BadConfig("min_samples must be at least 1".into()));
        }
        if !(self.neighborhood_radius >= 0.0 && self.neighborhood_radius.is_finite()) {
            return Err(ClusterError::BadConfig(
                "neighborhood_radius must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centroid {
    Sequence(Vec<ActionId>),
    Vector(Vec<f64>),
}

/// Deduplicated members, rebuilt from `members` after loading.
#[derive(Debug, Clone, Default, PartialEq)]
struct MemberIndex {
    unique: Vec<(ObsDigest, Vec<ActionId>)>,
    seen_obs: HashSet<ObsDigest>,
}

impl MemberIndex {
    fn build(members: &[Fracture]) -> Self {
        let mut seen = HashSet::new();
        let mut unique = Vec::new();
        for m in members {
            if seen.insert((m.obs, m.actions.clone())) {
                unique.push((m.obs, m.actions.clone()));
            }
        }
        MemberIndex {
            seen_obs: members.iter().map(|m| m.obs).collect(),
            unique,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractureCluster {
    pub cluster_id: usize,
    pub level: u32,
    pub b: usize,
    pub num_actions: usize,
    pub strategy: Strategy,
    pub obs_match: ObsMatch,
    pub members: Vec<Fracture>,
    pub centroid: Centroid,
    /// Median nearest-neighbour distance between members (density only).
    pub sigma: f64,
    #[serde(skip)]
    index: MemberIndex,
}

impl FractureCluster {
    fn new(cluster_id: usize, fset: &FractureSet, cfg: &ClusterConfig, members: Vec<Fracture>) -> Self {
        let index = MemberIndex::build(&members);
        let (centroid, sigma) = match cfg.strategy {
            Strategy::ExactSequence => (Centroid::Sequence(members[0].actions.clone()), 0.0),
            Strategy::Density => {
                let mut mean = vec![0.0; crate::fracture::vector_len(fset.b, fset.num_actions)];
                for m in &members {
                    for (acc, x) in mean.iter_mut().zip(vectorize(m, fset.num_actions)) {
                        *acc += x;
                    }
                }
                let n = members.len() as f64;
                mean.iter_mut().for_each(|x| *x /= n);
                (Centroid::Vector(mean), median_nn_distance(&members))
            }
        };
        FractureCluster {
            cluster_id,
            level: fset.level,
            b: fset.b,
            num_actions: fset.num_actions,
            strategy: cfg.strategy,
            obs_match: cfg.obs_match,
            members,
            centroid,
            sigma,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Distinct (observation, actions) pairs among the members.
    pub fn unique_members(&self) -> &[(ObsDigest, Vec<ActionId>)] {
        &self.index.unique
    }

    pub fn has_seen(&self, obs: &ObsDigest) -> bool {
        self.index.seen_obs.contains(obs)
    }

    fn rebuild_index(&mut self) {
        self.index = MemberIndex::build(&self.members);
    }

    fn check(&self, fracture: &Fracture) -> Result<(), ClusterError> {
        let fail = |reason: String| {
            Err(ClusterError::Mismatch {
                cluster_id: self.cluster_id,
                reason,
            })
        };
        if fracture.b() != self.b {
            return fail(format!("chain length {} != {}", fracture.b(), self.b));
        }
        if let Some(a) = fracture.actions.iter().find(|a| a.index() >= self.num_actions) {
            return fail(format!("action {a} is not below level {}", self.level));
        }
        Ok(())
    }

    /// Membership probability without the level/length check.
    pub fn probability(&self, obs: &ObsDigest, actions: &[ActionId]) -> f64 {
        match self.strategy {
            Strategy::ExactSequence => {
                let Centroid::Sequence(seq) = &self.centroid else {
                    return 0.0;
                };
                let obs_ok = self.obs_match == ObsMatch::Any || self.has_seen(obs);
                if obs_ok && seq.as_slice() == actions {
                    1.0
                } else {
                    0.0
                }
            }
            Strategy::Density => {
                let nearest = self
                    .index
                    .unique
                    .iter()
                    .map(|(o, a)| mismatch_count(obs, actions, o, a))
                    .min()
                    .unwrap_or(u32::MAX);
                density_probability((2.0 * nearest as f64).sqrt(), self.sigma)
            }
        }
    }
}

/// `exp(-d / sigma)`; with `sigma = 0` only exact members have probability 1.
pub fn density_probability(d: f64, sigma: f64) -> f64 {
    if d == 0.0 {
        1.0
    } else if sigma > 0.0 {
        (-d / sigma).exp()
    } else {
        0.0
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Median over members of the distance to the closest other member.
fn median_nn_distance(members: &[Fracture]) -> f64 {
    if members.len() < 2 {
        return 0.0;
    }
    let mut counts: HashMap<(ObsDigest, &[ActionId]), usize> = HashMap::new();
    let mut unique: Vec<(ObsDigest, &[ActionId])> = Vec::new();
    for m in members {
        let key = (m.obs, m.actions.as_slice());
        let c = counts.entry(key).or_insert(0);
        if *c == 0 {
            unique.push(key);
        }
        *c += 1;
    }
    let mut nn = Vec::with_capacity(members.len());
    for (i, key) in unique.iter().enumerate() {
        let mult = counts[key];
        let d = if mult > 1 {
            0.0
        } else {
            let m = unique
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| mismatch_count(&key.0, key.1, &o.0, o.1))
                .min()
                .unwrap_or(0);
            (2.0 * m as f64).sqrt()
        };
        nn.extend(std::iter::repeat_n(d, mult));
    }
    median(nn)
}

/// Clusters plus a label per input fracture (`None` = noise).
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub clusters: Vec<FractureCluster>,
    pub labels: Vec<Option<usize>>,
}

pub fn cluster_fractures(fset: &FractureSet, cfg: &ClusterConfig) -> Result<Clustering, ClusterError> {
    cfg.validate()?;
    if fset.is_empty() {
        return Err(ClusterError::EmptySet);
    }
    let raw = match cfg.strategy {
        Strategy::ExactSequence => sequence_labels(fset),
        Strategy::Density => density_labels(fset, cfg),
    };
    // drop undersized groups and renumber the rest in order of first appearance
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for l in raw.iter().flatten() {
        *sizes.entry(*l).or_default() += 1;
    }
    let mut renumber: HashMap<usize, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(raw.len());
    for l in &raw {
        let new = l.filter(|l| sizes[l] >= cfg.min_cluster_size).map(|l| {
            let next = renumber.len();
            *renumber.entry(l).or_insert(next)
        });
        labels.push(new);
    }
    let mut grouped: Vec<Vec<Fracture>> = vec![Vec::new(); renumber.len()];
    for (f, l) in fset.fractures.iter().zip(&labels) {
        if let Some(l) = l {
            grouped[*l].push(f.clone());
        }
    }
    let clusters = grouped
        .into_iter()
        .enumerate()
        .map(|(id, members)| FractureCluster::new(id, fset, cfg, members))
        .collect();
    Ok(Clustering { clusters, labels })
}

fn sequence_labels(fset: &FractureSet) -> Vec<Option<usize>> {
    let mut ids: HashMap<&[ActionId], usize> = HashMap::new();
    fset.fractures
        .iter()
        .map(|f| {
            let next = ids.len();
            Some(*ids.entry(f.actions.as_slice()).or_insert(next))
        })
        .collect()
}

/// DBSCAN over distinct fractures, each weighted by its multiplicity.
/// Seeds are expanded in order of first appearance.
fn density_labels(fset: &FractureSet, cfg: &ClusterConfig) -> Vec<Option<usize>> {
    let mut ids: HashMap<(ObsDigest, &[ActionId]), usize> = HashMap::new();
    let mut unique: Vec<(ObsDigest, &[ActionId])> = Vec::new();
    let mut weight: Vec<usize> = Vec::new();
    let point_of: Vec<usize> = fset
        .fractures
        .iter()
        .map(|f| {
            let key = (f.obs, f.actions.as_slice());
            let id = *ids.entry(key).or_insert_with(|| {
                unique.push(key);
                weight.push(0);
                unique.len() - 1
            });
            weight[id] += 1;
            id
        })
        .collect();

    // squared distance is twice the block mismatch count
    let max_mismatch = (cfg.neighborhood_radius * cfg.neighborhood_radius / 2.0 + 1e-9).floor() as u32;
    let u = unique.len();
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); u];
    for i in 0..u {
        neighbours[i].push(i);
        for j in i + 1..u {
            let m = mismatch_count(&unique[i].0, unique[i].1, &unique[j].0, unique[j].1);
            if m <= max_mismatch {
                neighbours[i].push(j);
                neighbours[j].push(i);
            }
        }
    }
    let core: Vec<bool> = neighbours
        .iter()
        .map(|n| n.iter().map(|&j| weight[j]).sum::<usize>() >= cfg.min_samples)
        .collect();

    let mut label: Vec<Option<usize>> = vec![None; u];
    let mut next = 0;
    for seed in 0..u {
        if label[seed].is_some() || !core[seed] {
            continue;
        }
        label[seed] = Some(next);
        let mut queue = VecDeque::from([seed]);
        while let Some(p) = queue.pop_front() {
            if !core[p] {
                continue;
            }
            for &q in &neighbours[p] {
                if label[q].is_none() {
                    label[q] = Some(next);
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    point_of.iter().map(|&p| label[p]).collect()
}

pub fn membership_probability(cluster: &FractureCluster, fracture: &Fracture) -> Result<f64, ClusterError> {
    cluster.check(fracture)?;
    Ok(cluster.probability(&fracture.obs, &fracture.actions))
}

/// How the generalisation strength is compared with `1 - p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Pass when `1 - p < strength`: only confident members pass.
    #[default]
    Confidence,
    /// Pass when `1 - p > strength`, the inequality exactly as printed.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneralisationStrength {
    pub strength: f64,
    pub mode: ThresholdMode,
}

impl Default for GeneralisationStrength {
    fn default() -> Self {
        GeneralisationStrength {
            strength: 0.01,
            mode: ThresholdMode::Confidence,
        }
    }
}

impl GeneralisationStrength {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(ClusterError::BadConfig(
                "generalisation strength must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn passes(&self, p: f64) -> bool {
        match self.mode {
            ThresholdMode::Confidence => self.strength >= 1.0 || 1.0 - p < self.strength,
            ThresholdMode::Literal => 1.0 - p > self.strength,
        }
    }

    /// Largest density distance that can still pass for a cluster of spread
    /// `sigma`, or `None` when no bound applies.
    pub fn max_passing_distance(&self, sigma: f64) -> Option<f64> {
        match self.mode {
            ThresholdMode::Confidence if self.strength < 1.0 => {
                if sigma > 0.0 {
                    Some(-sigma * (1.0 - self.strength).ln())
                } else {
                    Some(0.0)
                }
            }
            _ => None,
        }
    }
}

pub fn threshold_membership(
    cluster: &FractureCluster,
    fracture: &Fracture,
    strength: &GeneralisationStrength,
) -> Result<bool, ClusterError> {
    Ok(strength.passes(membership_probability(cluster, fracture)?))
}

/// Persisted form of one level's clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clusterer {
    pub version: u32,
    pub strategy: Strategy,
    pub b: usize,
    pub level: u32,
    pub config: ClusterConfig,
    pub clusters: Vec<FractureCluster>,
}

impl Clusterer {
    pub fn new(fset: &FractureSet, config: &ClusterConfig, clusters: Vec<FractureCluster>) -> Self {
        Clusterer {
            version: CLUSTERER_VERSION,
            strategy: config.strategy,
            b: fset.b,
            level: fset.level,
            config: config.clone(),
            clusters,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ClusterError> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        let mut c: Clusterer = serde_json::from_slice(&fs::read(path)?)?;
        if c.version != CLUSTERER_VERSION {
            return Err(ClusterError::Version(c.version));
        }
        c.clusters.iter_mut().for_each(FractureCluster::rebuild_index);
        Ok(c)
    }
}
