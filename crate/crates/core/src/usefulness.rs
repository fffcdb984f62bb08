//! Expected usefulness of fracture clusters and top-k selection.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fracture::FractureSet;

#[derive(Debug, Error)]
pub enum UsefulnessError {
    #[error("appearance prior needs alpha, beta > 0")]
    BadPrior,
    #[error("relative frequency needs 0 <= count <= size and size > 0 (got {count} of {size})")]
    BadFrequency { count: usize, size: usize },
    #[error("entropy log base must be at least 2 (got {0})")]
    BadBase(usize),
    #[error("trajectory with {count} matches out of {total} windows")]
    BadTrajectoryCount { count: usize, total: usize },
    #[error("score report: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsefulnessScore {
    pub appearance: f64,
    pub rel_freq: f64,
    pub entropy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsefulnessInputs {
    /// One appearance indicator per experienced task.
    pub omega: Vec<bool>,
    /// `(count of the cluster in the trajectory, fractures in the trajectory)`
    /// for each successful trajectory.
    pub counts_per_trajectory: Vec<(usize, usize)>,
    pub total_successful_fractures: usize,
    /// Log base of the entropy term: the number of clusters considered.
    pub n_phi: usize,
    pub alpha: f64,
    pub beta: f64,
}

/// Beta posterior mean of the per-task appearance rate.
pub fn appearance_probability(omega: &[bool], alpha: f64, beta: f64) -> Result<f64, UsefulnessError> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(UsefulnessError::BadPrior);
    }
    let hits = omega.iter().filter(|&&w| w).count() as f64;
    Ok((hits + alpha) / (omega.len() as f64 + alpha + beta))
}

pub fn relative_frequency(count: usize, size: usize) -> Result<f64, UsefulnessError> {
    if size == 0 || count > size {
        return Err(UsefulnessError::BadFrequency { count, size });
    }
    Ok(count as f64 / size as f64)
}

/// `-sum p log_n(p)` over trajectories, `p` being the share of the
/// trajectory's windows that fall in the cluster. Zero shares contribute 0.
pub fn entropy_of_usage(counts_per_trajectory: &[(usize, usize)], n_phi: usize) -> Result<f64, UsefulnessError> {
    if n_phi < 2 {
        return Err(UsefulnessError::BadBase(n_phi));
    }
    let ln_base = (n_phi as f64).ln();
    let mut h = 0.0;
    for &(count, total) in counts_per_trajectory {
        if total == 0 || count > total {
            return Err(UsefulnessError::BadTrajectoryCount { count, total });
        }
        if count > 0 {
            let p = count as f64 / total as f64;
            h -= p * p.ln() / ln_base;
        }
    }
    // -0.0 from a p = 1 term reads better as 0
    Ok(h.max(0.0))
}

pub fn expected_usefulness(inputs: &UsefulnessInputs) -> Result<UsefulnessScore, UsefulnessError> {
    let appearance = appearance_probability(&inputs.omega, inputs.alpha, inputs.beta)?;
    let in_phi_s = inputs.counts_per_trajectory.iter().map(|c| c.0).sum();
    let rel_freq = relative_frequency(in_phi_s, inputs.total_successful_fractures)?;
    let entropy = entropy_of_usage(&inputs.counts_per_trajectory, inputs.n_phi)?;
    Ok(UsefulnessScore {
        appearance,
        rel_freq,
        entropy,
        total: (appearance + rel_freq + entropy) / 3.0,
    })
}

/// Builds per-cluster inputs from the successful fractures and their labels.
///
/// `experienced_tasks` lists every task the agents trained on, successful or
/// not; `n_clusters` is floored at 2 for the entropy base.
pub fn usefulness_inputs(
    successful: &FractureSet,
    labels: &[Option<usize>],
    n_clusters: usize,
    experienced_tasks: &[String],
) -> Vec<UsefulnessInputs> {
    let mut traj_totals: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    for f in &successful.fractures {
        *traj_totals
            .entry((f.source.task_id.as_str(), f.source.trajectory))
            .or_default() += 1;
    }
    let traj_slot: HashMap<(&str, usize), usize> = traj_totals.keys().enumerate().map(|(i, k)| (*k, i)).collect();
    let task_slot: HashMap<&str, usize> = experienced_tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let mut counts = vec![vec![0usize; traj_totals.len()]; n_clusters];
    let mut omega = vec![vec![false; experienced_tasks.len()]; n_clusters];
    for (f, label) in successful.fractures.iter().zip(labels) {
        let Some(c) = *label else { continue };
        counts[c][traj_slot[&(f.source.task_id.as_str(), f.source.trajectory)]] += 1;
        if let Some(&t) = task_slot.get(f.source.task_id.as_str()) {
            omega[c][t] = true;
        }
    }
    let totals: Vec<usize> = traj_totals.values().copied().collect();
    (0..n_clusters)
        .map(|c| UsefulnessInputs {
            omega: omega[c].clone(),
            counts_per_trajectory: counts[c].iter().copied().zip(totals.iter().copied()).collect(),
            total_successful_fractures: successful.len(),
            n_phi: n_clusters.max(2),
            alpha: 1.0,
            beta: 1.0,
        })
        .collect()
}

/// Orders by total, then appearance, then relative frequency (all
/// descending), then cluster id ascending, and keeps the first `k`.
pub fn select_top_k(scores: &[(usize, UsefulnessScore)], k: usize) -> Vec<usize> {
    let mut order: Vec<&(usize, UsefulnessScore)> = scores.iter().collect();
    order.sort_by(|(ia, a), (ib, b)| {
        b.total
            .total_cmp(&a.total)
            .then(b.appearance.total_cmp(&a.appearance))
            .then(b.rel_freq.total_cmp(&a.rel_freq))
            .then(ia.cmp(ib))
    });
    order.into_iter().take(k).map(|(id, _)| *id).collect()
}

#[derive(Debug, Serialize)]
struct ReportRow {
    cluster_id: usize,
    level: u32,
    appearance: f64,
    rel_freq: f64,
    entropy: f64,
    total: f64,
    selected: bool,
}

pub fn write_score_report(
    path: &Path,
    level: u32,
    scores: &[(usize, UsefulnessScore)],
    selected: &[usize],
) -> Result<(), UsefulnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut rows: Vec<&(usize, UsefulnessScore)> = scores.iter().collect();
    rows.sort_by_key(|r| r.0);
    for (id, s) in rows {
        w.serialize(ReportRow {
            cluster_id: *id,
            level,
            appearance: s.appearance,
            rel_freq: s.rel_freq,
            entropy: s.entropy,
            total: s.total,
            selected: selected.contains(id),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
