use serde::{Deserialize, Serialize};

use super::{Hierarchy, OptionError};
use crate::agent::Trajectory;
use crate::clustering::{cluster_fractures, ClusterConfig, Clusterer};
use crate::fracture::{filter_successful, FractureSet};
use crate::usefulness::{expected_usefulness, select_top_k, usefulness_inputs, UsefulnessScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub b: usize,
    pub k_options_per_level: usize,
    pub cluster: ClusterConfig,
    /// Minimum return a trajectory must strictly exceed to be mined.
    pub success_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub level: u32,
    pub n_trajectories: usize,
    pub n_successful: usize,
    pub n_successful_tasks: usize,
    pub n_fractures: usize,
    pub n_clusters: usize,
    pub scores: Vec<(usize, UsefulnessScore)>,
    pub selected: Vec<usize>,
}

/// One discovery round: mine, filter, cluster, score, select and append the
/// winners to `hierarchy` as the next level.
///
/// `experienced_tasks` names every task the trajectories could come from.
/// With no successful trajectory the level is added empty.
pub fn build_hierarchy_level(
    hierarchy: &mut Hierarchy,
    trajectories: &[Trajectory],
    experienced_tasks: &[String],
    cfg: &DiscoveryConfig,
) -> Result<LevelReport, OptionError> {
    if cfg.b != hierarchy.b {
        return Err(OptionError::Bundle(format!(
            "discovery b={} differs from hierarchy b={}",
            cfg.b, hierarchy.b
        )));
    }
    let level = hierarchy.depth() + 1;
    let universe = hierarchy.action_space.len();
    let (successful, tasks) = filter_successful(trajectories, cfg.success_threshold);
    let fset = FractureSet::from_trajectories(successful.iter().copied(), cfg.b, level, universe)?;
    let mut report = LevelReport {
        level,
        n_trajectories: trajectories.len(),
        n_successful: successful.len(),
        n_successful_tasks: tasks.len(),
        n_fractures: fset.len(),
        n_clusters: 0,
        scores: Vec::new(),
        selected: Vec::new(),
    };
    if fset.is_empty() {
        log::warn!("level {level}: no successful fractures, adding an empty level");
        hierarchy.push_level(Clusterer::new(&fset, &cfg.cluster, Vec::new()), Vec::new(), Vec::new())?;
        return Ok(report);
    }

    let clustering = cluster_fractures(&fset, &cfg.cluster)?;
    let n_clusters = clustering.clusters.len();
    let inputs = usefulness_inputs(&fset, &clustering.labels, n_clusters, experienced_tasks);
    let scores = inputs
        .iter()
        .enumerate()
        .map(|(id, i)| Ok((id, expected_usefulness(i)?)))
        .collect::<Result<Vec<_>, OptionError>>()?;
    let selected = select_top_k(&scores, cfg.k_options_per_level);
    log::info!(
        "level {level}: {} fractures from {} successful trajectories, {n_clusters} clusters, {} selected",
        fset.len(),
        successful.len(),
        selected.len()
    );
    report.n_clusters = n_clusters;
    report.scores = scores.clone();
    report.selected = selected.clone();
    let clusterer = Clusterer::new(&fset, &cfg.cluster, clustering.clusters);
    hierarchy.push_level(clusterer, scores, selected)?;
    Ok(report)
}
