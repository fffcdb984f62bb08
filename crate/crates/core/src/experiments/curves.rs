use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::agent::{iqm, standard_error};

/// One evaluation of one agent on one held-out task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub depth: u32,
    pub seed: u64,
    pub task_id: String,
    pub test_size: String,
    pub env_steps: u64,
    pub iqm_return: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub test_size: String,
    pub depth: u32,
    pub env_steps: u64,
    pub iqm_return: f64,
    pub stderr: f64,
    pub n: usize,
}

/// IQM and standard error over every (seed, task) value sharing a
/// `(test_size, depth, env_steps)` key.
pub fn aggregate_curves(points: &[CurvePoint]) -> Vec<AggregatePoint> {
    let mut groups: BTreeMap<(&str, u32, u64), Vec<f64>> = BTreeMap::new();
    for p in points {
        groups
            .entry((p.test_size.as_str(), p.depth, p.env_steps))
            .or_default()
            .push(p.iqm_return);
    }
    groups
        .into_iter()
        .map(|((size, depth, env_steps), values)| AggregatePoint {
            test_size: size.to_string(),
            depth,
            env_steps,
            iqm_return: iqm(&values).expect("group is non-empty"),
            stderr: standard_error(&values),
            n: values.len(),
        })
        .collect()
}

/// Trapezoidal area under `(x, y)` pairs sorted by `x`, clipped at `horizon`.
pub fn area_under_curve(curve: &[(u64, f64)], horizon: u64) -> f64 {
    let pts: Vec<&(u64, f64)> = curve.iter().filter(|(x, _)| *x <= horizon).collect();
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) as f64 * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Per `(test_size, depth, seed)`: the area under the curve of the IQM over
/// that seed's test tasks.
pub fn per_seed_auc(points: &[CurvePoint], horizon: u64) -> BTreeMap<(String, u32, u64), f64> {
    let mut groups: BTreeMap<(String, u32, u64), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for p in points {
        groups
            .entry((p.test_size.clone(), p.depth, p.seed))
            .or_default()
            .entry(p.env_steps)
            .or_default()
            .push(p.iqm_return);
    }
    groups
        .into_iter()
        .map(|(key, by_step)| {
            let curve: Vec<(u64, f64)> = by_step
                .into_iter()
                .map(|(x, ys)| (x, iqm(&ys).expect("non-empty")))
                .collect();
            (key, area_under_curve(&curve, horizon))
        })
        .collect()
}

pub fn write_curves_csv(path: &Path, points: &[CurvePoint]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<CurvePoint>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_aggregate_csv(path: &Path, points: &[AggregatePoint]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
