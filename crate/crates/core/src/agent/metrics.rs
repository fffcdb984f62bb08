use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot summarise an empty sample")]
    Empty,
}

/// Interquartile mean: the mean of the middle half of the sorted sample.
///
/// Each value owns a unit of mass; the window `[n/4, 3n/4]` takes fractional
/// shares of the boundary values.
pub fn iqm(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let (lo, hi) = (n / 4.0, 3.0 * n / 4.0);
    let mut acc = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        let start = i as f64;
        let weight = (hi.min(start + 1.0) - lo.max(start)).max(0.0);
        if weight > 0.0 {
            acc += weight * v;
        }
    }
    Ok(acc / (hi - lo))
}

pub fn mean(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample standard deviation over `sqrt(n)`; zero for fewer than two values.
pub fn standard_error(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}
