//! Rate statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `exp(mean(log r))`; every rate must be positive.
pub fn geometric_mean(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::Empty("geometric mean of no rates"));
    }
    if let Some(r) = rates.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::Config(format!("geometric mean needs positive rates, got {r}")));
    }
    Ok((rates.iter().map(|r| r.ln()).sum::<f64>() / rates.len() as f64).exp())
}

/// Percentile `p` in [0, 100]. The `i`-th smallest of `n` samples sits at
/// quantile `(i + 0.5) / n`; values in between are interpolated linearly and
/// values beyond the outermost samples are clamped to them.
pub fn percentile(rates: &[f64], p: f64) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::Empty("percentile of no rates"));
    }
    let mut v = rates.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let pos = (p / 100.0 * n - 0.5).clamp(0.0, n - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Empirical CDF on `grid`: `(x, fraction of rates <= x)`.
pub fn rate_cdf(rates: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if rates.is_empty() {
        return Err(Error::Empty("CDF of no rates"));
    }
    let mut v = rates.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(grid.iter().map(|&x| (x, v.partition_point(|&r| r <= x) as f64 / v.len() as f64)).collect())
}

pub const REPORTED_PERCENTILES: [u32; 5] = [5, 25, 50, 75, 95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    /// Over served users only.
    pub geomean_rate: f64,
    pub mean_rate: f64,
    /// Keyed by percentile, over all users.
    pub percentiles: std::collections::BTreeMap<u32, f64>,
    pub users: usize,
    pub unserved: usize,
}

impl RateSummary {
    pub fn new(rates: &[f64]) -> Result<Self> {
        let served: Vec<f64> = rates.iter().copied().filter(|&r| r > 0.0).collect();
        let geomean_rate = if served.is_empty() { 0.0 } else { geometric_mean(&served)? };
        let percentiles = REPORTED_PERCENTILES.iter().map(|&p| Ok((p, percentile(rates, p as f64)?))).collect::<Result<_>>()?;
        Ok(Self {
            geomean_rate,
            mean_rate: rates.iter().sum::<f64>() / rates.len() as f64,
            percentiles,
            users: rates.len(),
            unserved: rates.len() - served.len(),
        })
    }
}
