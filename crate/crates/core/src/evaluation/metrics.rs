use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1 − Σ(obs − pred)² / Σ(obs − mean(obs))²`, not clamped at zero.
pub fn r2_mse(obs: &[f64], pred: &[f64]) -> Result<f64> {
    if obs.len() != pred.len() {
        return Err(Error::invalid("observed and predicted differ in length"));
    }
    if obs.len() < 2 {
        return Err(Error::invalid("R² needs at least 2 observations"));
    }
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let tss: f64 = obs.iter().map(|o| (o - mean).powi(2)).sum();
    if !(tss > 0.0) {
        return Err(Error::ZeroVariance("observations are constant".into()));
    }
    let sse: f64 = obs.iter().zip(pred).map(|(o, p)| (o - p).powi(2)).sum();
    Ok(1.0 - sse / tss)
}

pub fn rmse(obs: &[f64], pred: &[f64]) -> f64 {
    let sse: f64 = obs.iter().zip(pred).map(|(o, p)| (o - p).powi(2)).sum();
    (sse / obs.len() as f64).sqrt()
}

/// Linearly interpolated sample quantile (`q` in `[0, 1]`) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl DistanceSummary {
    pub fn of(values: &[f64]) -> Self {
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            median: median(values),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}
