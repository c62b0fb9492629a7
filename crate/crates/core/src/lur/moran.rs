use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse-distance weights use `1 / max(d, min_distance)`, so coincident
/// sites get the weight of sites `min_distance` apart.
pub const DEFAULT_MIN_DISTANCE_M: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub i: f64,
    pub expected_i: f64,
}

pub fn expected_i(n: usize) -> f64 {
    -1.0 / (n as f64 - 1.0)
}

/// Global Moran's I with row-standardized inverse-distance weights.
pub fn morans_i(residuals: &[f64], coords: &[(f64, f64)]) -> Result<MoranResult> {
    morans_i_with_cap(residuals, coords, DEFAULT_MIN_DISTANCE_M)
}

pub fn morans_i_with_cap(residuals: &[f64], coords: &[(f64, f64)], min_distance: f64) -> Result<MoranResult> {
    let n = residuals.len();
    if n < 3 {
        return Err(Error::invalid("Moran's I needs at least 3 sites"));
    }
    if coords.len() != n {
        return Err(Error::invalid("residuals and coordinates differ in length"));
    }
    if !(min_distance > 0.0) {
        return Err(Error::invalid("min_distance must be positive"));
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = residuals.iter().map(|r| r - mean).collect();
    let zz: f64 = z.iter().map(|v| v * v).sum();
    if !(zz > 0.0) {
        return Err(Error::ZeroVariance("residuals have zero variance".into()));
    }
    // with row standardization every row sums to 1, so ΣΣw = n
    let mut cross = 0.0;
    for i in 0..n {
        let (xi, yi) = coords[i];
        let mut row_sum = 0.0;
        let mut row_dot = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = ((coords[j].0 - xi).powi(2) + (coords[j].1 - yi).powi(2)).sqrt();
            let w = 1.0 / d.max(min_distance);
            row_sum += w;
            row_dot += w * z[j];
        }
        cross += z[i] * row_dot / row_sum;
    }
    Ok(MoranResult {
        i: cross / zz,
        expected_i: expected_i(n),
    })
}
