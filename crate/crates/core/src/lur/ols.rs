use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

// |R_kk| below this fraction of the column norm marks a dependent column.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares with intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub intercept_std_error: f64,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub n: usize,
    pub p: usize,
}

impl OlsFit {
    pub fn fitted(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.residuals).map(|(y, e)| y - e).collect()
    }
}

pub fn adjusted_r2(r2: f64, n: usize, p: usize) -> f64 {
    1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - p as f64 - 1.0)
}

/// Two-sided p-value of a t statistic.
pub fn t_test_p_value(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { 1.0 } else { 0.0 };
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

pub(crate) fn total_sum_of_squares(y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - mean).powi(2)).sum()
}

/// Fits `y ~ 1 + columns`. `names` label columns in singular-design errors.
pub fn ols_fit(columns: &[&[f64]], y: &[f64], names: Option<&[String]>) -> Result<OlsFit> {
    let n = y.len();
    let p = columns.len();
    if n <= p + 1 {
        return Err(Error::invalid(format!(
            "need more observations than parameters + 1 (n = {n}, p = {p})"
        )));
    }
    for (j, c) in columns.iter().enumerate() {
        if c.len() != n {
            return Err(Error::invalid(format!("column {j} has {} rows, expected {n}", c.len())));
        }
    }
    let tss = total_sum_of_squares(y);
    if !(tss > 0.0) {
        return Err(Error::ZeroVariance("response is constant".into()));
    }

    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] });
    let col_norms: Vec<f64> = (0..=p).map(|j| design.column(j).norm()).collect();
    let qr = design.qr();
    let r = qr.r();
    let dependent: Vec<usize> = (0..=p)
        .filter(|&j| r[(j, j)].abs() <= RANK_TOL * col_norms[j].max(f64::MIN_POSITIVE))
        .collect();
    if !dependent.is_empty() {
        let label = |j: usize| -> String {
            if j == 0 {
                "intercept".to_string()
            } else {
                names
                    .and_then(|n| n.get(j - 1).cloned())
                    .unwrap_or_else(|| format!("column {}", j - 1))
            }
        };
        let list: Vec<String> = dependent.iter().map(|&j| label(j)).collect();
        return Err(Error::SingularDesign(format!(
            "linearly dependent columns: {}",
            list.join(", ")
        )));
    }

    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;

    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let mut fit = beta[0];
        for j in 0..p {
            fit += beta[j + 1] * columns[j][i];
        }
        residuals.push(y[i] - fit);
    }
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let df = (n - p - 1) as f64;
    let sigma2 = rss / df;

    // diag((R^T R)^-1) = row norms of R^-1
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p + 1, p + 1))
        .ok_or_else(|| Error::SingularDesign("triangular inverse failed".into()))?;
    let se: Vec<f64> = (0..=p).map(|j| (sigma2 * r_inv.row(j).norm_squared()).sqrt()).collect();
    let p_values = (1..=p).map(|j| t_test_p_value(beta[j] / se[j], df)).collect();

    let r2 = 1.0 - rss / tss;
    Ok(OlsFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        intercept_std_error: se[0],
        std_errors: se[1..].to_vec(),
        p_values,
        residuals,
        rss,
        r2,
        adj_r2: adjusted_r2(r2, n, p),
        n,
        p,
    })
}

/// Variance inflation factor of `candidate` against `included`, with
/// intercept. Perfect collinearity (including a constant candidate) gives
/// `+inf`.
pub fn vif(candidate: &[f64], included: &[&[f64]]) -> Result<f64> {
    let tss = total_sum_of_squares(candidate);
    if !(tss > 0.0) {
        return Ok(f64::INFINITY);
    }
    if included.is_empty() {
        return Ok(1.0);
    }
    let fit = ols_fit(included, candidate, None)?;
    let unexplained = fit.rss / tss;
    if unexplained <= 1e-12 {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / unexplained)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    }

    #[test]
    fn exact_linear_response() {
        let x1 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x2 = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0];
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 1.5 + 2.0 * a - 0.5 * b).collect();
        let fit = ols_fit(&[&x1, &x2], &y, None).unwrap();
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|e| e.abs() < 1e-10));
        assert!((fit.intercept - 1.5).abs() < 1e-10);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn adjusted_r2_formula() {
        let v = adjusted_r2(0.5, 11, 1);
        assert!((v - (1.0 - 0.5 * 10.0 / 9.0)).abs() < 1e-15);
        assert!((v - 0.444_444_444_444_444_4).abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equations() {
        let mut s = 7u64;
        let n = 50;
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| lcg(&mut s) * 10.0).collect()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 3.0 + cols[0][i] - 2.0 * cols[1][i] + 0.3 * cols[2][i] + lcg(&mut s))
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let fit = ols_fit(&refs, &y, None).unwrap();

        let x = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * DVector::from_column_slice(&y);
        let beta = xtx.clone().lu().solve(&xty).unwrap();
        assert!((fit.intercept - beta[0]).abs() < 1e-8);
        for j in 0..3 {
            assert!((fit.coefficients[j] - beta[j + 1]).abs() < 1e-8);
        }
        // standard errors from sigma^2 (X'X)^-1
        let inv = xtx.try_inverse().unwrap();
        let sigma2 = fit.rss / (n as f64 - 4.0);
        for j in 0..3 {
            assert!((fit.std_errors[j] - (sigma2 * inv[(j + 1, j + 1)]).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_design_names_columns() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        let names = vec!["road_100".to_string(), "road_100_copy".to_string()];
        match ols_fit(&[&a, &b], &y, Some(&names)) {
            Err(Error::SingularDesign(msg)) => assert!(msg.contains("road_100_copy"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vif_cases() {
        let a = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let b = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0];
        // b has mean 1/3, a has mean 0; orthogonal after centering
        let bc: Vec<f64> = b.iter().map(|v| v - 1.0 / 3.0).collect();
        let dot: f64 = a.iter().zip(&bc).map(|(x, y)| x * y).sum();
        assert!(dot.abs() < 1e-12);
        assert!((vif(&a, &[&b]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(vif(&a, &[&a]).unwrap(), f64::INFINITY);
        assert_eq!(vif(&a, &[]).unwrap(), 1.0);
        assert_eq!(vif(&[2.0; 6], &[&a]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn vif_matches_r2_oracle() {
        let mut s = 99u64;
        let n = 40;
        let base: Vec<f64> = (0..n).map(|_| lcg(&mut s)).collect();
        let c1: Vec<f64> = base.iter().map(|b| b + 0.3 * lcg(&mut s)).collect();
        let c2: Vec<f64> = base.iter().map(|b| -b + 0.5 * lcg(&mut s)).collect();
        let c3: Vec<f64> = base.iter().map(|b| 2.0 * b + 0.2 * lcg(&mut s)).collect();
        // oracle: R^2 from the normal equations of c3 on [1, c1, c2]
        let x = DMatrix::from_fn(n, 3, |i, j| [1.0, c1[i], c2[i]][j]);
        let yv = DVector::from_column_slice(&c3);
        let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * &yv)).unwrap();
        let resid = &yv - &x * beta;
        let mean = c3.iter().sum::<f64>() / n as f64;
        let tss: f64 = c3.iter().map(|v| (v - mean).powi(2)).sum();
        let r2 = 1.0 - resid.norm_squared() / tss;
        let expected = 1.0 / (1.0 - r2);
        let got = vif(&c3, &[&c1, &c2]).unwrap();
        assert!((got - expected).abs() < 1e-8 * expected, "{got} vs {expected}");
        assert!(got > 5.0);
    }

    #[test]
    fn p_values_are_two_sided() {
        let p = t_test_p_value(2.0, 10.0);
        // t_{0.975, 10} = 2.228, so |t| = 2 is not significant at 5%
        assert!(p > 0.05 && p < 0.1, "{p}");
        assert!((t_test_p_value(0.0, 5.0) - 1.0).abs() < 1e-12);
        assert_eq!(t_test_p_value(f64::INFINITY, 5.0), 0.0);
    }
}
