use std::sync::{Arc, OnceLock};

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::variogram::{empirical_variogram, fit_exponential, max_pairwise_distance, EmpiricalVariogram, VariogramConfig, VariogramModel};
use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};
use crate::lur::LinearModel;

// Relative pivot threshold for both factorizations.
const PIVOT_TOL: f64 = 1e-10;

/// Universal kriging with the drift model's columns as external drift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KrigingModel {
    pub drift: LinearModel,
    pub variogram: VariogramModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<EmpiricalVariogram>,
    /// Training coordinates, sorted and free of duplicates.
    pub coords: Vec<(f64, f64)>,
    /// Training drift rows, one per site, in `drift.selected` order.
    pub x_rows: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    #[serde(skip)]
    system: OnceLock<Arc<UkSystem>>,
}

#[derive(Debug)]
struct UkSystem {
    // None when the covariance vanishes and the model reduces to its drift.
    factors: Option<Factors>,
}

#[derive(Debug)]
struct Factors {
    chol: Cholesky<f64, Dyn>,
    // L⁻¹F where C = LLᵀ
    linv_f: DMatrix<f64>,
    schur: Cholesky<f64, Dyn>,
    beta: DVector<f64>,
    // C⁻¹(Y − Fβ)
    w: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrigingPrediction {
    pub mean: f64,
    pub variance: f64,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

struct Training {
    coords: Vec<(f64, f64)>,
    rows: Vec<Vec<f64>>,
    y: Vec<f64>,
}

// Sorts sites by coordinate and averages sites sharing a location.
fn canonical_training(coords: &[(f64, f64)], rows: Vec<Vec<f64>>, y: &[f64]) -> Training {
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&i, &j| {
        coords[i]
            .0
            .total_cmp(&coords[j].0)
            .then(coords[i].1.total_cmp(&coords[j].1))
            .then(y[i].total_cmp(&y[j]))
    });
    let mut out = Training {
        coords: Vec::new(),
        rows: Vec::new(),
        y: Vec::new(),
    };
    let mut merged = 0;
    let mut k = 0;
    while k < order.len() {
        let c = coords[order[k]];
        let mut end = k + 1;
        while end < order.len() && coords[order[end]] == c {
            end += 1;
        }
        let group = &order[k..end];
        let m = group.len() as f64;
        let width = rows[group[0]].len();
        let mut row = vec![0.0; width];
        let mut yy = 0.0;
        for &i in group {
            yy += y[i];
            for (r, v) in row.iter_mut().zip(&rows[i]) {
                *r += v;
            }
        }
        if group.len() > 1 {
            merged += group.len() - 1;
            row.iter_mut().for_each(|r| *r /= m);
            yy /= m;
        }
        out.coords.push(c);
        out.rows.push(row);
        out.y.push(yy);
        k = end;
    }
    if merged > 0 {
        warn!("kriging: averaged {merged} site(s) sharing coordinates with another site");
    }
    out
}

fn drift_rows(drift: &LinearModel, x: &CovariateMatrix) -> Result<Vec<Vec<f64>>> {
    (0..x.n_rows()).map(|i| x.row_for(i, &drift.selected)).collect()
}

/// Fits the residual variogram of `drift` on these sites and assembles the
/// kriging model.
pub fn uk_fit(drift: &LinearModel, coords: &[(f64, f64)], x: &CovariateMatrix, y: &[f64], cfg: &VariogramConfig) -> Result<KrigingModel> {
    check_lengths(coords, x, y)?;
    let t = canonical_training(coords, drift_rows(drift, x)?, y);
    let residuals: Vec<f64> = t.rows.iter().zip(&t.y).map(|(r, y)| y - drift.predict_row(r)).collect();
    let max_lag = match cfg.max_lag {
        Some(m) => m,
        None => 0.5 * max_pairwise_distance(&t.coords),
    };
    let ev = empirical_variogram(&residuals, &t.coords, cfg.n_bins, max_lag)?;
    let variogram = fit_exponential(&ev)?;
    let model = KrigingModel {
        drift: drift.clone(),
        variogram,
        empirical: Some(ev),
        coords: t.coords,
        x_rows: t.rows,
        y: t.y,
        system: OnceLock::new(),
    };
    model.system()?;
    Ok(model)
}

/// Assembles a kriging model with a given variogram.
pub fn uk_fit_with_variogram(drift: &LinearModel, coords: &[(f64, f64)], x: &CovariateMatrix, y: &[f64], variogram: VariogramModel) -> Result<KrigingModel> {
    check_lengths(coords, x, y)?;
    let t = canonical_training(coords, drift_rows(drift, x)?, y);
    let model = KrigingModel {
        drift: drift.clone(),
        variogram,
        empirical: None,
        coords: t.coords,
        x_rows: t.rows,
        y: t.y,
        system: OnceLock::new(),
    };
    model.system()?;
    Ok(model)
}

fn check_lengths(coords: &[(f64, f64)], x: &CovariateMatrix, y: &[f64]) -> Result<()> {
    if coords.len() != y.len() || x.n_rows() != y.len() {
        return Err(Error::invalid(format!(
            "sites ({}), covariate rows ({}) and responses ({}) differ",
            coords.len(),
            x.n_rows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::invalid("no training sites"));
    }
    Ok(())
}

fn cholesky_checked(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let diag: Vec<f64> = m.diagonal().iter().copied().collect();
    let chol = Cholesky::new(m).ok_or_else(|| Error::SingularKriging(format!("{what} is not positive definite")))?;
    let l = chol.l_dirty();
    for (i, d) in diag.iter().enumerate() {
        if !(l[(i, i)] * l[(i, i)] > PIVOT_TOL * d) {
            return Err(Error::SingularKriging(format!("{what} has a vanishing pivot at row {i}")));
        }
    }
    Ok(chol)
}

impl KrigingModel {
    pub fn n_sites(&self) -> usize {
        self.y.len()
    }

    fn drift_vector(&self, row: &[f64]) -> DVector<f64> {
        let mut f = DVector::zeros(row.len() + 1);
        f[0] = 1.0;
        for (j, v) in row.iter().enumerate() {
            f[j + 1] = *v;
        }
        f
    }

    fn system(&self) -> Result<&UkSystem> {
        if let Some(s) = self.system.get() {
            return Ok(s);
        }
        let built = Arc::new(self.build()?);
        Ok(self.system.get_or_init(|| built))
    }

    fn build(&self) -> Result<UkSystem> {
        let n = self.n_sites();
        let m = self.drift.selected.len() + 1;
        if n < m {
            return Err(Error::SingularKriging(format!(
                "{n} distinct sites cannot determine {m} drift coefficients"
            )));
        }
        let v = &self.variogram;
        if !(v.sill() > 0.0) {
            return Ok(UkSystem { factors: None });
        }
        let c = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                v.sill()
            } else {
                v.covariance(dist(self.coords[i], self.coords[j]))
            }
        });
        let chol = cholesky_checked(c, "residual covariance matrix (duplicate or near-duplicate sites?)")?;
        let f = DMatrix::from_fn(n, m, |i, j| if j == 0 { 1.0 } else { self.x_rows[i][j - 1] });
        let mut linv_f = f.clone();
        chol.l_dirty().solve_lower_triangular_mut(&mut linv_f);
        let schur = cholesky_checked(linv_f.tr_mul(&linv_f), "drift normal matrix (degenerate drift columns?)")?;
        let yv = DVector::from_column_slice(&self.y);
        let mut linv_y = yv.clone();
        chol.l_dirty().solve_lower_triangular_mut(&mut linv_y);
        let beta = schur.solve(&linv_f.tr_mul(&linv_y));
        let w = chol.solve(&(&yv - &f * &beta));
        Ok(UkSystem {
            factors: Some(Factors {
                chol,
                linv_f,
                schur,
                beta,
                w,
            }),
        })
    }

    fn cross_covariance(&self, x0: f64, y0: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.n_sites(),
            self.coords.iter().map(|&c| self.variogram.covariance(dist(c, (x0, y0)))),
        )
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.drift.selected.len() {
            return Err(Error::invalid(format!(
                "drift row has {} values, model expects {}",
                row.len(),
                self.drift.selected.len()
            )));
        }
        Ok(())
    }

    /// Kriged mean only; linear in the number of training sites.
    pub fn predict_mean(&self, x0: f64, y0: f64, row: &[f64]) -> Result<f64> {
        self.check_row(row)?;
        let sys = self.system()?;
        let Some(fx) = &sys.factors else {
            return Ok(self.drift.predict_row(row));
        };
        let mut mean = fx.beta[0];
        for (j, v) in row.iter().enumerate() {
            mean += fx.beta[j + 1] * v;
        }
        let v = &self.variogram;
        for (i, &c) in self.coords.iter().enumerate() {
            mean += v.covariance(dist(c, (x0, y0))) * fx.w[i];
        }
        Ok(mean)
    }

    /// Kriged mean and kriging variance.
    pub fn predict(&self, x0: f64, y0: f64, row: &[f64]) -> Result<KrigingPrediction> {
        self.check_row(row)?;
        let sys = self.system()?;
        let Some(fx) = &sys.factors else {
            return Ok(KrigingPrediction {
                mean: self.drift.predict_row(row),
                variance: 0.0,
            });
        };
        let c0 = self.cross_covariance(x0, y0);
        let f0 = self.drift_vector(row);
        let mean = f0.dot(&fx.beta) + c0.dot(&fx.w);
        let mut v = c0;
        fx.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let u = &f0 - fx.linv_f.tr_mul(&v);
        let variance = self.variogram.sill() - v.norm_squared() + u.dot(&fx.schur.solve(&u));
        Ok(KrigingPrediction {
            mean,
            variance: variance.max(0.0),
        })
    }

    /// Kriging weights λ with `mean = λᵀY`.
    pub fn weights(&self, x0: f64, y0: f64, row: &[f64]) -> Result<Vec<f64>> {
        self.check_row(row)?;
        let sys = self.system()?;
        let Some(fx) = &sys.factors else {
            return Err(Error::SingularKriging("zero covariance model has no kriging weights".into()));
        };
        let c0 = self.cross_covariance(x0, y0);
        let f0 = self.drift_vector(row);
        let mut v = c0;
        fx.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let u = &f0 - fx.linv_f.tr_mul(&v);
        let mu = fx.schur.solve(&u);
        // λ = L⁻ᵀ (v + L⁻¹F μ)
        let mut lam = v + &fx.linv_f * mu;
        fx.chol.l_dirty().tr_solve_lower_triangular_mut(&mut lam);
        Ok(lam.iter().copied().collect())
    }

    /// Generalized-least-squares drift coefficients (intercept first).
    pub fn gls_coefficients(&self) -> Result<Vec<f64>> {
        let sys = self.system()?;
        Ok(match &sys.factors {
            Some(fx) => fx.beta.iter().copied().collect(),
            None => std::iter::once(self.drift.intercept)
                .chain(self.drift.coefficients.iter().copied())
                .collect(),
        })
    }

    /// `β′`: GLS drift coefficients minus the first-stage coefficients.
    pub fn trend_adjustment(&self) -> Result<Vec<f64>> {
        let gls = self.gls_coefficients()?;
        let ols = std::iter::once(self.drift.intercept).chain(self.drift.coefficients.iter().copied());
        Ok(gls.iter().zip(ols).map(|(g, o)| g - o).collect())
    }

    /// Drift evaluated with the GLS coefficients.
    pub fn gls_drift(&self, row: &[f64]) -> Result<f64> {
        self.check_row(row)?;
        let b = self.gls_coefficients()?;
        Ok(b[0] + b[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Kriged mean and variance at `(x0, y0)`.
pub fn uk_predict(model: &KrigingModel, x0: f64, y0: f64, row: &[f64]) -> Result<KrigingPrediction> {
    model.predict(x0, y0, row)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(nugget: f64) -> KrigingModel {
        let coords: Vec<(f64, f64)> = (0..12)
            .map(|i| ((i % 4) as f64 * 1000.0 + (i * 37 % 11) as f64 * 30.0, (i / 4) as f64 * 900.0))
            .collect();
        let xs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let y: Vec<f64> = (0..12).map(|i| 2.0 + 1.5 * xs[i] + (i as f64 * 1.3).cos()).collect();
        let x = CovariateMatrix::from_columns(
            (0..12).map(|i| i.to_string()).collect(),
            vec!["x".into()],
            vec![xs],
        )
        .unwrap();
        let drift = LinearModel::fit_columns(&x, &y, &["x".into()]).unwrap();
        let v = VariogramModel::new(nugget, 1.0, 1500.0).unwrap();
        uk_fit_with_variogram(&drift, &coords, &x, &y, v).unwrap()
    }

    #[test]
    fn interpolates_without_nugget() {
        let m = setup(0.0);
        for i in 0..m.n_sites() {
            let (x0, y0) = m.coords[i];
            let p = m.predict(x0, y0, &m.x_rows[i]).unwrap();
            assert!((p.mean - m.y[i]).abs() <= 1e-8 * (1.0 + m.y[i].abs()));
            assert!(p.variance < 1e-8);
        }
    }

    #[test]
    fn weights_are_unbiased() {
        let m = setup(0.2);
        let row = [0.4];
        let lam = m.weights(1234.0, 567.0, &row).unwrap();
        let s: f64 = lam.iter().sum();
        assert!((s - 1.0).abs() < 1e-10);
        let fx: f64 = lam.iter().zip(&m.x_rows).map(|(l, r)| l * r[0]).sum();
        assert!((fx - 0.4).abs() < 1e-10);
        let mean: f64 = lam.iter().zip(&m.y).map(|(l, y)| l * y).sum();
        let p = m.predict(1234.0, 567.0, &row).unwrap();
        assert!((mean - p.mean).abs() < 1e-10);
        assert!((m.predict_mean(1234.0, 567.0, &row).unwrap() - p.mean).abs() < 1e-12);
    }

    #[test]
    fn far_field_is_gls_drift() {
        let m = setup(0.1);
        let row = [1.1];
        let far = m.predict_mean(1e7, -1e7, &row).unwrap();
        assert!((far - m.gls_drift(&row).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn json_round_trip_predicts_identically() {
        let m = setup(0.1);
        let back = KrigingModel::from_json(&m.to_json().unwrap()).unwrap();
        let a = m.predict(500.0, 500.0, &[0.3]).unwrap();
        let b = back.predict(500.0, 500.0, &[0.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_coordinates_are_averaged() {
        let coords = vec![(0.0, 0.0), (0.0, 0.0), (100.0, 0.0), (0.0, 100.0)];
        let x = CovariateMatrix::empty((0..4).map(|i| i.to_string()).collect());
        let y = vec![1.0, 3.0, 0.0, 4.0];
        let drift = LinearModel::intercept_only(&y).unwrap();
        let v = VariogramModel::new(0.0, 1.0, 100.0).unwrap();
        let m = uk_fit_with_variogram(&drift, &coords, &x, &y, v).unwrap();
        assert_eq!(m.n_sites(), 3);
        assert_eq!(m.y[0], 2.0);
    }
}
