use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};
use crate::evaluation::kfold_assignment;

/// PLS1 regression on centered, unit-variance columns.
///
/// All matrices are `n_inputs × max_components`, stored row-major. The model
/// uses the first `n_components` components; later ones are kept so the
/// component count can be changed without refitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    pub names: Vec<String>,
    pub n_components: usize,
    pub max_components: usize,
    pub x_center: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub weights: Vec<f64>,
    pub loadings: Vec<f64>,
    pub rotations: Vec<f64>,
    pub y_loadings: Vec<f64>,
}

/// Result of [`pls_fit`]: the selected model plus its cross-validation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsFit {
    pub model: PlsModel,
    /// RMSEP for 1..=max_components components.
    pub rmsep: Vec<f64>,
    /// Per-fold RMSEP, `rmsep_by_fold[fold][k - 1]`.
    pub rmsep_by_fold: Vec<Vec<f64>>,
    /// One standard error of the minimum RMSEP.
    pub min_se: f64,
}

struct Components {
    w: DMatrix<f64>,
    p: DMatrix<f64>,
    q: Vec<f64>,
    scores: DMatrix<f64>,
}

fn standardize(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut center = Vec::with_capacity(x.ncols());
    let mut scale = Vec::with_capacity(x.ncols());
    let mut z = x.clone();
    for j in 0..x.ncols() {
        let col = x.column(j);
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let s = if var > 0.0 { var.sqrt() } else { 1.0 };
        for v in z.column_mut(j).iter_mut() {
            *v = (*v - m) / s;
        }
        center.push(m);
        scale.push(s);
    }
    (z, center, scale)
}

// Iterative score-deflation PLS1.
fn nipals(z: &DMatrix<f64>, yc: &[f64], k: usize) -> Result<Components> {
    let (n, p) = z.shape();
    let mut x = z.clone();
    let mut y = DVector::from_column_slice(yc);
    let mut w_m = DMatrix::zeros(p, k);
    let mut p_m = DMatrix::zeros(p, k);
    let mut t_m = DMatrix::zeros(n, k);
    let mut q = Vec::with_capacity(k);
    let mut first_norm = 0.0;
    for a in 0..k {
        let mut w = x.tr_mul(&y);
        let norm = w.norm();
        if a == 0 {
            first_norm = norm;
        }
        if !(norm > 1e-12 * first_norm) || norm == 0.0 {
            return Err(Error::invalid(format!(
                "no covariance left for component {} of {k}",
                a + 1
            )));
        }
        w /= norm;
        let t = &x * &w;
        let tt = t.norm_squared();
        let pv = x.tr_mul(&t) / tt;
        let qa = y.dot(&t) / tt;
        x -= &t * pv.transpose();
        y.axpy(-qa, &t, 1.0);
        w_m.set_column(a, &w);
        p_m.set_column(a, &pv);
        t_m.set_column(a, &t);
        q.push(qa);
    }
    Ok(Components {
        w: w_m,
        p: p_m,
        q,
        scores: t_m,
    })
}

fn numerical_rank(z: &DMatrix<f64>) -> usize {
    let r = z.clone().col_piv_qr().r();
    let d = r.nrows().min(r.ncols());
    let top = if d > 0 { r[(0, 0)].abs() } else { 0.0 };
    (0..d).filter(|&i| r[(i, i)].abs() > 1e-10 * top).count()
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    // row-major
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl PlsModel {
    fn build(names: Vec<String>, center: Vec<f64>, scale: Vec<f64>, y_mean: f64, c: &Components, n_components: usize) -> Result<Self> {
        let k = c.q.len();
        let ptw = c.p.tr_mul(&c.w);
        let inv = ptw
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularDesign("PLS loading-weight product is singular".into()))?;
        let rot = &c.w * inv;
        Ok(Self {
            names,
            n_components,
            max_components: k,
            x_center: center,
            x_scale: scale,
            y_mean,
            weights: flat(&c.w),
            loadings: flat(&c.p),
            rotations: flat(&rot),
            y_loadings: c.q.clone(),
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.names.len()
    }

    /// The same fit truncated to `k` components.
    pub fn with_components(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.max_components {
            return Err(Error::invalid(format!(
                "component count {k} outside 1..={}",
                self.max_components
            )));
        }
        Ok(Self {
            n_components: k,
            ..self.clone()
        })
    }

    fn rotation(&self, j: usize, a: usize) -> f64 {
        self.rotations[j * self.max_components + a]
    }

    /// Component scores of one input row (columns in `names` order).
    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.n_components];
        for (j, &v) in row.iter().enumerate() {
            let z = (v - self.x_center[j]) / self.x_scale[j];
            for (a, ta) in t.iter_mut().enumerate() {
                *ta += z * self.rotation(j, a);
            }
        }
        t
    }

    /// Regression coefficients on the standardized inputs.
    pub fn standardized_coefficients(&self) -> Vec<f64> {
        (0..self.n_inputs())
            .map(|j| (0..self.n_components).map(|a| self.rotation(j, a) * self.y_loadings[a]).sum())
            .collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.y_mean
            + self
                .scores(row)
                .iter()
                .zip(&self.y_loadings)
                .map(|(t, q)| t * q)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &CovariateMatrix) -> Result<Vec<f64>> {
        let cols = x.select_columns(&self.names)?;
        Ok((0..cols.n_rows()).map(|i| self.predict_row(&cols.row(i))).collect())
    }

    /// Score matrix of `x` as a covariate matrix with columns `pls_1..pls_k`.
    pub fn score_matrix(&self, x: &CovariateMatrix) -> Result<CovariateMatrix> {
        let cols = x.select_columns(&self.names)?;
        let mut out = vec![Vec::with_capacity(cols.n_rows()); self.n_components];
        for i in 0..cols.n_rows() {
            for (a, t) in self.scores(&cols.row(i)).into_iter().enumerate() {
                out[a].push(t);
            }
        }
        CovariateMatrix::from_columns(x.site_ids().to_vec(), score_names(self.n_components), out)
    }
}

pub fn score_names(k: usize) -> Vec<String> {
    (1..=k).map(|a| format!("pls_{a}")).collect()
}

fn usable_design(x: &CovariateMatrix) -> (Vec<String>, DMatrix<f64>) {
    let keep: Vec<usize> = (0..x.n_cols()).filter(|&j| !x.meta()[j].zero_variance).collect();
    let names = keep.iter().map(|&j| x.names()[j].clone()).collect();
    let m = DMatrix::from_fn(x.n_rows(), keep.len(), |i, j| x.value(i, keep[j]));
    (names, m)
}

/// Fits PLS1 with a fixed number of components on all rows.
pub fn pls_fit_components(x: &CovariateMatrix, y: &[f64], n_components: usize) -> Result<PlsModel> {
    let (names, m) = usable_design(x);
    check_inputs(&m, y, n_components)?;
    let (z, center, scale) = standardize(&m);
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let c = nipals(&z, &yc, n_components)?;
    PlsModel::build(names, center, scale, y_mean, &c, n_components)
}

fn check_inputs(m: &DMatrix<f64>, y: &[f64], k: usize) -> Result<()> {
    if m.nrows() != y.len() {
        return Err(Error::invalid("covariate rows and response length differ"));
    }
    if m.ncols() == 0 {
        return Err(Error::invalid("no covariate column with nonzero variance"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if !y.iter().any(|v| (v - mean).abs() > 0.0) {
        return Err(Error::invalid("response has zero variance"));
    }
    if k == 0 {
        return Err(Error::invalid("need at least one PLS component"));
    }
    Ok(())
}

/// Fits PLS1 with up to `max_components` components and picks the smallest
/// count whose `folds`-fold CV RMSEP is within one standard error of the best.
pub fn pls_fit(x: &CovariateMatrix, y: &[f64], max_components: usize, folds: usize, seed: u64) -> Result<PlsFit> {
    let (names, m) = usable_design(x);
    check_inputs(&m, y, max_components)?;
    let (z, center, scale) = standardize(&m);
    let rank = numerical_rank(&z);
    if max_components > rank {
        return Err(Error::invalid(format!(
            "max_components {max_components} exceeds the rank {rank} of the centered design"
        )));
    }
    let n = y.len();
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!("cannot split {n} sites into {folds} folds")));
    }
    let assignment = kfold_assignment(n, folds, seed);
    let mut sq_err = vec![0.0; max_components];
    let mut by_fold = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
        let tm = m.select_rows(&train);
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let (tz, tc, ts) = standardize(&tm);
        let ymean = ty.iter().sum::<f64>() / ty.len() as f64;
        let yc: Vec<f64> = ty.iter().map(|v| v - ymean).collect();
        let comps = nipals(&tz, &yc, max_components).map_err(|e| Error::Fold {
            fold: f.to_string(),
            message: e.to_string(),
        })?;
        let model = PlsModel::build(names.clone(), tc, ts, ymean, &comps, max_components)?;
        let mut fold_sq = vec![0.0; max_components];
        for &i in &test {
            let row: Vec<f64> = m.row(i).iter().copied().collect();
            let t = model.scores(&row);
            let mut pred = ymean;
            for a in 0..max_components {
                pred += t[a] * model.y_loadings[a];
                fold_sq[a] += (y[i] - pred).powi(2);
            }
        }
        for a in 0..max_components {
            sq_err[a] += fold_sq[a];
        }
        by_fold.push(fold_sq.iter().map(|s| (s / test.len() as f64).sqrt()).collect::<Vec<f64>>());
    }
    let rmsep: Vec<f64> = sq_err.iter().map(|s| (s / n as f64).sqrt()).collect();
    let best = (0..max_components)
        .fold(0, |b, a| if rmsep[a] < rmsep[b] { a } else { b });
    let at_best: Vec<f64> = by_fold.iter().map(|f| f[best]).collect();
    let mean = at_best.iter().sum::<f64>() / folds as f64;
    let sd = (at_best.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (folds as f64 - 1.0)).sqrt();
    let min_se = sd / (folds as f64).sqrt();
    let chosen = (0..max_components)
        .find(|&a| rmsep[a] <= rmsep[best] + min_se)
        .unwrap_or(best)
        + 1;

    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let comps = nipals(&z, &yc, max_components)?;
    let model = PlsModel::build(names, center, scale, y_mean, &comps, chosen)?;
    Ok(PlsFit {
        model,
        rmsep,
        rmsep_by_fold: by_fold,
        min_se,
    })
}

/// Training-data component scores, for orthogonality checks.
pub fn training_scores(x: &CovariateMatrix, y: &[f64], k: usize) -> Result<Vec<Vec<f64>>> {
    let (_, m) = usable_design(x);
    check_inputs(&m, y, k)?;
    let (z, _, _) = standardize(&m);
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let c = nipals(&z, &yc, k)?;
    Ok((0..k).map(|a| c.scores.column(a).iter().copied().collect()).collect())
}
