use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linear::{sign, LinearModel};
use super::ols::{adjusted_r2, ols_fit, t_test_p_value, total_sum_of_squares};
use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    AdjR2,
    Aic,
    Cv10R2,
    FValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepwiseConfig {
    pub vif_max: f64,
    pub p_max: f64,
    pub min_adj_r2_gain: f64,
    pub criterion: Criterion,
    pub direction: Direction,
}

impl Default for StepwiseConfig {
    fn default() -> Self {
        Self {
            vif_max: 5.0,
            p_max: 0.05,
            min_adj_r2_gain: 0.005,
            criterion: Criterion::AdjR2,
            direction: Direction::Forward,
        }
    }
}

impl StepwiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.vif_max > 1.0) {
            return Err(Error::invalid("vif_max must exceed 1"));
        }
        if !(self.p_max > 0.0 && self.p_max < 1.0) {
            return Err(Error::invalid("p_max must lie in (0, 1)"));
        }
        if !(self.min_adj_r2_gain >= 0.0) {
            return Err(Error::invalid("min_adj_r2_gain must be non-negative"));
        }
        Ok(())
    }
}

/// One accepted variable along the selection path (or one removal for the
/// backward direction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub name: String,
    pub adj_r2: f64,
    pub vif: f64,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub removed: bool,
}

// Columns whose residual norm falls below this share of their centered norm
// are treated as collinear with the current design.
const COLLINEAR_TOL: f64 = 1e-12;

struct Candidate {
    col: usize,
    resid: Vec<f64>,
    ss: f64,
}

#[derive(Debug, Clone, Copy)]
struct Trial {
    slot: usize,
    vif: f64,
    coef: f64,
    p_value: f64,
    rss: f64,
    adj_r2: f64,
    score: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn aic(rss: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    n * (rss / n).ln() + 2.0 * (k as f64 + 1.0)
}

/// Forward (default) or backward stepwise selection over the unflagged
/// columns of `x`.
pub fn stepwise_select(x: &CovariateMatrix, y: &[f64], cfg: &StepwiseConfig) -> Result<LinearModel> {
    cfg.validate()?;
    if x.n_rows() != y.len() {
        return Err(Error::invalid(format!(
            "covariate matrix has {} rows but response has {}",
            x.n_rows(),
            y.len()
        )));
    }
    let usable: Vec<usize> = (0..x.n_cols()).filter(|&j| !x.meta()[j].zero_variance).collect();
    if usable.is_empty() {
        return Err(Error::invalid("no covariate column with nonzero variance"));
    }
    if y.len() < 3 {
        return Err(Error::invalid(format!("stepwise selection needs at least 3 sites, got {}", y.len())));
    }
    let tss = total_sum_of_squares(y);
    if !(tss > 0.0) {
        return Err(Error::ZeroVariance("response is constant".into()));
    }
    let mut model = match cfg.direction {
        Direction::Forward => forward(x, y, cfg, &usable, tss)?,
        Direction::Backward => backward(x, y, cfg, &usable)?,
    };
    model.config = Some(*cfg);
    Ok(model)
}

fn forward(x: &CovariateMatrix, y: &[f64], cfg: &StepwiseConfig, usable: &[usize], tss: f64) -> Result<LinearModel> {
    let n = y.len();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut e: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let mut rss = tss;

    let mut pool: Vec<Candidate> = usable
        .iter()
        .map(|&j| {
            let c = x.column(j);
            let m = c.iter().sum::<f64>() / n as f64;
            let resid: Vec<f64> = c.iter().map(|v| v - m).collect();
            let ss = resid.iter().map(|v| v * v).sum();
            Candidate { col: j, resid, ss }
        })
        .collect();
    // orthonormal basis of the selected columns (intercept removed by centering)
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut selected: Vec<usize> = Vec::new();
    let mut signs: Vec<i8> = Vec::new();
    let mut path: Vec<SelectionStep> = Vec::new();
    let mut current_adj = 0.0;
    let mut current_aic = aic(rss, n, 0);

    loop {
        let k = selected.len();
        if n <= k + 2 {
            break;
        }
        let df = (n - k - 2) as f64;
        let trials: Vec<Trial> = pool
            .par_iter()
            .enumerate()
            .filter_map(|(slot, c)| {
                let rr = dot(&c.resid, &c.resid);
                if !(c.ss > 0.0) || rr <= COLLINEAR_TOL * c.ss {
                    return None;
                }
                let vif = c.ss / rr;
                let re = dot(&c.resid, &e);
                let coef = re / rr;
                let new_rss = (rss - re * re / rr).max(0.0);
                let se = (new_rss / df / rr).sqrt();
                let p_value = if se > 0.0 { t_test_p_value(coef / se, df) } else { 0.0 };
                let adj = adjusted_r2(1.0 - new_rss / tss, n, k + 1);
                let score = match cfg.criterion {
                    Criterion::AdjR2 | Criterion::Cv10R2 => adj,
                    Criterion::Aic => -aic(new_rss, n, k + 1),
                    Criterion::FValue => {
                        if new_rss > 0.0 {
                            (rss - new_rss) / (new_rss / df)
                        } else {
                            f64::INFINITY
                        }
                    }
                };
                Some(Trial {
                    slot,
                    vif,
                    coef,
                    p_value,
                    rss: new_rss,
                    adj_r2: adj,
                    score,
                })
            })
            .filter(|t| t.vif < cfg.vif_max && t.p_value < cfg.p_max)
            .collect();
        let mut trials = trials;
        if cfg.criterion == Criterion::Cv10R2 {
            let scored: Vec<Option<f64>> = trials
                .par_iter()
                .map(|t| {
                    let mut cols = selected.clone();
                    cols.push(pool[t.slot].col);
                    cv10_r2(x, y, &cols)
                })
                .collect();
            for (t, s) in trials.iter_mut().zip(scored) {
                t.score = s.unwrap_or(f64::NEG_INFINITY);
            }
        }
        trials.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(pool[a.slot].col.cmp(&pool[b.slot].col))
        });

        let current_score = match cfg.criterion {
            Criterion::AdjR2 => current_adj,
            Criterion::Cv10R2 => {
                if selected.is_empty() {
                    0.0
                } else {
                    cv10_r2(x, y, &selected).unwrap_or(f64::NEG_INFINITY)
                }
            }
            Criterion::Aic => -current_aic,
            Criterion::FValue => f64::NEG_INFINITY,
        };
        let mut accepted = None;
        for t in &trials {
            if !selected.is_empty() {
                let gain = t.score - current_score;
                let enough = match cfg.criterion {
                    Criterion::AdjR2 | Criterion::Cv10R2 => gain >= cfg.min_adj_r2_gain,
                    Criterion::Aic => gain > 0.0,
                    Criterion::FValue => true,
                };
                if !enough {
                    break;
                }
                if !signs_hold(x, y, &selected, &signs, pool[t.slot].col)? {
                    continue;
                }
            }
            accepted = Some(*t);
            break;
        }
        let Some(t) = accepted else { break };

        let cand = pool.swap_remove(t.slot);
        let name = x.names()[cand.col].clone();
        debug!("stepwise: add {name} (adj R2 {:.4}, vif {:.3}, p {:.3e})", t.adj_r2, t.vif, t.p_value);
        let mut q = cand.resid;
        for b in &basis {
            let c = dot(b, &q);
            axpy(&mut q, -c, b);
        }
        let norm = dot(&q, &q).sqrt();
        q.iter_mut().for_each(|v| *v /= norm);
        pool.par_iter_mut().for_each(|c| {
            let proj = dot(&q, &c.resid);
            axpy(&mut c.resid, -proj, &q);
        });
        let proj = dot(&q, &e);
        axpy(&mut e, -proj, &q);
        rss = t.rss;
        basis.push(q);
        selected.push(cand.col);
        signs.push(sign(t.coef));
        current_adj = t.adj_r2;
        current_aic = aic(rss, n, selected.len());
        path.push(SelectionStep {
            name,
            adj_r2: t.adj_r2,
            vif: t.vif,
            p_value: t.p_value,
            removed: false,
        });
    }

    if selected.is_empty() {
        return Err(Error::EmptyModel);
    }
    let names: Vec<String> = selected.iter().map(|&j| x.names()[j].clone()).collect();
    let cols: Vec<&[f64]> = selected.iter().map(|&j| x.column(j)).collect();
    let fit = ols_fit(&cols, y, Some(&names))?;
    let mut model = LinearModel::from_ols(names, fit, signs);
    model.path = path;
    Ok(model)
}

// Whether the tentative model keeps every selected coefficient's entry sign.
fn signs_hold(x: &CovariateMatrix, y: &[f64], selected: &[usize], signs: &[i8], candidate: usize) -> Result<bool> {
    let mut cols: Vec<&[f64]> = selected.iter().map(|&j| x.column(j)).collect();
    cols.push(x.column(candidate));
    let fit = match ols_fit(&cols, y, None) {
        Ok(f) => f,
        Err(Error::SingularDesign(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    Ok(signs
        .iter()
        .zip(&fit.coefficients)
        .all(|(&s, &c)| sign(c) == s))
}

// 10-fold CV R² of OLS on the given columns with a fixed fold assignment.
fn cv10_r2(x: &CovariateMatrix, y: &[f64], cols: &[usize]) -> Option<f64> {
    let n = y.len();
    let k = 10.min(n);
    let mut sse = 0.0;
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|i| i % k != f).collect();
        let test: Vec<usize> = (0..n).filter(|i| i % k == f).collect();
        let tc: Vec<Vec<f64>> = cols
            .iter()
            .map(|&j| train.iter().map(|&i| x.value(i, j)).collect())
            .collect();
        let refs: Vec<&[f64]> = tc.iter().map(|c| c.as_slice()).collect();
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fit = ols_fit(&refs, &ty, None).ok()?;
        for &i in &test {
            let pred = fit.intercept
                + fit
                    .coefficients
                    .iter()
                    .zip(cols)
                    .map(|(b, &j)| b * x.value(i, j))
                    .sum::<f64>();
            sse += (y[i] - pred).powi(2);
        }
    }
    Some(1.0 - sse / total_sum_of_squares(y))
}

// VIF of every column of a full-rank design, from the centered QR factor.
fn all_vifs(cols: &[&[f64]]) -> Vec<f64> {
    use nalgebra::DMatrix;
    let n = cols[0].len();
    let p = cols.len();
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let xc = DMatrix::from_fn(n, p, |i, j| cols[j][i] - means[j]);
    let ss: Vec<f64> = (0..p).map(|j| xc.column(j).norm_squared()).collect();
    let r = xc.qr().r();
    match r.solve_upper_triangular(&DMatrix::identity(p, p)) {
        Some(inv) => (0..p).map(|j| inv.row(j).norm_squared() * ss[j]).collect(),
        None => vec![f64::INFINITY; p],
    }
}

fn backward(x: &CovariateMatrix, y: &[f64], cfg: &StepwiseConfig, usable: &[usize]) -> Result<LinearModel> {
    let n = y.len();
    // drop columns that are dependent on earlier ones, then cap at n - 2
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for &j in usable {
        if active.len() + 2 >= n {
            break;
        }
        let c = x.column(j);
        let m = c.iter().sum::<f64>() / n as f64;
        let mut r: Vec<f64> = c.iter().map(|v| v - m).collect();
        let ss = dot(&r, &r);
        for _ in 0..2 {
            for b in &basis {
                let p = dot(b, &r);
                axpy(&mut r, -p, b);
            }
        }
        let rr = dot(&r, &r);
        if rr <= 1e-10 * ss {
            continue;
        }
        let norm = rr.sqrt();
        r.iter_mut().for_each(|v| *v /= norm);
        basis.push(r);
        active.push(j);
    }
    let mut path = Vec::new();
    loop {
        if active.is_empty() {
            return Err(Error::EmptyModel);
        }
        let names: Vec<String> = active.iter().map(|&j| x.names()[j].clone()).collect();
        let cols: Vec<&[f64]> = active.iter().map(|&j| x.column(j)).collect();
        let fit = ols_fit(&cols, y, Some(&names))?;
        let vifs = all_vifs(&cols);
        let worst_p = argmax(&fit.p_values);
        let worst_v = argmax(&vifs);
        let drop = if fit.p_values[worst_p] >= cfg.p_max {
            Some(worst_p)
        } else if vifs[worst_v] >= cfg.vif_max {
            Some(worst_v)
        } else {
            None
        };
        match drop {
            Some(k) => {
                path.push(SelectionStep {
                    name: names[k].clone(),
                    adj_r2: fit.adj_r2,
                    vif: vifs[k],
                    p_value: fit.p_values[k],
                    removed: true,
                });
                active.remove(k);
            }
            None => {
                let signs = fit.coefficients.iter().map(|&c| sign(c)).collect();
                let mut model = LinearModel::from_ols(names, fit, signs);
                model.path = path;
                return Ok(model);
            }
        }
    }
}

// First index of the maximum (NaN counts as largest).
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] || (v[i].is_nan() && !v[best].is_nan()) {
            best = i;
        }
    }
    best
}
