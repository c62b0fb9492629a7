use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::run_cv;
use super::metrics::{median, quantile, r2_mse};
use super::plan::CvPlan;
use super::recipe::{fit_recipe, Dataset, ModelRecipe};
use crate::error::{Error, Result};
use crate::monitors::GroupKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub n_grid: Vec<usize>,
    pub iterations: usize,
    pub seed: u64,
    /// Also run k-fold CV inside every training sample.
    #[serde(default)]
    pub kfold: Option<usize>,
    /// Also run leave-one-group-out CV inside every training sample.
    #[serde(default)]
    pub logo: Option<GroupKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub n: usize,
    pub iteration: usize,
    pub fitting_r2: f64,
    pub holdout_r2: Option<f64>,
    /// Set instead of `holdout_r2` when the holdout has a single site.
    pub holdout_sq_error: Option<f64>,
    pub kfold_r2: Option<f64>,
    pub logo_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n: usize,
    pub metric: String,
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub records: Vec<McRecord>,
    pub summary: Vec<McSummary>,
    /// Training sizes below the recipe's minimum.
    pub skipped_n: Vec<usize>,
    /// `(n, iteration)` pairs whose fit failed.
    pub failed: Vec<(usize, usize)>,
}

/// Training sample for one iteration. The permutation depends only on the
/// seed and iteration, so samples for increasing `n` are nested.
pub fn monte_carlo_sample(n_total: usize, n: usize, seed: u64, iteration: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    let mut order: Vec<usize> = (0..n_total).collect();
    order.shuffle(&mut rng);
    let mut train = order[..n].to_vec();
    let mut holdout = order[n..].to_vec();
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}

fn one_iteration(recipe: &ModelRecipe, data: &Dataset, cfg: &MonteCarloConfig, n: usize, it: usize) -> Result<McRecord> {
    let (train, holdout) = monte_carlo_sample(data.len(), n, cfg.seed, it);
    let sample = data.subset(&train);
    let model = fit_recipe(recipe, &sample)?;
    let all: Vec<usize> = (0..sample.len()).collect();
    let fitted = model.predict_rows(&sample, &all)?;
    let fitting_r2 = r2_mse(&sample.y, &fitted)?;
    let preds = model.predict_rows(data, &holdout)?;
    let obs: Vec<f64> = holdout.iter().map(|&i| data.y[i]).collect();
    let (holdout_r2, holdout_sq_error) = if obs.len() == 1 {
        (None, Some((obs[0] - preds[0]).powi(2)))
    } else {
        (r2_mse(&obs, &preds).ok(), None)
    };
    let kfold_r2 = match cfg.kfold {
        Some(k) => {
            let plan = CvPlan::kfold(&sample.site_ids, k, cfg.seed ^ it as u64)?;
            Some(run_cv(recipe, &sample, &plan)?.r2_mse)
        }
        None => None,
    };
    let logo_r2 = match cfg.logo {
        Some(key) => match CvPlan::leave_one_group_out(&sample.site_ids, sample.groups(key), key) {
            Ok(plan) => Some(run_cv(recipe, &sample, &plan)?.r2_mse),
            Err(_) => None,
        },
        None => None,
    };
    Ok(McRecord {
        n,
        iteration: it,
        fitting_r2,
        holdout_r2,
        holdout_sq_error,
        kfold_r2,
        logo_r2,
    })
}

/// Fits on random subsets of `n` sites for each `n` in the grid and scores
/// the fit on the sample and on all remaining sites.
pub fn monte_carlo_curve(recipe: &ModelRecipe, data: &Dataset, cfg: &MonteCarloConfig) -> Result<MonteCarloResult> {
    if cfg.iterations == 0 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    let mut grid = Vec::new();
    let mut skipped_n = Vec::new();
    for &n in &cfg.n_grid {
        if n >= data.len() {
            return Err(Error::invalid(format!(
                "training size {n} must be below the {} available sites",
                data.len()
            )));
        }
        if n < recipe.min_sites() {
            warn!("monte carlo: skipping n = {n}, below the recipe minimum of {}", recipe.min_sites());
            skipped_n.push(n);
        } else {
            grid.push(n);
        }
    }
    let jobs: Vec<(usize, usize)> = grid
        .iter()
        .flat_map(|&n| (0..cfg.iterations).map(move |it| (n, it)))
        .collect();
    let outcomes: Vec<Result<McRecord>> = jobs
        .par_iter()
        .map(|&(n, it)| one_iteration(recipe, data, cfg, n, it))
        .collect();
    let mut records = Vec::with_capacity(jobs.len());
    let mut failed = Vec::new();
    for ((n, it), out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(r) => records.push(r),
            Err(e) => {
                warn!("monte carlo: n = {n}, iteration {it} failed: {e}");
                failed.push((*n, *it));
            }
        }
    }
    let summary = summarize(&grid, &records);
    Ok(MonteCarloResult {
        records,
        summary,
        skipped_n,
        failed,
    })
}

fn summarize(grid: &[usize], records: &[McRecord]) -> Vec<McSummary> {
    type Getter = fn(&McRecord) -> Option<f64>;
    let metrics: [(&str, Getter); 5] = [
        ("fitting_r2", |r| Some(r.fitting_r2)),
        ("holdout_r2", |r| r.holdout_r2),
        ("holdout_sq_error", |r| r.holdout_sq_error),
        ("kfold_r2", |r| r.kfold_r2),
        ("logo_r2", |r| r.logo_r2),
    ];
    let mut out = Vec::new();
    for &n in grid {
        for (name, get) in metrics {
            let vals: Vec<f64> = records.iter().filter(|r| r.n == n).filter_map(get).collect();
            if vals.is_empty() {
                continue;
            }
            out.push(McSummary {
                n,
                metric: name.to_string(),
                count: vals.len(),
                median: median(&vals),
                q1: quantile(&vals, 0.25),
                q3: quantile(&vals, 0.75),
            });
        }
    }
    out
}

impl MonteCarloResult {
    pub fn median(&self, n: usize, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.n == n && s.metric == metric)
            .map(|s| s.median)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(BufWriter::new(file))
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "n",
            "iteration",
            "fitting_r2",
            "holdout_r2",
            "holdout_sq_error",
            "kfold_r2",
            "logo_r2",
        ])?;
        for r in &self.records {
            w.write_record([
                r.n.to_string(),
                r.iteration.to_string(),
                r.fitting_r2.to_string(),
                opt(r.holdout_r2),
                opt(r.holdout_sq_error),
                opt(r.kfold_r2),
                opt(r.logo_r2),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<monte carlo csv>", e))?;
        Ok(())
    }
}
