use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{r2_mse, rmse, DistanceSummary};
use super::plan::CvPlan;
use super::recipe::{fit_recipe, Dataset, ModelRecipe};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: String,
    pub n_test: usize,
    pub rmse: f64,
    /// Absent when the fold has fewer than 2 sites or constant observations.
    pub r2_mse: Option<f64>,
}

/// Out-of-sample predictions for every site plus summary metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub scheme: String,
    pub site_ids: Vec<String>,
    pub folds: Vec<String>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
    pub nn_distance_m: Vec<f64>,
    pub r2_mse: f64,
    pub rmse: f64,
    pub negative_r2: bool,
    pub per_fold: Vec<FoldMetrics>,
    pub nn_distance: DistanceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub scheme: String,
    pub recipe: String,
    pub n_sites: usize,
    pub r2_mse: f64,
    pub rmse: f64,
    pub negative_r2: bool,
    pub per_fold: Vec<FoldMetrics>,
    pub nn_distance: DistanceSummary,
}

/// Refits `recipe` without each fold and predicts the held-out sites.
pub fn run_cv(recipe: &ModelRecipe, data: &Dataset, plan: &CvPlan) -> Result<CvResult> {
    if plan.site_ids != data.site_ids {
        return Err(Error::invalid("CV plan was built for different sites"));
    }
    let folds = plan.folds();
    let n = data.len();
    let fold_preds: Vec<Result<Vec<f64>>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| {
            let label = &plan.fold_labels[f];
            let train: Vec<usize> = (0..n).filter(|&i| plan.fold_of[i] != f).collect();
            let wrap = |e: Error| Error::Fold {
                fold: label.clone(),
                message: e.to_string(),
            };
            let model = fit_recipe(recipe, &data.subset(&train)).map_err(wrap)?;
            model.predict_rows(data, test).map_err(wrap)
        })
        .collect();
    let mut predicted = vec![f64::NAN; n];
    let mut per_fold = Vec::with_capacity(folds.len());
    for (f, (test, preds)) in folds.iter().zip(fold_preds).enumerate() {
        let preds = preds?;
        let obs: Vec<f64> = test.iter().map(|&i| data.y[i]).collect();
        for (&i, p) in test.iter().zip(&preds) {
            predicted[i] = *p;
        }
        per_fold.push(FoldMetrics {
            fold: plan.fold_labels[f].clone(),
            n_test: test.len(),
            rmse: rmse(&obs, &preds),
            r2_mse: r2_mse(&obs, &preds).ok(),
        });
    }
    let r2 = r2_mse(&data.y, &predicted)?;
    let nn = plan.nn_distances(&data.coords);
    Ok(CvResult {
        scheme: plan.scheme.label(),
        site_ids: data.site_ids.clone(),
        folds: (0..n).map(|i| plan.fold_label(i).to_string()).collect(),
        observed: data.y.clone(),
        rmse: rmse(&data.y, &predicted),
        predicted,
        r2_mse: r2,
        negative_r2: r2 < 0.0,
        per_fold,
        nn_distance: DistanceSummary::of(&nn),
        nn_distance_m: nn,
    })
}

impl CvResult {
    pub fn summary(&self, recipe: &str) -> CvSummary {
        CvSummary {
            scheme: self.scheme.clone(),
            recipe: recipe.to_string(),
            n_sites: self.site_ids.len(),
            r2_mse: self.r2_mse,
            rmse: self.rmse,
            negative_r2: self.negative_r2,
            per_fold: self.per_fold.clone(),
            nn_distance: self.nn_distance,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(BufWriter::new(file))
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["site_id", "fold", "observed", "predicted", "nn_distance_m"])?;
        for i in 0..self.site_ids.len() {
            w.write_record([
                self.site_ids[i].clone(),
                self.folds[i].clone(),
                self.observed[i].to_string(),
                self.predicted[i].to_string(),
                self.nn_distance_m[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<cv csv>", e))?;
        Ok(())
    }
}
