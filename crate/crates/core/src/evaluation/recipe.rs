use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};
use crate::kriging::{uk_fit, KrigingModel, VariogramConfig};
use crate::lur::{pls_fit, stepwise_select, LinearModel, PlsModel, StepwiseConfig};
use crate::monitors::{GroupKey, MonitorTable};

/// Sites, responses and candidate covariates in matching row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub site_ids: Vec<String>,
    pub coords: Vec<(f64, f64)>,
    pub provinces: Vec<String>,
    pub cities: Vec<String>,
    pub y: Vec<f64>,
    pub x: CovariateMatrix,
}

impl Dataset {
    /// Joins monitors and covariate rows by site id.
    pub fn new(table: &MonitorTable, x: &CovariateMatrix) -> Result<Self> {
        let index: HashMap<&str, usize> = x
            .site_ids()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(table.len());
        for m in table.monitors() {
            let i = index
                .get(m.site_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no covariate row for site `{}`", m.site_id)))?;
            rows.push(*i);
        }
        let x = if rows.iter().enumerate().all(|(k, &i)| k == i) && rows.len() == x.n_rows() {
            x.clone()
        } else {
            x.select_rows(&rows)
        };
        Ok(Self {
            site_ids: table.site_ids(),
            coords: table.coords(),
            provinces: table.groups(GroupKey::Province),
            cities: table.groups(GroupKey::City),
            y: table.responses(),
            x,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn groups(&self, key: GroupKey) -> &[String] {
        match key {
            GroupKey::Province => &self.provinces,
            GroupKey::City => &self.cities,
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let pick = |v: &[String]| rows.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        Self {
            site_ids: pick(&self.site_ids),
            coords: rows.iter().map(|&i| self.coords[i]).collect(),
            provinces: pick(&self.provinces),
            cities: pick(&self.cities),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            x: self.x.select_rows(rows),
        }
    }
}

fn default_folds() -> usize {
    10
}

/// How the trend is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Selection {
    Stepwise(StepwiseConfig),
    Pls {
        max_components: usize,
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default)]
        seed: u64,
    },
    /// OLS on a fixed list of columns.
    Fixed { columns: Vec<String> },
    InterceptOnly,
}

/// Everything needed to fit a model from a dataset; rerun inside every CV
/// fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecipe {
    pub selection: Selection,
    /// Universal kriging on the trend residuals when present.
    #[serde(default)]
    pub kriging: Option<VariogramConfig>,
    /// Restricts the candidate columns when present.
    #[serde(default)]
    pub include: Option<Vec<String>>,
    #[serde(default)]
    pub exclude: Vec<String>,
}

impl ModelRecipe {
    pub fn stepwise() -> Self {
        Self {
            selection: Selection::Stepwise(StepwiseConfig::default()),
            kriging: None,
            include: None,
            exclude: Vec::new(),
        }
    }

    pub fn with_kriging(mut self, cfg: VariogramConfig) -> Self {
        self.kriging = Some(cfg);
        self
    }

    pub fn excluding(mut self, columns: &[String]) -> Self {
        self.exclude.extend(columns.iter().cloned());
        self
    }

    /// Short name such as `stepwise+uk`.
    pub fn label(&self) -> String {
        let base = match &self.selection {
            Selection::Stepwise(_) => "stepwise",
            Selection::Pls { .. } => "pls",
            Selection::Fixed { .. } => "ols",
            Selection::InterceptOnly => "mean",
        };
        if self.kriging.is_some() {
            format!("{base}+uk")
        } else {
            base.to_string()
        }
    }

    /// Candidate covariates after the include/exclude lists.
    pub fn candidates(&self, x: &CovariateMatrix) -> Result<CovariateMatrix> {
        let mut names: Vec<String> = match &self.include {
            Some(list) => {
                for n in list {
                    if x.position(n).is_none() {
                        return Err(Error::invalid(format!("included column `{n}` is not in the covariate set")));
                    }
                }
                x.names().iter().filter(|n| list.contains(n)).cloned().collect()
            }
            None => x.names().to_vec(),
        };
        names.retain(|n| !self.exclude.contains(n));
        x.select_columns(&names)
    }

    /// Smallest training set the recipe can be fitted on.
    pub fn min_sites(&self) -> usize {
        let trend = match &self.selection {
            Selection::Stepwise(_) => 3,
            Selection::Pls { max_components, folds, .. } => (max_components + 2).max(*folds),
            Selection::Fixed { columns } => columns.len() + 2,
            Selection::InterceptOnly => 1,
        };
        if self.kriging.is_some() {
            trend.max(3)
        } else {
            trend
        }
    }
}

/// A fitted recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Linear { model: LinearModel },
    Kriging { model: KrigingModel },
    Pls { model: PlsModel },
    PlsKriging { pls: PlsModel, kriging: KrigingModel },
}

impl FittedModel {
    /// Covariate columns a prediction row must provide, in order.
    pub fn required_columns(&self) -> &[String] {
        match self {
            FittedModel::Linear { model } => &model.selected,
            FittedModel::Kriging { model } => &model.drift.selected,
            FittedModel::Pls { model } | FittedModel::PlsKriging { pls: model, .. } => &model.names,
        }
    }

    pub fn is_kriging(&self) -> bool {
        matches!(self, FittedModel::Kriging { .. } | FittedModel::PlsKriging { .. })
    }

    /// Mean prediction at `(x, y)` from a row of `required_columns`.
    pub fn predict_one(&self, x: f64, y: f64, row: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Linear { model } => Ok(model.predict_row(row)),
            FittedModel::Kriging { model } => model.predict_mean(x, y, row),
            FittedModel::Pls { model } => Ok(model.predict_row(row)),
            FittedModel::PlsKriging { pls, kriging } => kriging.predict_mean(x, y, &pls.scores(row)),
        }
    }

    /// Mean and, for kriging models, the kriging variance.
    pub fn predict_with_variance(&self, x: f64, y: f64, row: &[f64]) -> Result<(f64, Option<f64>)> {
        match self {
            FittedModel::Kriging { model } => {
                let p = model.predict(x, y, row)?;
                Ok((p.mean, Some(p.variance)))
            }
            FittedModel::PlsKriging { pls, kriging } => {
                let p = kriging.predict(x, y, &pls.scores(row))?;
                Ok((p.mean, Some(p.variance)))
            }
            _ => Ok((self.predict_one(x, y, row)?, None)),
        }
    }

    /// Predictions for the given rows of a dataset.
    pub fn predict_rows(&self, data: &Dataset, rows: &[usize]) -> Result<Vec<f64>> {
        let cols: Vec<&[f64]> = self
            .required_columns()
            .iter()
            .map(|n| {
                data.x
                    .column_by_name(n)
                    .ok_or_else(|| Error::invalid(format!("missing covariate column `{n}`")))
            })
            .collect::<Result<_>>()?;
        let mut row = vec![0.0; cols.len()];
        rows.iter()
            .map(|&i| {
                for (r, c) in row.iter_mut().zip(&cols) {
                    *r = c[i];
                }
                let (x, y) = data.coords[i];
                self.predict_one(x, y, &row)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Runs selection (and kriging when requested) on all rows of `data`.
pub fn fit_recipe(recipe: &ModelRecipe, data: &Dataset) -> Result<FittedModel> {
    if data.len() < recipe.min_sites() {
        return Err(Error::invalid(format!(
            "recipe `{}` needs at least {} sites, got {}",
            recipe.label(),
            recipe.min_sites(),
            data.len()
        )));
    }
    let x = recipe.candidates(&data.x)?;
    match &recipe.selection {
        Selection::Pls {
            max_components,
            folds,
            seed,
        } => {
            let pls = pls_fit(&x, &data.y, *max_components, *folds, *seed)?.model;
            match &recipe.kriging {
                None => Ok(FittedModel::Pls { model: pls }),
                Some(cfg) => {
                    let scores = pls.score_matrix(&x)?;
                    let drift = LinearModel::fit_columns(&scores, &data.y, scores.names())?;
                    let kriging = uk_fit(&drift, &data.coords, &scores, &data.y, cfg)?;
                    Ok(FittedModel::PlsKriging { pls, kriging })
                }
            }
        }
        other => {
            let linear = match other {
                Selection::Stepwise(cfg) => stepwise_select(&x, &data.y, cfg)?,
                Selection::Fixed { columns } => LinearModel::fit_columns(&x, &data.y, columns)?,
                _ => LinearModel::intercept_only(&data.y)?,
            };
            match &recipe.kriging {
                None => Ok(FittedModel::Linear { model: linear }),
                Some(cfg) => Ok(FittedModel::Kriging {
                    model: uk_fit(&linear, &data.coords, &x, &data.y, cfg)?,
                }),
            }
        }
    }
}
