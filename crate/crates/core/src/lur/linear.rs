use serde::{Deserialize, Serialize};

use super::ols::{ols_fit, OlsFit};
use super::stepwise::{SelectionStep, StepwiseConfig};
use crate::covariates::CovariateMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub r2: f64,
    pub adj_r2: f64,
    pub residuals: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
}

/// A fitted linear trend `y = intercept + Σ coefficients[i] · x[selected[i]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub selected: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub entry_signs: Vec<i8>,
    pub fit_stats: FitStats,
    pub n: usize,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path: Vec<SelectionStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<StepwiseConfig>,
}

pub(crate) fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

impl LinearModel {
    /// OLS on the named columns, in that order. Entry signs are the signs of
    /// the fitted coefficients.
    pub fn fit_columns(x: &CovariateMatrix, y: &[f64], names: &[String]) -> Result<Self> {
        if names.is_empty() {
            return Self::intercept_only(y);
        }
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            cols.push(
                x.column_by_name(n)
                    .ok_or_else(|| Error::invalid(format!("missing covariate column `{n}`")))?,
            );
        }
        let fit = ols_fit(&cols, y, Some(names))?;
        let signs = fit.coefficients.iter().map(|&c| sign(c)).collect();
        Ok(Self::from_ols(names.to_vec(), fit, signs))
    }

    pub(crate) fn from_ols(selected: Vec<String>, fit: OlsFit, entry_signs: Vec<i8>) -> Self {
        Self {
            p: selected.len(),
            n: fit.n,
            selected,
            intercept: fit.intercept,
            coefficients: fit.coefficients,
            entry_signs,
            fit_stats: FitStats {
                r2: fit.r2,
                adj_r2: fit.adj_r2,
                residuals: fit.residuals,
                std_errors: fit.std_errors,
                p_values: fit.p_values,
            },
            path: Vec::new(),
            config: None,
        }
    }

    /// The mean-only model.
    pub fn intercept_only(y: &[f64]) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::invalid("no observations"));
        }
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        Ok(Self {
            selected: Vec::new(),
            intercept: mean,
            coefficients: Vec::new(),
            entry_signs: Vec::new(),
            fit_stats: FitStats {
                r2: 0.0,
                adj_r2: 0.0,
                residuals: y.iter().map(|v| v - mean).collect(),
                std_errors: Vec::new(),
                p_values: Vec::new(),
            },
            n: y.len(),
            p: 0,
            path: Vec::new(),
            config: None,
        })
    }

    /// Prediction for one row holding the selected columns in order.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.coefficients.len());
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict(&self, x: &CovariateMatrix) -> Result<Vec<f64>> {
        let mut cols = Vec::with_capacity(self.selected.len());
        for n in &self.selected {
            cols.push(
                x.column_by_name(n)
                    .ok_or_else(|| Error::invalid(format!("missing covariate column `{n}`")))?,
            );
        }
        Ok((0..x.n_rows())
            .map(|i| {
                self.intercept
                    + self
                        .coefficients
                        .iter()
                        .zip(&cols)
                        .map(|(b, c)| b * c[i])
                        .sum::<f64>()
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
