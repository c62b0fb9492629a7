use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SelectionMethod;
use super::run::RunReport;
use crate::error::{Error, Result};

/// One model in a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: String,
    pub selection: SelectionMethod,
    pub kriging: bool,
    pub satellite: bool,
    pub kfold_r2: Option<f64>,
    pub logo_r2: Option<f64>,
    pub kfold_rmse: Option<f64>,
    pub logo_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub dataset_hash: String,
    pub rows: Vec<ComparisonRow>,
}

/// Lines up CV metrics of runs on the same dataset. The k-fold columns come
/// from the first k-fold scheme, the LOGO columns from the first
/// leave-one-group-out scheme.
pub fn compare_models(reports: &[RunReport]) -> Result<ComparisonTable> {
    let first = reports.first().ok_or_else(|| Error::invalid("no reports to compare"))?;
    let hash_of = |r: &RunReport| {
        r.dataset_hash
            .clone()
            .ok_or_else(|| Error::invalid(format!("report for `{}` has no dataset", r.recipe.family)))
    };
    let dataset_hash = hash_of(first)?;
    let mut rows = Vec::with_capacity(reports.len());
    for r in reports {
        if hash_of(r)? != dataset_hash {
            return Err(Error::invalid(format!(
                "report for `{}` was built from a different dataset",
                r.recipe.family
            )));
        }
        let kfold = r.cv.iter().find(|c| c.scheme.starts_with("kfold"));
        let logo = r.cv.iter().find(|c| c.scheme.starts_with("logo"));
        rows.push(ComparisonRow {
            family: r.recipe.family.clone(),
            selection: r.recipe.selection,
            kriging: r.recipe.kriging,
            satellite: r.recipe.satellite,
            kfold_r2: kfold.map(|c| c.r2_mse),
            logo_r2: logo.map(|c| c.r2_mse),
            kfold_rmse: kfold.map(|c| c.rmse),
            logo_rmse: logo.map(|c| c.rmse),
        });
    }
    Ok(ComparisonTable { dataset_hash, rows })
}

impl ComparisonTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(BufWriter::new(file))
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "family",
            "selection",
            "kriging",
            "satellite",
            "kfold_r2",
            "logo_r2",
            "kfold_rmse",
            "logo_rmse",
        ])?;
        for r in &self.rows {
            let selection = match r.selection {
                SelectionMethod::Stepwise => "stepwise",
                SelectionMethod::Pls => "pls",
            };
            w.write_record([
                r.family.clone(),
                selection.to_string(),
                r.kriging.to_string(),
                r.satellite.to_string(),
                opt(r.kfold_r2),
                opt(r.logo_r2),
                opt(r.kfold_rmse),
                opt(r.logo_rmse),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<comparison csv>", e))?;
        Ok(())
    }
}
