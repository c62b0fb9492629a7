use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub mean: f64,
    pub sd: f64,
    pub zero_variance: bool,
}

impl ColumnMeta {
    fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let zero_variance = values.iter().all(|v| *v == values[0]) || sd <= 1e-12 * (1.0 + mean.abs());
        Self {
            mean,
            sd,
            zero_variance,
        }
    }
}

/// Dense site-by-covariate matrix stored column by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMatrix {
    site_ids: Vec<String>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    meta: Vec<ColumnMeta>,
}

impl CovariateMatrix {
    pub fn from_columns(site_ids: Vec<String>, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::invalid("column names and data disagree in length"));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::invalid(format!("duplicate covariate name `{n}`")));
            }
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != site_ids.len() {
                return Err(Error::invalid(format!(
                    "column `{name}` has {} rows, expected {}",
                    col.len(),
                    site_ids.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "column `{name}` has a non-finite value at site `{}`",
                    site_ids[i]
                )));
            }
        }
        let meta = columns.iter().map(|c| ColumnMeta::of(c)).collect();
        Ok(Self {
            site_ids,
            names,
            columns,
            meta,
        })
    }

    /// Matrix with no covariate columns, used for intercept-only models.
    pub fn empty(site_ids: Vec<String>) -> Self {
        Self {
            site_ids,
            names: Vec::new(),
            columns: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.site_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn meta(&self) -> &[ColumnMeta] {
        &self.meta
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.position(name).map(|j| self.column(j))
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Row `i` restricted to the named columns, in the given order.
    pub fn row_for(&self, i: usize, names: &[String]) -> Result<Vec<f64>> {
        names
            .iter()
            .map(|n| {
                self.column_by_name(n)
                    .map(|c| c[i])
                    .ok_or_else(|| Error::invalid(format!("missing covariate column `{n}`")))
            })
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let site_ids = rows.iter().map(|&i| self.site_ids[i].clone()).collect();
        let columns: Vec<Vec<f64>> = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        let meta = columns.iter().map(|c| ColumnMeta::of(c)).collect();
        Self {
            site_ids,
            names: self.names.clone(),
            columns,
            meta,
        }
    }

    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            let j = self
                .position(n)
                .ok_or_else(|| Error::invalid(format!("missing covariate column `{n}`")))?;
            cols.push(j);
        }
        Ok(Self {
            site_ids: self.site_ids.clone(),
            names: names.to_vec(),
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
            meta: cols.iter().map(|&j| self.meta[j]).collect(),
        })
    }

    /// Drops the named columns when present.
    pub fn without_columns(&self, names: &[String]) -> Self {
        let keep: Vec<String> = self
            .names
            .iter()
            .filter(|n| !names.contains(n))
            .cloned()
            .collect();
        self.select_columns(&keep).expect("kept columns exist")
    }

    /// Multiplies one column by `factor`.
    pub fn scale_column(&mut self, j: usize, factor: f64) {
        for v in &mut self.columns[j] {
            *v *= factor;
        }
        self.meta[j] = ColumnMeta::of(&self.columns[j]);
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(BufWriter::new(file))
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["site_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            record.push(self.site_ids[i].clone());
            record.extend(self.columns.iter().map(|c| c[i].to_string()));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<covariate csv>", e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("site_id") {
            return Err(Error::Format {
                line: 1,
                message: "first column must be `site_id`".into(),
            });
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut site_ids = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            site_ids.push(rec[0].to_string());
            for (j, col) in columns.iter_mut().enumerate() {
                let v: f64 = rec[j + 1].parse().map_err(|_| Error::Format {
                    line: i + 2,
                    message: format!("`{}` is not a number", &rec[j + 1]),
                })?;
                col.push(v);
            }
        }
        Self::from_columns(site_ids, names, columns)
    }

    /// Per-column summary keyed by name.
    pub fn summary(&self) -> BTreeMap<String, ColumnMeta> {
        self.names.iter().cloned().zip(self.meta.iter().copied()).collect()
    }
}
