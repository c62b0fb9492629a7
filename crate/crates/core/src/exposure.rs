//! Gridded prediction and population exposure statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::FittedModel;
use crate::geodata::{Lattice, RasterGrid, DEFAULT_NODATA};
use crate::kriging::KrigingModel;
use crate::lur::LinearModel;

/// WHO guideline (10) and interim targets (35, 25, 15) for annual PM2.5,
/// plus higher reporting levels. 35 is also the national standard.
pub const PM25_THRESHOLDS: [f64; 7] = [10.0, 15.0, 25.0, 35.0, 50.0, 75.0, 100.0];
/// Annual NO2 reporting levels around the 40 µg/m³ guideline.
pub const NO2_THRESHOLDS: [f64; 5] = [20.0, 30.0, 40.0, 50.0, 60.0];

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSurface {
    pub grid: RasterGrid,
    pub variance: Option<RasterGrid>,
    pub model_id: String,
    /// Cells whose negative prediction was raised to 0.
    pub n_floored: usize,
    pub n_nodata: usize,
}

impl From<LinearModel> for FittedModel {
    fn from(model: LinearModel) -> Self {
        FittedModel::Linear { model }
    }
}

impl From<KrigingModel> for FittedModel {
    fn from(model: KrigingModel) -> Self {
        FittedModel::Kriging { model }
    }
}

/// Evaluates `model` at every cell of `lattice`. `grids` must hold one grid
/// per required covariate, each on `lattice`.
pub fn predict_grid(
    model: &FittedModel,
    lattice: &Lattice,
    grids: &BTreeMap<String, RasterGrid>,
    with_variance: bool,
    model_id: &str,
) -> Result<PredictionSurface> {
    let mut inputs = Vec::new();
    let mut mismatched = Vec::new();
    for name in model.required_columns() {
        let g = grids
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing covariate grid `{name}`")))?;
        if g.lattice != *lattice {
            mismatched.push(name.clone());
        }
        inputs.push(g);
    }
    if !mismatched.is_empty() {
        return Err(Error::LatticeMismatch(format!(
            "grids not on the prediction lattice: {}",
            mismatched.join(", ")
        )));
    }
    let want_var = with_variance && model.is_kriging();
    let cells: Vec<Result<Option<(f64, Option<f64>)>>> = (0..lattice.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; inputs.len()],
            |row, i| {
                for (r, g) in row.iter_mut().zip(&inputs) {
                    let v = g.values[i];
                    if g.is_nodata(v) {
                        return Ok(None);
                    }
                    *r = v;
                }
                let (x, y) = lattice.center_of(i);
                if want_var {
                    model.predict_with_variance(x, y, row).map(Some)
                } else {
                    model.predict_one(x, y, row).map(|m| Some((m, None)))
                }
            },
        )
        .collect();
    let mut values = Vec::with_capacity(lattice.len());
    let mut variance = if want_var { Some(Vec::with_capacity(lattice.len())) } else { None };
    let (mut n_floored, mut n_nodata) = (0, 0);
    for c in cells {
        match c? {
            Some((m, v)) => {
                if m < 0.0 {
                    n_floored += 1;
                }
                values.push(m.max(0.0));
                if let Some(var) = variance.as_mut() {
                    var.push(v.unwrap_or(DEFAULT_NODATA));
                }
            }
            None => {
                n_nodata += 1;
                values.push(DEFAULT_NODATA);
                if let Some(var) = variance.as_mut() {
                    var.push(DEFAULT_NODATA);
                }
            }
        }
    }
    Ok(PredictionSurface {
        grid: RasterGrid::new(*lattice, values, DEFAULT_NODATA)?,
        variance: variance
            .map(|v| RasterGrid::new(*lattice, v, DEFAULT_NODATA))
            .transpose()?,
        model_id: model_id.to_string(),
        n_floored,
        n_nodata,
    })
}

/// Restricts exposure statistics to cells whose population lies in a range.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PopulationFilter {
    pub min_population: Option<f64>,
    pub max_population: Option<f64>,
}

impl PopulationFilter {
    fn keeps(&self, p: f64) -> bool {
        self.min_population.map_or(true, |m| p >= m) && self.max_population.map_or(true, |m| p <= m)
    }
}

// (concentration, population) for cells valid in both grids.
fn paired_cells(surface: &RasterGrid, population: &RasterGrid, filter: &PopulationFilter) -> Result<Vec<(f64, f64)>> {
    if surface.lattice != population.lattice {
        return Err(Error::LatticeMismatch("surface and population grids differ".into()));
    }
    let mut out = Vec::new();
    for (c, p) in surface.values.iter().zip(&population.values) {
        if surface.is_nodata(*c) || population.is_nodata(*p) {
            continue;
        }
        if *p < 0.0 {
            return Err(Error::invalid(format!("negative population value {p}")));
        }
        if filter.keeps(*p) {
            out.push((*c, *p));
        }
    }
    Ok(out)
}

fn weighted_mean(pairs: &[(f64, f64)]) -> Result<f64> {
    let total: f64 = pairs.iter().map(|(_, p)| p).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("total population over valid cells is zero"));
    }
    Ok(pairs.iter().map(|(c, p)| c * p).sum::<f64>() / total)
}

/// `Σ pop·c / Σ pop` over cells valid in both grids.
pub fn population_weighted_mean(surface: &RasterGrid, population: &RasterGrid) -> Result<f64> {
    weighted_mean(&paired_cells(surface, population, &PopulationFilter::default())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureCurve {
    pub thresholds: Vec<f64>,
    /// Share of population in cells with concentration strictly above each
    /// threshold.
    pub fraction_above: Vec<f64>,
    pub pop_weighted_mean: f64,
    pub total_population: f64,
}

pub fn cumulative_exposure(surface: &RasterGrid, population: &RasterGrid, thresholds: &[f64]) -> Result<ExposureCurve> {
    cumulative_exposure_filtered(surface, population, thresholds, &PopulationFilter::default())
}

pub fn cumulative_exposure_filtered(
    surface: &RasterGrid,
    population: &RasterGrid,
    thresholds: &[f64],
    filter: &PopulationFilter,
) -> Result<ExposureCurve> {
    let mut pairs = paired_cells(surface, population, filter)?;
    let mean = weighted_mean(&pairs)?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // suffix[k] = population of pairs[k..]
    let mut suffix = vec![0.0; pairs.len() + 1];
    for k in (0..pairs.len()).rev() {
        suffix[k] = suffix[k + 1] + pairs[k].1;
    }
    let total = suffix[0];
    let mut ts = thresholds.to_vec();
    ts.sort_by(f64::total_cmp);
    let fraction_above = ts
        .iter()
        .map(|&t| {
            let first_above = pairs.partition_point(|(c, _)| *c <= t);
            suffix[first_above] / total
        })
        .collect();
    Ok(ExposureCurve {
        thresholds: ts,
        fraction_above,
        pop_weighted_mean: mean,
        total_population: total,
    })
}

impl ExposureCurve {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(BufWriter::new(file))
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["threshold", "fraction_above"])?;
        for (t, f) in self.thresholds.iter().zip(&self.fraction_above) {
            w.write_record([t.to_string(), f.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<exposure csv>", e))?;
        Ok(())
    }
}

/// Population variance of the valid cells in the centered
/// `window_cells × window_cells` square around each cell. Windows are
/// truncated at the grid edge; nodata cells stay nodata.
pub fn window_variance(surface: &RasterGrid, window_cells: usize) -> Result<RasterGrid> {
    if window_cells == 0 || window_cells % 2 == 0 {
        return Err(Error::invalid(format!("window must be an odd cell count, got {window_cells}")));
    }
    let lat = surface.lattice;
    let h = window_cells / 2;
    let out: Vec<f64> = (0..lat.len())
        .into_par_iter()
        .map(|idx| {
            if surface.is_nodata(surface.values[idx]) {
                return surface.nodata;
            }
            let (col, row) = (idx % lat.n_cols, idx / lat.n_cols);
            let (c0, c1) = (col.saturating_sub(h), (col + h).min(lat.n_cols - 1));
            let (r0, r1) = (row.saturating_sub(h), (row + h).min(lat.n_rows - 1));
            let mut n = 0usize;
            let mut sum = 0.0;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let v = surface.values[lat.index(c, r)];
                    if !surface.is_nodata(v) {
                        n += 1;
                        sum += v;
                    }
                }
            }
            let mean = sum / n as f64;
            let mut ss = 0.0;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let v = surface.values[lat.index(c, r)];
                    if !surface.is_nodata(v) {
                        ss += (v - mean).powi(2);
                    }
                }
            }
            ss / n as f64
        })
        .collect();
    RasterGrid::new(lat, out, surface.nodata)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(n_cols: usize, n_rows: usize) -> Lattice {
        Lattice::new(0.0, 0.0, 1000.0, n_cols, n_rows).unwrap()
    }

    #[test]
    fn weighted_mean_example() {
        let lat = lattice(2, 1);
        let s = RasterGrid::new(lat, vec![10.0, 20.0], DEFAULT_NODATA).unwrap();
        let p = RasterGrid::new(lat, vec![1.0, 3.0], DEFAULT_NODATA).unwrap();
        assert_eq!(population_weighted_mean(&s, &p).unwrap(), 17.5);
        let zero = RasterGrid::filled(lat, 0.0);
        assert!(population_weighted_mean(&s, &zero).is_err());
    }

    #[test]
    fn exposure_example() {
        let lat = lattice(3, 1);
        let s = RasterGrid::new(lat, vec![30.0, 40.0, 50.0], DEFAULT_NODATA).unwrap();
        let p = RasterGrid::new(lat, vec![1.0, 1.0, 2.0], DEFAULT_NODATA).unwrap();
        let c = cumulative_exposure(&s, &p, &[60.0, 35.0, 0.0, 50.0]).unwrap();
        assert_eq!(c.thresholds, vec![0.0, 35.0, 50.0, 60.0]);
        assert_eq!(c.fraction_above, vec![1.0, 0.75, 0.0, 0.0]);
    }

    #[test]
    fn population_filter() {
        let lat = lattice(3, 1);
        let s = RasterGrid::new(lat, vec![30.0, 40.0, 50.0], DEFAULT_NODATA).unwrap();
        let p = RasterGrid::new(lat, vec![1.0, 100.0, 2.0], DEFAULT_NODATA).unwrap();
        let urban = PopulationFilter {
            min_population: Some(50.0),
            max_population: None,
        };
        let c = cumulative_exposure_filtered(&s, &p, &[35.0], &urban).unwrap();
        assert_eq!(c.pop_weighted_mean, 40.0);
        assert_eq!(c.fraction_above, vec![1.0]);
    }

    #[test]
    fn window_variance_degenerate() {
        let lat = lattice(4, 3);
        let s = RasterGrid::from_fn(lat, |x, y| x * 0.01 + y);
        assert!(window_variance(&s, 1).unwrap().values.iter().all(|v| *v == 0.0));
        let flat = RasterGrid::filled(lat, 7.0);
        assert!(window_variance(&flat, 3).unwrap().values.iter().all(|v| *v == 0.0));
        assert!(window_variance(&flat, 2).is_err());
    }

    #[test]
    fn intercept_only_surface() {
        let model: FittedModel = LinearModel::intercept_only(&[30.0, 50.0]).unwrap().into();
        let lat = lattice(5, 4);
        let s = predict_grid(&model, &lat, &BTreeMap::new(), false, "mean").unwrap();
        assert!(s.grid.values.iter().all(|v| *v == 40.0));
        assert_eq!(s.n_floored, 0);
    }

    #[test]
    fn missing_and_mismatched_grids() {
        let x = crate::covariates::CovariateMatrix::from_columns(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["road".into()],
            vec![vec![1.0, 2.0, 4.0]],
        )
        .unwrap();
        let lin = LinearModel::fit_columns(&x, &[1.0, 2.5, 3.0], &["road".into()]).unwrap();
        let model: FittedModel = lin.into();
        let lat = lattice(3, 3);
        assert!(matches!(
            predict_grid(&model, &lat, &BTreeMap::new(), false, "m"),
            Err(Error::InvalidArgument(_))
        ));
        let mut grids = BTreeMap::new();
        grids.insert("road".to_string(), RasterGrid::filled(lattice(2, 2), 0.0));
        match predict_grid(&model, &lat, &grids, false, "m") {
            Err(Error::LatticeMismatch(msg)) => assert!(msg.contains("road")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
