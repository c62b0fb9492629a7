//! Seeded synthetic study regions: monitors with daily series, feature
//! layers, land cover, covariate grids, and the ground truth behind them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::{
    build_matrix, default_covariate_set, evaluate_specs, CovariateSources, CovariateSpec, DefaultSetSources,
};
use crate::error::{Error, Result};
use crate::evaluation::Dataset;
use crate::geodata::{write_features, write_raster, CategoricalGrid, Feature, FeatureKind, FeatureLayer, Lattice, Point, RasterGrid};
use crate::monitors::{annualize, days_in_year, write_daily_csv, write_sites_csv, DailyRecord, MonitorTable, SiteInfo};
use super::config::{
    CovariateSetRef, CvConfig, ExposureConfig, InputPaths, LandcoverInput, ModelConfig, PipelineConfig, PredictionConfig,
};

pub const POI_CATEGORIES: [&str; 5] = ["gas_station", "bus_stop", "restaurant", "factory", "market"];

/// Land-cover codes: cropland, forest, grassland, shrubland, wetland, water,
/// impervious, bare.
pub const LANDCOVER_CLASSES: [i32; 8] = [1, 2, 3, 4, 5, 6, 7, 8];
pub const URBAN_CLASS: i32 = 7;
pub const LANDCOVER_NODATA: i32 = -1;

pub const GRID_NAMES: [&str; 13] = [
    "elevation",
    "population",
    "ndvi",
    "evi",
    "temperature",
    "humidity",
    "wind_speed",
    "pressure",
    "precipitation",
    "blh",
    "aod",
    "sat_pm25",
    "sat_no2",
];

/// Grids derived from the satellite analog.
pub const SATELLITE_GRIDS: [&str; 3] = ["aod", "sat_pm25", "sat_no2"];

/// Annual targets are floored here so daily values stay non-negative.
const MIN_ANNUAL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendTerm {
    pub covariate: String,
    pub coefficient: f64,
}

impl TrendTerm {
    pub fn new(covariate: impl Into<String>, coefficient: f64) -> Self {
        Self {
            covariate: covariate.into(),
            coefficient,
        }
    }
}

/// Exponential covariance `c1·exp(-h/a)` plus `c0` on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfParams {
    pub nugget: f64,
    pub partial_sill: f64,
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScenario {
    pub seed: u64,
    /// Side of the square domain, meters; the domain starts at the origin.
    pub extent_m: f64,
    pub n_sites: usize,
    pub n_cities: usize,
    /// Spread of a unit-size city, meters. Also the site cluster spread.
    pub cluster_sd_m: f64,
    /// Share of sites drawn around city centers; the rest are uniform.
    pub clustered_fraction: f64,
    /// Province blocks as `[columns, rows]`.
    pub provinces: [usize; 2],
    /// Cell size of the covariate grids and the prediction lattice.
    pub grid_cell_m: f64,
    /// Land-cover cell size; at most the smallest moving window (300 m)
    /// so every window of the default ladder holds a cell center.
    pub landcover_cell_m: f64,
    pub intercept: f64,
    pub trend: Vec<TrendTerm>,
    pub grf: GrfParams,
    /// Standard deviation of a smooth large-scale component added to the
    /// truth and mirrored by the satellite grids; 0 disables it.
    pub regional_sd: f64,
    pub regional_length_m: f64,
    pub satellite_noise_sd: f64,
    /// Side of the blocks over which satellite noise is constant.
    pub satellite_block_m: f64,
    pub noise_sd: f64,
    pub year: i32,
    /// Coefficient of variation of daily values around the annual mean.
    pub daily_cv: f64,
    /// Complete sites miss up to this share of days.
    pub max_missing_share: f64,
    /// Share of sites with too few valid days to annualize.
    pub incomplete_share: f64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            seed: 0,
            extent_m: 300_000.0,
            n_sites: 300,
            n_cities: 12,
            cluster_sd_m: 8_000.0,
            clustered_fraction: 0.7,
            provinces: [3, 3],
            grid_cell_m: 2_000.0,
            landcover_cell_m: 300.0,
            intercept: 40.0,
            trend: default_trend(),
            grf: GrfParams {
                nugget: 1.0,
                partial_sill: 16.0,
                range: 30_000.0,
            },
            regional_sd: 0.0,
            regional_length_m: 150_000.0,
            satellite_noise_sd: 1.0,
            satellite_block_m: 10_000.0,
            noise_sd: 2.0,
            year: 2015,
            daily_cv: 0.5,
            max_missing_share: 0.1,
            incomplete_share: 0.0,
        }
    }
}

fn default_trend() -> Vec<TrendTerm> {
    vec![
        TrendTerm::new("roads_major_len_1000", 0.003),
        TrendTerm::new("landcover_7_3000", 15.0),
        TrendTerm::new("pois_restaurant_n_2000", 0.05),
        TrendTerm::new("ndvi", -8.0),
        TrendTerm::new("elevation", -0.008),
        TrendTerm::new("fires_n_50000", 0.2),
    ]
}

impl SyntheticScenario {
    /// Country-scale preset: 1,000 km domain, 1,500 sites, 3 km lattice.
    pub fn national(seed: u64) -> Self {
        Self {
            seed,
            extent_m: 1_000_000.0,
            n_sites: 1_500,
            n_cities: 60,
            cluster_sd_m: 15_000.0,
            clustered_fraction: 0.8,
            provinces: [6, 5],
            grid_cell_m: 3_000.0,
            intercept: 45.0,
            grf: GrfParams {
                nugget: 2.0,
                partial_sill: 25.0,
                range: 60_000.0,
            },
            regional_sd: 6.0,
            regional_length_m: 250_000.0,
            satellite_noise_sd: 1.5,
            satellite_block_m: 15_000.0,
            noise_sd: 3.0,
            incomplete_share: 0.02,
            ..Self::default()
        }
    }

    /// Small preset for smoke tests.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            extent_m: 100_000.0,
            n_sites: 60,
            n_cities: 4,
            cluster_sd_m: 5_000.0,
            provinces: [2, 2],
            grid_cell_m: 2_000.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Scenario(m.to_string()));
        if !(self.extent_m > 0.0 && self.extent_m.is_finite()) {
            return bad("extent must be positive");
        }
        if self.n_sites == 0 {
            return bad("at least one site is required");
        }
        if self.n_cities < 2 {
            return bad("at least two cities are required");
        }
        if !(self.cluster_sd_m > 0.0) {
            return bad("cluster spread must be positive");
        }
        if !(0.0..=1.0).contains(&self.clustered_fraction) {
            return bad("clustered fraction must lie in [0, 1]");
        }
        if self.provinces[0] == 0 || self.provinces[1] == 0 {
            return bad("province grid needs at least one block per axis");
        }
        if !(self.grid_cell_m > 0.0) || !(self.landcover_cell_m > 0.0) || !(self.satellite_block_m > 0.0) {
            return bad("cell sizes must be positive");
        }
        if 4.0 * self.grid_cell_m >= self.extent_m {
            return bad("grid cell is too coarse for the domain");
        }
        let g = &self.grf;
        if g.nugget < 0.0 || g.partial_sill < 0.0 || !(g.range > 0.0) {
            return bad("GRF needs nugget ≥ 0, partial sill ≥ 0 and range > 0");
        }
        for (v, what) in [
            (self.regional_sd, "regional sd"),
            (self.satellite_noise_sd, "satellite noise sd"),
            (self.noise_sd, "noise sd"),
            (self.daily_cv, "daily cv"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Scenario(format!("{what} must be finite and ≥ 0")));
            }
        }
        if self.regional_sd > 0.0 && !(self.regional_length_m > 0.0) {
            return bad("regional length must be positive");
        }
        if !(0.0..=0.2).contains(&self.max_missing_share) {
            return bad("max missing share must lie in [0, 0.2]");
        }
        if !(0.0..=1.0).contains(&self.incomplete_share) {
            return bad("incomplete share must lie in [0, 1]");
        }
        if NaiveDate::from_ymd_opt(self.year, 1, 1).is_none() {
            return bad("year out of range");
        }
        Ok(())
    }

    /// Lattice shared by the covariate grids and predictions.
    pub fn lattice(&self) -> Result<Lattice> {
        let n = (self.extent_m / self.grid_cell_m).ceil() as usize;
        Lattice::new(0.0, 0.0, self.grid_cell_m, n, n)
    }
}

/// Per-site decomposition of the generated annual value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTruth {
    pub site_id: String,
    pub trend: f64,
    pub regional: f64,
    pub grf: f64,
    pub noise: f64,
    /// Annual mean the daily series average to.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub intercept: f64,
    pub trend: Vec<TrendTerm>,
    pub grf: GrfParams,
    pub regional_sd: f64,
    pub noise_sd: f64,
    /// Sites whose target was floored to keep daily values non-negative.
    pub n_floored: usize,
    pub sites: Vec<SiteTruth>,
}

impl GroundTruth {
    pub fn site(&self, site_id: &str) -> Option<&SiteTruth> {
        self.sites.iter().find(|s| s.site_id == site_id)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub scenario: SyntheticScenario,
    pub sites: Vec<SiteInfo>,
    pub daily: Vec<DailyRecord>,
    /// Annualized table; incomplete sites are absent.
    pub table: MonitorTable,
    pub sources: CovariateSources,
    pub lattice: Lattice,
    pub truth: GroundTruth,
}

/// Source names of the generated layers and grids, for the default ladder.
pub fn synthetic_set_sources() -> DefaultSetSources {
    DefaultSetSources {
        line_layers: vec!["roads".into(), "roads:major".into(), "roads:secondary".into(), "rail".into()],
        distance_layers: vec!["roads:major".into(), "roads:secondary".into(), "rail".into()],
        poi_layers: POI_CATEGORIES.iter().map(|c| format!("pois:{c}")).collect(),
        fire_layers: vec!["fires".into()],
        landcover: Some(("landcover".into(), LANDCOVER_CLASSES.to_vec())),
        grids: GRID_NAMES.iter().map(|g| g.to_string()).collect(),
        coordinates: true,
    }
}

impl SyntheticData {
    /// The full default covariate set over the generated sources.
    pub fn covariate_specs(&self) -> Vec<CovariateSpec> {
        default_covariate_set(&synthetic_set_sources())
    }

    /// Covariates for the annualized sites joined with their responses.
    pub fn dataset(&self, specs: &[CovariateSpec]) -> Result<Dataset> {
        let x = build_matrix(&self.table.site_points(), specs, &self.sources)?;
        Dataset::new(&self.table, &x)
    }

    pub fn specs_named(names: &[String]) -> Result<Vec<CovariateSpec>> {
        let all = default_covariate_set(&synthetic_set_sources());
        names
            .iter()
            .map(|n| {
                all.iter()
                    .find(|s| &s.name == n)
                    .cloned()
                    .ok_or_else(|| Error::Scenario(format!("unknown covariate `{n}`")))
            })
            .collect()
    }
}

impl SyntheticData {
    /// Writes every input file under `dir` plus a `config.json` (paths
    /// relative to `dir`, output in `dir/out`) for a stepwise+UK run with
    /// satellite columns, prediction on the population lattice and exposure.
    /// Returns the config with absolute paths.
    pub fn write_inputs(&self, dir: impl AsRef<Path>) -> Result<PipelineConfig> {
        let dir = dir.as_ref();
        for sub in ["layers", "grids"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        write_sites_csv(&self.sites, dir.join("sites.csv"))?;
        write_daily_csv(&self.daily, dir.join("daily.csv"))?;
        let mut layers = BTreeMap::new();
        for (name, layer) in &self.sources.layers {
            let rel = PathBuf::from(format!("layers/{name}.csv"));
            write_features(layer, dir.join(&rel))?;
            layers.insert(name.clone(), rel);
        }
        let mut grids = BTreeMap::new();
        for (name, grid) in &self.sources.grids {
            let rel = PathBuf::from(format!("grids/{name}.asc"));
            write_raster(grid, dir.join(&rel))?;
            grids.insert(name.clone(), rel);
        }
        let mut landcover = BTreeMap::new();
        for (name, grid) in &self.sources.landcover {
            let rel = PathBuf::from(format!("{name}.asc"));
            write_raster(&grid.to_raster(), dir.join(&rel))?;
            landcover.insert(
                name.clone(),
                LandcoverInput {
                    path: rel,
                    categories: Some(grid.categories.iter().copied().collect()),
                },
            );
        }
        let mut cfg = PipelineConfig {
            pollutant: "PM2.5".into(),
            year: self.scenario.year,
            seed: self.scenario.seed,
            output_dir: "out".into(),
            inputs: InputPaths {
                sites: "sites.csv".into(),
                daily: "daily.csv".into(),
                layers,
                grids,
                landcover,
            },
            covariates: CovariateSetRef::Default(synthetic_set_sources()),
            model: ModelConfig {
                satellite: true,
                satellite_columns: SATELLITE_GRIDS.iter().map(|g| g.to_string()).collect(),
                ..ModelConfig::default()
            },
            stepwise: Default::default(),
            pls: Default::default(),
            variogram: Default::default(),
            cv: CvConfig::default(),
            prediction: Some(PredictionConfig {
                lattice_grid: "population".into(),
                variance: false,
            }),
            exposure: Some(ExposureConfig {
                population_grid: "population".into(),
                thresholds: None,
                min_population: None,
                max_population: None,
                windows: vec![5],
            }),
        };
        cfg.save(dir.join("config.json"))?;
        let path = dir.join("truth.json");
        fs::write(&path, serde_json::to_string_pretty(&self.truth)?).map_err(|e| Error::io(&path, e))?;
        cfg.resolve_paths(dir);
        Ok(cfg)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Smooth stationary field from random Fourier features of a Gaussian kernel.
struct SmoothField {
    waves: Vec<[f64; 3]>,
    amplitude: f64,
}

impl SmoothField {
    fn new(rng: &mut impl Rng, length: f64, sd: f64, n_waves: usize) -> Self {
        let waves = (0..n_waves)
            .map(|_| {
                [
                    normal(rng) / length,
                    normal(rng) / length,
                    rng.random::<f64>() * std::f64::consts::TAU,
                ]
            })
            .collect();
        Self {
            waves,
            amplitude: sd * (2.0 / n_waves as f64).sqrt(),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.amplitude * self.waves.iter().map(|w| (w[0] * x + w[1] * y + w[2]).cos()).sum::<f64>()
    }

    /// Per-column and per-row tables so a lattice costs two products per
    /// wave and cell instead of a cosine.
    fn on_lattice(&self, lat: &Lattice) -> LatticeField {
        let nw = self.waves.len();
        let mut col = Vec::with_capacity(lat.n_cols * nw * 2);
        for c in 0..lat.n_cols {
            let (x, _) = lat.cell_center(c, 0);
            for w in &self.waves {
                let a = w[0] * x + w[2];
                col.extend([a.cos(), a.sin()]);
            }
        }
        let mut row = Vec::with_capacity(lat.n_rows * nw * 2);
        for r in 0..lat.n_rows {
            let (_, y) = lat.cell_center(0, r);
            for w in &self.waves {
                let b = w[1] * y;
                row.extend([b.cos(), b.sin()]);
            }
        }
        LatticeField {
            col,
            row,
            n_waves: nw,
            amplitude: self.amplitude,
        }
    }
}

struct LatticeField {
    col: Vec<f64>,
    row: Vec<f64>,
    n_waves: usize,
    amplitude: f64,
}

impl LatticeField {
    fn at(&self, c: usize, r: usize) -> f64 {
        let k = 2 * self.n_waves;
        let a = &self.col[c * k..(c + 1) * k];
        let b = &self.row[r * k..(r + 1) * k];
        let mut s = 0.0;
        for w in 0..self.n_waves {
            s += a[2 * w] * b[2 * w] - a[2 * w + 1] * b[2 * w + 1];
        }
        self.amplitude * s
    }
}

struct City {
    x: f64,
    y: f64,
    size: f64,
    radius: f64,
}

/// Sum of Gaussian bumps, one per city, peaking at the city size.
fn urban_intensity(cities: &[City], x: f64, y: f64) -> f64 {
    let mut u = 0.0;
    for c in cities {
        let d2 = (x - c.x).powi(2) + (y - c.y).powi(2);
        let r2 = c.radius * c.radius;
        if d2 < 16.0 * r2 {
            u += c.size * (-0.5 * d2 / r2).exp();
        }
    }
    u
}

struct Fields {
    elevation: SmoothField,
    vegetation: SmoothField,
    water: SmoothField,
    bare: SmoothField,
    climate: SmoothField,
    regional: Option<SmoothField>,
}

impl Fields {
    fn regional(&self, x: f64, y: f64) -> f64 {
        self.regional.as_ref().map_or(0.0, |f| f.at(x, y))
    }
}

// softplus keeps terrain positive with a long upper tail
fn terrain(field: f64, x: f64, extent: f64) -> f64 {
    150.0 + 600.0 * (1.0 + (1.5 * field).exp()).ln() + 300.0 * x / extent
}

fn clamp_point(x: f64, y: f64, lo: f64, hi: f64) -> Point {
    Point::new(x.clamp(lo, hi), y.clamp(lo, hi))
}

/// Polyline from `a` to `b` bowed sideways by a random amount.
fn wiggly_line(rng: &mut impl Rng, a: (f64, f64), b: (f64, f64), step: f64, extent: f64) -> Vec<Point> {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let k = ((len / step).ceil() as usize).clamp(1, 200);
    let (nx, ny) = if len > 0.0 {
        (-(b.1 - a.1) / len, (b.0 - a.0) / len)
    } else {
        (0.0, 0.0)
    };
    let bow = 0.08 * len * normal(rng);
    let mut v = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let t = i as f64 / k as f64;
        let off = if i == 0 || i == k {
            0.0
        } else {
            bow * (std::f64::consts::PI * t).sin() + 0.01 * len * normal(rng)
        };
        v.push(clamp_point(
            a.0 + t * (b.0 - a.0) + off * nx,
            a.1 + t * (b.1 - a.1) + off * ny,
            0.0,
            extent,
        ));
    }
    v
}

/// Random walk of `n` legs from `start` with a drifting heading.
fn meander(rng: &mut impl Rng, start: (f64, f64), heading: f64, length: f64, n: usize, extent: f64) -> Vec<Point> {
    let leg = length / n as f64;
    let mut h = heading;
    let (mut x, mut y) = start;
    let mut v = vec![clamp_point(x, y, 0.0, extent)];
    for _ in 0..n {
        h += 0.3 * normal(rng);
        x += leg * h.cos();
        y += leg * h.sin();
        v.push(clamp_point(x, y, 0.0, extent));
    }
    v.dedup();
    if v.len() < 2 {
        v.push(clamp_point(start.0 + 1.0, start.1, 0.0, extent));
    }
    v
}

/// Generates a full study region. Identical scenarios give identical data.
pub fn generate_synthetic(scenario: &SyntheticScenario) -> Result<SyntheticData> {
    scenario.validate()?;
    let s = scenario;
    let ext = s.extent_m;

    let mut rng = stream(s.seed, 1);
    let raw: Vec<f64> = (0..s.n_cities).map(|_| (0.6 * normal(&mut rng)).exp()).collect();
    let mean_size = raw.iter().sum::<f64>() / raw.len() as f64;
    let cities: Vec<City> = raw
        .iter()
        .map(|&r| {
            let size = r / mean_size;
            City {
                x: ext * (0.1 + 0.8 * rng.random::<f64>()),
                y: ext * (0.1 + 0.8 * rng.random::<f64>()),
                size,
                radius: s.cluster_sd_m * size.sqrt(),
            }
        })
        .collect();

    let mut rng = stream(s.seed, 2);
    let fields = Fields {
        elevation: SmoothField::new(&mut rng, ext / 5.0, 1.0, 48),
        vegetation: SmoothField::new(&mut rng, ext / 8.0, 1.0, 48),
        water: SmoothField::new(&mut rng, ext / 12.0, 1.0, 48),
        bare: SmoothField::new(&mut rng, ext / 6.0, 1.0, 48),
        climate: SmoothField::new(&mut rng, ext / 3.0, 1.0, 32),
        regional: (s.regional_sd > 0.0).then(|| SmoothField::new(&mut rng, s.regional_length_m, s.regional_sd, 128)),
    };

    let landcover = landcover_grid(s, &cities, &fields)?;
    let lattice = s.lattice()?;
    let grids = covariate_grids(s, &lattice, &cities, &fields);
    let layers = feature_layers(s, &cities)?;
    let mut sources = CovariateSources::default().with_landcover("landcover", landcover);
    for (name, g) in grids {
        sources = sources.with_grid(name, g);
    }
    for (name, l) in layers {
        sources = sources.with_layer(name, l);
    }

    let sites = place_sites(s, &cities);
    let points: Vec<(f64, f64)> = sites.iter().map(|p| (p.x, p.y)).collect();

    let names: Vec<String> = s.trend.iter().map(|t| t.covariate.clone()).collect();
    let specs = SyntheticData::specs_named(&names)?;
    let values = evaluate_specs(&points, &specs, &sources)?;
    let mut trend = vec![0.0; sites.len()];
    for (term, col) in s.trend.iter().zip(&values) {
        for (i, v) in col.iter().enumerate() {
            let v = v.ok_or_else(|| {
                Error::Scenario(format!("trend covariate `{}` has no data at {}", term.covariate, sites[i].site_id))
            })?;
            trend[i] += term.coefficient * v;
        }
    }

    let grf = simulate_grf(&points, &s.grf, &mut stream(s.seed, 7))?;
    let mut rng = stream(s.seed, 8);
    let mut n_floored = 0;
    let truth_sites: Vec<SiteTruth> = sites
        .iter()
        .enumerate()
        .map(|(i, site)| {
            let regional = fields.regional(site.x, site.y);
            let noise = s.noise_sd * normal(&mut rng);
            let mut value = s.intercept + trend[i] + regional + grf[i] + noise;
            if value < MIN_ANNUAL {
                value = MIN_ANNUAL;
                n_floored += 1;
            }
            SiteTruth {
                site_id: site.site_id.clone(),
                trend: trend[i],
                regional,
                grf: grf[i],
                noise,
                value,
            }
        })
        .collect();

    let daily = daily_series(s, &truth_sites);
    let table = annualize(&daily, s.year, &sites)?.table;

    Ok(SyntheticData {
        scenario: s.clone(),
        sites,
        daily,
        table,
        sources,
        lattice,
        truth: GroundTruth {
            intercept: s.intercept,
            trend: s.trend.clone(),
            grf: s.grf,
            regional_sd: s.regional_sd,
            noise_sd: s.noise_sd,
            n_floored,
            sites: truth_sites,
        },
    })
}

/// Draws a zero-mean Gaussian vector with exponential covariance at
/// `points` through a dense Cholesky factor.
pub fn simulate_grf(points: &[(f64, f64)], p: &GrfParams, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let n = points.len();
    let sill = p.nugget + p.partial_sill;
    let z: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    if sill == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let cov = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            sill
        } else {
            let (a, b) = (points[i], points[j]);
            let h = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            p.partial_sill * (-h / p.range).exp()
        }
    });
    let factor = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let jitter = DMatrix::from_diagonal_element(n, n, 1e-8 * sill);
            (cov + jitter)
                .cholesky()
                .ok_or_else(|| Error::Scenario("GRF covariance is not positive definite after jitter".into()))?
        }
    };
    let l = factor.l();
    Ok((0..n)
        .map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum())
        .collect())
}

fn landcover_grid(s: &SyntheticScenario, cities: &[City], f: &Fields) -> Result<CategoricalGrid> {
    let n = (s.extent_m / s.landcover_cell_m).ceil() as usize;
    let lattice = Lattice::new(0.0, 0.0, s.landcover_cell_m, n, n)?;
    let water = f.water.on_lattice(&lattice);
    let bare = f.bare.on_lattice(&lattice);
    let veg = f.vegetation.on_lattice(&lattice);
    let elev = f.elevation.on_lattice(&lattice);
    let codes: Vec<i32> = (0..lattice.n_rows)
        .into_par_iter()
        .flat_map_iter(|r| {
            let (water, bare, veg, elev) = (&water, &bare, &veg, &elev);
            (0..lattice.n_cols).map(move |c| {
                let (x, y) = lattice.cell_center(c, r);
                if urban_intensity(cities, x, y) > 0.35 {
                    return URBAN_CLASS;
                }
                let w = water.at(c, r);
                if w > 1.7 {
                    return 6;
                }
                if w > 1.4 {
                    return 5;
                }
                if bare.at(c, r) > 1.6 {
                    return 8;
                }
                let v = veg.at(c, r);
                let e = elev.at(c, r);
                if v > 0.7 || (e > 1.0 && v > 0.2) {
                    2
                } else if e > 0.8 {
                    3
                } else if v < -1.2 {
                    4
                } else {
                    1
                }
            })
        })
        .collect();
    CategoricalGrid::new(lattice, codes, LANDCOVER_CLASSES, LANDCOVER_NODATA)
}

fn covariate_grids(s: &SyntheticScenario, lattice: &Lattice, cities: &[City], f: &Fields) -> BTreeMap<String, RasterGrid> {
    let ext = s.extent_m;
    let cell_km2 = (s.grid_cell_m / 1000.0).powi(2);
    let mut rng = stream(s.seed, 10);
    let nb = (ext / s.satellite_block_m).ceil() as usize;
    let block_noise: Vec<f64> = (0..nb * nb).map(|_| s.satellite_noise_sd * normal(&mut rng)).collect();
    let pop_noise: Vec<f64> = (0..lattice.len()).map(|_| 0.3 * normal(&mut rng)).collect();
    let block = |x: f64, y: f64| {
        let c = ((x / s.satellite_block_m) as usize).min(nb - 1);
        let r = ((y / s.satellite_block_m) as usize).min(nb - 1);
        block_noise[r * nb + c]
    };

    let elev_f = f.elevation.on_lattice(lattice);
    let clim_f = f.climate.on_lattice(lattice);
    let veg_f = f.vegetation.on_lattice(lattice);
    let bare_f = f.bare.on_lattice(lattice);
    let reg_f = f.regional.as_ref().map(|r| r.on_lattice(lattice));
    let cells: Vec<[f64; 13]> = (0..lattice.len())
        .into_par_iter()
        .map(|i| {
            let (c, r) = (i % lattice.n_cols, i / lattice.n_cols);
            let (x, y) = lattice.cell_center(c, r);
            let u = urban_intensity(cities, x, y);
            let uc = u.min(1.5);
            let elev = terrain(elev_f.at(c, r), x, ext);
            let clim = clim_f.at(c, r);
            let veg = veg_f.at(c, r);
            let lat = y / ext;
            let regional = reg_f.as_ref().map_or(0.0, |g| g.at(c, r));
            let ndvi = (0.65 - 0.35 * uc + 0.12 * veg).clamp(-0.1, 0.95);
            let sat = 0.8 * s.intercept + regional + block(x, y);
            [
                elev,
                cell_km2 * (40.0 + 4000.0 * u) * pop_noise[i].exp(),
                ndvi,
                0.6 * ndvi + 0.03 * clim,
                22.0 - 12.0 * lat - 0.0065 * elev + 1.5 * clim,
                65.0 + 10.0 * clim - 8.0 * lat,
                3.0 + elev / 1000.0 + 0.8 * bare_f.at(c, r),
                1013.0 - elev / 8.3,
                900.0 + 250.0 * clim - 400.0 * lat,
                900.0 + 150.0 * clim + 0.2 * elev,
                0.45 + 0.02 * regional + 0.01 * block(x, y),
                sat,
                12.0 + 10.0 * uc + 0.3 * regional + 0.5 * block(x, y),
            ]
        })
        .collect();
    GRID_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let values = cells.iter().map(|c| c[k]).collect();
            let g = RasterGrid::new(*lattice, values, crate::geodata::DEFAULT_NODATA).expect("lattice-sized");
            (name.to_string(), g)
        })
        .collect()
}

fn feature_layers(s: &SyntheticScenario, cities: &[City]) -> Result<BTreeMap<String, FeatureLayer>> {
    let ext = s.extent_m;
    let mut rng = stream(s.seed, 3);
    let dist = |a: &City, b: &City| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();

    // major roads join each city to its two nearest neighbors
    let mut pairs = Vec::new();
    for (i, a) in cities.iter().enumerate() {
        let mut others: Vec<(f64, usize)> = cities
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, b)| (dist(a, b), j))
            .collect();
        others.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        for &(_, j) in others.iter().take(2) {
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut roads = Vec::new();
    let mut id = 0usize;
    let mut next_id = |prefix: &str| {
        id += 1;
        format!("{prefix}{id:06}")
    };
    for &(i, j) in &pairs {
        let (a, b) = (&cities[i], &cities[j]);
        let v = wiggly_line(&mut rng, (a.x, a.y), (b.x, b.y), 5_000.0, ext);
        roads.push(Feature::line(next_id("r"), v).with_category("major"));
    }
    for c in cities {
        let n = (6.0 + 10.0 * c.size).round() as usize;
        for _ in 0..n {
            let heading = rng.random::<f64>() * std::f64::consts::TAU;
            let len = c.radius * (0.5 + 2.5 * rng.random::<f64>());
            let start = (c.x + 0.3 * c.radius * normal(&mut rng), c.y + 0.3 * c.radius * normal(&mut rng));
            let v = meander(&mut rng, start, heading, len, 4, ext);
            roads.push(Feature::line(next_id("r"), v).with_category("secondary"));
        }
    }
    let n_rural = ((ext / 10_000.0).round() as usize).max(3);
    for _ in 0..n_rural {
        let start = (ext * rng.random::<f64>(), ext * rng.random::<f64>());
        let heading = rng.random::<f64>() * std::f64::consts::TAU;
        let len = (5_000.0 + 25_000.0 * rng.random::<f64>()).min(ext / 3.0);
        let v = meander(&mut rng, start, heading, len, 5, ext);
        roads.push(Feature::line(next_id("r"), v).with_category("secondary"));
    }

    // rail: minimum spanning tree over the largest cities
    let mut big: Vec<usize> = (0..cities.len()).collect();
    big.sort_by(|&a, &b| cities[b].size.total_cmp(&cities[a].size).then(a.cmp(&b)));
    big.truncate(8);
    let mut in_tree = vec![big[0]];
    let mut rail = Vec::new();
    while in_tree.len() < big.len() {
        let mut best = (f64::INFINITY, 0, 0);
        for &a in &in_tree {
            for &b in big.iter().filter(|b| !in_tree.contains(b)) {
                let d = dist(&cities[a], &cities[b]);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (a, b) = (&cities[best.1], &cities[best.2]);
        let v = wiggly_line(&mut rng, (a.x, a.y), (b.x, b.y), 10_000.0, ext);
        rail.push(Feature::line(next_id("l"), v));
        in_tree.push(best.2);
    }

    let mut rng = stream(s.seed, 4);
    let weights: Vec<f64> = cities.iter().map(|c| c.size).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::Scenario(e.to_string()))?;
    let mut pois = Vec::new();
    let base = [("gas_station", 25.0, 1.5), ("bus_stop", 100.0, 0.8), ("restaurant", 150.0, 0.7), ("factory", 20.0, 2.5), ("market", 40.0, 0.9)];
    for (cat, per_city, spread) in base {
        let n = (per_city * cities.len() as f64).round() as usize;
        for _ in 0..n {
            let c = &cities[pick.sample(&mut rng)];
            let p = clamp_point(
                c.x + spread * c.radius * normal(&mut rng),
                c.y + spread * c.radius * normal(&mut rng),
                0.0,
                ext,
            );
            pois.push(Feature::point(next_id("p"), p.x, p.y).with_category(cat));
        }
        for _ in 0..(n / 10).max(1) {
            let (x, y) = (ext * rng.random::<f64>(), ext * rng.random::<f64>());
            pois.push(Feature::point(next_id("p"), x, y).with_category(cat));
        }
    }

    let mut rng = stream(s.seed, 5);
    let area_km2 = (ext / 1000.0).powi(2);
    let n_fires = ((0.002 * area_km2).round() as usize).max(10);
    let mut fires = Vec::with_capacity(n_fires);
    for _ in 0..n_fires {
        let mut p = (ext * rng.random::<f64>(), ext * rng.random::<f64>());
        for _ in 0..20 {
            if urban_intensity(cities, p.0, p.1) < 0.1 {
                break;
            }
            p = (ext * rng.random::<f64>(), ext * rng.random::<f64>());
        }
        fires.push(Feature::point(next_id("f"), p.0, p.1));
    }

    let mut out = BTreeMap::new();
    out.insert("roads".to_string(), FeatureLayer::new(FeatureKind::Polylines, roads)?);
    out.insert("rail".to_string(), FeatureLayer::new(FeatureKind::Polylines, rail)?);
    out.insert("pois".to_string(), FeatureLayer::new(FeatureKind::Points, pois)?);
    out.insert("fires".to_string(), FeatureLayer::new(FeatureKind::Points, fires)?);
    Ok(out)
}

fn place_sites(s: &SyntheticScenario, cities: &[City]) -> Vec<SiteInfo> {
    let mut rng = stream(s.seed, 6);
    let ext = s.extent_m;
    // keep a full grid cell from the edge so bilinear sampling is defined
    let margin = s.grid_cell_m;
    let inside = |x: f64, y: f64| x >= margin && x <= ext - margin && y >= margin && y <= ext - margin;
    let weights: Vec<f64> = cities.iter().map(|c| c.size).collect();
    let pick = WeightedIndex::new(&weights).expect("positive city sizes");
    let width = s.n_sites.to_string().len().max(4);
    let [pc, pr] = s.provinces;
    (0..s.n_sites)
        .map(|i| {
            let uniform = |rng: &mut ChaCha8Rng| {
                (
                    margin + (ext - 2.0 * margin) * rng.random::<f64>(),
                    margin + (ext - 2.0 * margin) * rng.random::<f64>(),
                )
            };
            let (x, y) = if rng.random::<f64>() < s.clustered_fraction {
                let c = &cities[pick.sample(&mut rng)];
                let mut p = None;
                for _ in 0..100 {
                    let q = (c.x + c.radius * normal(&mut rng), c.y + c.radius * normal(&mut rng));
                    if inside(q.0, q.1) {
                        p = Some(q);
                        break;
                    }
                }
                p.unwrap_or_else(|| uniform(&mut rng))
            } else {
                uniform(&mut rng)
            };
            let col = ((x / ext * pc as f64) as usize).min(pc - 1);
            let row = ((y / ext * pr as f64) as usize).min(pr - 1);
            let nearest = cities
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = (a.1.x - x).powi(2) + (a.1.y - y).powi(2);
                    let db = (b.1.x - x).powi(2) + (b.1.y - y).powi(2);
                    da.total_cmp(&db)
                })
                .map(|(k, _)| k)
                .unwrap_or(0);
            SiteInfo {
                site_id: format!("s{:0width$}", i + 1),
                x,
                y,
                province: format!("p{:02}", row * pc + col + 1),
                city: format!("c{:02}", nearest + 1),
            }
        })
        .collect()
}

/// Daily values whose valid days average exactly to each site's target,
/// with autocorrelated multiplicative day-to-day variation.
fn daily_series(s: &SyntheticScenario, truth: &[SiteTruth]) -> Vec<DailyRecord> {
    let mut rng = stream(s.seed, 9);
    let n_days = days_in_year(s.year) as usize;
    let start = NaiveDate::from_ymd_opt(s.year, 1, 1).expect("validated year");
    let dates: Vec<NaiveDate> = start.iter_days().take(n_days).collect();
    debug_assert!(dates.iter().all(|d| d.year() == s.year));
    let mut out = Vec::with_capacity(truth.len() * n_days);
    let phi: f64 = 0.7;
    let mut order: Vec<usize> = (0..n_days).collect();
    for site in truth {
        let share = if rng.random::<f64>() < s.incomplete_share {
            0.35 + 0.25 * rng.random::<f64>()
        } else {
            s.max_missing_share * rng.random::<f64>()
        };
        let n_missing = ((share * n_days as f64).round() as usize).min(n_days - 1);
        order.shuffle(&mut rng);
        let mut missing = vec![false; n_days];
        for &d in &order[..n_missing] {
            missing[d] = true;
        }
        let mut e = normal(&mut rng);
        let mut mult = Vec::with_capacity(n_days);
        for _ in 0..n_days {
            mult.push((s.daily_cv * e).exp());
            e = phi * e + (1.0 - phi * phi).sqrt() * normal(&mut rng);
        }
        let valid_mean = mult.iter().zip(&missing).filter(|(_, m)| !**m).map(|(v, _)| v).sum::<f64>()
            / (n_days - n_missing) as f64;
        for (d, date) in dates.iter().enumerate() {
            out.push(DailyRecord {
                site_id: site.site_id.clone(),
                date: *date,
                value: (!missing[d]).then(|| site.value * mult[d] / valid_mean),
            });
        }
    }
    out
}
