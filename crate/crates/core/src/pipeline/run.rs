use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{CovariateSetRef, PipelineConfig, SelectionMethod};
use crate::covariates::{build_grids, build_matrix, default_covariate_set, read_specs, validate_specs, CovariateMatrix, CovariateSources, CovariateSpec};
use crate::error::{Error, Result};
use crate::evaluation::{fit_recipe, run_cv, CvPlan, CvSummary, Dataset, FittedModel};
use crate::exposure::{cumulative_exposure_filtered, predict_grid, window_variance, ExposureCurve};
use crate::geodata::{read_categorical, read_features, read_raster, write_raster};
use crate::kriging::VariogramModel;
use crate::lur::{morans_i, MoranResult};
use crate::monitors::{annualize, read_daily_csv, read_sites_csv, MonitorTable};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const LOG_FILE: &str = "run.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Annualize,
    Covariates,
    Fit,
    Cv,
    Predict,
    Exposure,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Annualize,
        Stage::Covariates,
        Stage::Fit,
        Stage::Cv,
        Stage::Predict,
        Stage::Exposure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Annualize => "annualize",
            Stage::Covariates => "covariates",
            Stage::Fit => "fit",
            Stage::Cv => "cv",
            Stage::Predict => "predict",
            Stage::Exposure => "exposure",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Seed for a labeled stream: the first 8 bytes (little endian) of
/// `sha256(master.to_le_bytes() ‖ label)`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// One executed (or reused) stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Hash of the stage name, its config section and its input hashes.
    pub key: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
    pub cached: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        match serde_json::from_str(&text) {
            Ok(m) => Ok(m),
            Err(e) => {
                warn!("ignoring unreadable manifest: {e}");
                Ok(Self::default())
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn get(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    fn put(&mut self, rec: StageRecord) {
        self.stages.retain(|r| r.stage != rec.stage);
        self.stages.push(rec);
        self.stages.sort_by_key(|r| r.stage);
    }

    fn remove(&mut self, stage: Stage) {
        self.stages.retain(|r| r.stage != stage);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeInfo {
    pub family: String,
    pub selection: SelectionMethod,
    pub kriging: bool,
    pub satellite: bool,
}

/// Summary written to `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_sites: usize,
    pub n_candidates: usize,
    /// Selected covariates (PLS: every input column).
    pub selected: Vec<String>,
    pub intercept: Option<f64>,
    pub coefficients: Vec<f64>,
    pub n_components: Option<usize>,
    pub trend_r2: f64,
    /// Moran's I of the trend residuals.
    pub morans_i: Option<MoranResult>,
    pub variogram: Option<VariogramModel>,
}

/// Summary written to `prediction.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub model_id: String,
    pub n_cells: usize,
    pub n_nodata: usize,
    pub n_floored: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Summary written to `exposure.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureSummary {
    pub curve: ExposureCurve,
    pub windows: Vec<WindowSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window_cells: usize,
    pub file: String,
    pub mean_variance: f64,
}

/// Outcome of [`run`]. Built only from artifacts, so cached and fresh runs
/// produce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub pollutant: String,
    pub year: i32,
    pub recipe: RecipeInfo,
    /// Hash of the annual table and covariate matrix; reports are comparable
    /// only when it matches.
    pub dataset_hash: Option<String>,
    pub n_sites: Option<usize>,
    pub n_excluded: Option<usize>,
    pub n_covariates: Option<usize>,
    pub fit: Option<FitSummary>,
    pub cv: Vec<CvSummary>,
    pub prediction: Option<PredictionSummary>,
    pub exposure: Option<ExposureCurve>,
    /// Artifact file name to content hash.
    pub artifacts: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
}

impl RunReport {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn cv_summary(&self, scheme: &str) -> Option<&CvSummary> {
        self.cv.iter().find(|c| c.scheme == scheme)
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Annual table joined with the covariate matrix from a run directory.
pub fn load_dataset(output_dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = output_dir.as_ref();
    let table = MonitorTable::read_csv(dir.join("annual.csv"))?;
    let x = CovariateMatrix::read_csv(dir.join("covariates.csv"))?;
    Dataset::new(&table, &x)
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    dir: PathBuf,
    manifest: Manifest,
    log: File,
    sources: Option<CovariateSources>,
    source_hashes: Option<BTreeMap<String, String>>,
    produced: BTreeMap<String, String>,
}

impl<'a> Runner<'a> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.cfg.seed, label)
    }

    fn log_line(&mut self, line: &str) {
        if let Err(e) = writeln!(self.log, "{line}") {
            warn!("could not write run log: {e}");
        }
    }

    fn input_hashes(&mut self) -> Result<BTreeMap<String, String>> {
        if let Some(h) = &self.source_hashes {
            return Ok(h.clone());
        }
        let inp = &self.cfg.inputs;
        let mut h = BTreeMap::new();
        for (n, p) in &inp.layers {
            h.insert(format!("layer:{n}"), hash_file(p)?);
        }
        for (n, p) in &inp.grids {
            h.insert(format!("grid:{n}"), hash_file(p)?);
        }
        for (n, lc) in &inp.landcover {
            h.insert(format!("landcover:{n}"), hash_file(&lc.path)?);
        }
        self.source_hashes = Some(h.clone());
        Ok(h)
    }

    fn sources(&mut self) -> Result<&CovariateSources> {
        if self.sources.is_none() {
            let inp = &self.cfg.inputs;
            let mut s = CovariateSources::default();
            for (n, p) in &inp.layers {
                s = s.with_layer(n.clone(), read_features(p)?);
            }
            for (n, p) in &inp.grids {
                s = s.with_grid(n.clone(), read_raster(p)?);
            }
            for (n, lc) in &inp.landcover {
                s = s.with_landcover(n.clone(), read_categorical(&lc.path, lc.categories.as_deref())?);
            }
            self.sources = Some(s);
        }
        Ok(self.sources.as_ref().expect("sources loaded above"))
    }

    fn upstream(&self, names: &[&str]) -> Result<BTreeMap<String, String>> {
        names
            .iter()
            .map(|n| {
                let h = self
                    .produced
                    .get(*n)
                    .ok_or_else(|| Error::invalid(format!("upstream artifact `{n}` is missing")))?;
                Ok((n.to_string(), h.clone()))
            })
            .collect()
    }

    fn reusable(&self, stage: Stage, key: &str) -> Option<BTreeMap<String, String>> {
        let rec = self.manifest.get(stage)?;
        if rec.key != key {
            return None;
        }
        for (name, hash) in &rec.outputs {
            match hash_file(self.path(name)) {
                Ok(h) if &h == hash => {}
                _ => return None,
            }
        }
        Some(rec.outputs.clone())
    }

    /// Runs `body` unless the manifest holds a record with the same key whose
    /// outputs still hash to the recorded values. `body` returns the names of
    /// the files it wrote.
    fn stage(
        &mut self,
        stage: Stage,
        section: serde_json::Value,
        inputs: BTreeMap<String, String>,
        body: impl FnOnce(&mut Self) -> Result<Vec<String>>,
    ) -> Result<()> {
        let key = hash_bytes(
            serde_json::to_string(&json!({"stage": stage, "config": section, "inputs": inputs}))?.as_bytes(),
        );
        let start = Instant::now();
        let (outputs, cached) = match self.reusable(stage, &key) {
            Some(out) => (out, true),
            None => {
                self.manifest.remove(stage);
                self.manifest.save(&self.dir)?;
                let names = body(self).map_err(|e| Error::Stage {
                    stage: stage.to_string(),
                    message: e.to_string(),
                })?;
                let mut out = BTreeMap::new();
                for n in names {
                    let h = hash_file(self.path(&n))?;
                    out.insert(n, h);
                }
                (out, false)
            }
        };
        let seconds = start.elapsed().as_secs_f64();
        info!("stage {stage}: {} in {seconds:.3} s", if cached { "reused" } else { "done" });
        self.log_line(&format!(
            "stage={stage} status=ok cached={cached} seconds={seconds:.3} outputs={}",
            outputs.len()
        ));
        self.produced.extend(outputs.clone());
        self.manifest.put(StageRecord {
            stage,
            key,
            inputs,
            outputs,
            seconds,
            cached,
        });
        self.manifest.save(&self.dir)
    }

    fn annualize(&mut self) -> Result<()> {
        let inputs = BTreeMap::from([
            ("sites".to_string(), hash_file(&self.cfg.inputs.sites)?),
            ("daily".to_string(), hash_file(&self.cfg.inputs.daily)?),
        ]);
        self.stage(Stage::Annualize, json!({"year": self.cfg.year}), inputs, |r| {
            let sites = read_sites_csv(&r.cfg.inputs.sites)?;
            let daily = read_daily_csv(&r.cfg.inputs.daily)?;
            let rep = annualize(&daily, r.cfg.year, &sites)?;
            rep.table.write_csv(r.path("annual.csv"))?;
            write_json(&r.path("excluded.json"), &rep.excluded)?;
            Ok(vec!["annual.csv".into(), "excluded.json".into()])
        })
    }

    fn specs(&self) -> Result<(Vec<CovariateSpec>, serde_json::Value)> {
        match &self.cfg.covariates {
            CovariateSetRef::File(p) => Ok((read_specs(p)?, json!({"file": hash_file(p)?}))),
            CovariateSetRef::Default(src) => Ok((default_covariate_set(src), json!({"default": src}))),
        }
    }

    fn covariates(&mut self) -> Result<()> {
        let (specs, section) = self.specs()?;
        let mut inputs = self.upstream(&["annual.csv"])?;
        inputs.extend(self.input_hashes()?);
        self.stage(Stage::Covariates, section, inputs, move |r| {
            validate_specs(&specs)?;
            let table = MonitorTable::read_csv(r.path("annual.csv"))?;
            let x = build_matrix(&table.site_points(), &specs, r.sources()?)?;
            x.write_csv(r.path("covariates.csv"))?;
            write_json(&r.path("covariate_specs.json"), &specs)?;
            Ok(vec!["covariates.csv".into(), "covariate_specs.json".into()])
        })
    }

    fn model_section(&self) -> serde_json::Value {
        let c = self.cfg;
        json!({
            "model": c.model,
            "stepwise": c.stepwise,
            "pls": c.pls,
            "variogram": c.variogram,
            "pls_seed": self.seed("fit:pls"),
        })
    }

    fn fit(&mut self) -> Result<()> {
        let inputs = self.upstream(&["annual.csv", "covariates.csv"])?;
        let section = self.model_section();
        self.stage(Stage::Fit, section, inputs, |r| {
            let ds = load_dataset(&r.dir)?;
            let recipe = r.cfg.recipe(r.seed("fit:pls"));
            let n_candidates = recipe.candidates(&ds.x)?.n_cols();
            let model = fit_recipe(&recipe, &ds)?;
            fs::write(r.path("model.json"), model.to_json()?).map_err(|e| Error::io(r.path("model.json"), e))?;
            write_json(&r.path("fit.json"), &fit_summary(&model, &ds, n_candidates)?)?;
            Ok(vec!["model.json".into(), "fit.json".into()])
        })
    }

    fn cv(&mut self) -> Result<()> {
        let inputs = self.upstream(&["annual.csv", "covariates.csv"])?;
        let mut section = self.model_section();
        section["cv"] = json!(self.cfg.cv);
        section["kfold_seed"] = json!(self.seed("cv:kfold"));
        self.stage(Stage::Cv, section, inputs, |r| {
            let ds = load_dataset(&r.dir)?;
            let recipe = r.cfg.recipe(r.seed("fit:pls"));
            let label = r.cfg.model.family();
            let mut plans = Vec::new();
            if let Some(k) = r.cfg.cv.kfold {
                plans.push(CvPlan::kfold(&ds.site_ids, k, r.seed("cv:kfold"))?);
            }
            for key in &r.cfg.cv.logo {
                plans.push(CvPlan::leave_one_group_out(&ds.site_ids, ds.groups(*key), *key)?);
            }
            let mut files = Vec::new();
            let mut summaries = Vec::new();
            for plan in &plans {
                let res = run_cv(&recipe, &ds, plan)?;
                let name = format!("cv_{}.csv", res.scheme);
                res.write_csv(r.path(&name))?;
                files.push(name);
                summaries.push(res.summary(&label));
            }
            write_json(&r.path("cv_summary.json"), &summaries)?;
            files.push("cv_summary.json".into());
            Ok(files)
        })
    }

    fn predict(&mut self) -> Result<()> {
        let Some(pc) = self.cfg.prediction.clone() else {
            return Ok(());
        };
        let mut inputs = self.upstream(&["model.json", "covariate_specs.json"])?;
        inputs.extend(self.input_hashes()?);
        let section = json!({"prediction": pc, "family": self.cfg.model.family()});
        self.stage(Stage::Predict, section, inputs, move |r| {
            let model = FittedModel::from_json(
                &fs::read_to_string(r.path("model.json")).map_err(|e| Error::io(r.path("model.json"), e))?,
            )?;
            let specs: Vec<CovariateSpec> = read_json(&r.path("covariate_specs.json"))?;
            let needed: Vec<CovariateSpec> = model
                .required_columns()
                .iter()
                .map(|n| {
                    specs
                        .iter()
                        .find(|s| &s.name == n)
                        .cloned()
                        .ok_or_else(|| Error::invalid(format!("no spec for model column `{n}`")))
                })
                .collect::<Result<_>>()?;
            let sources = r.sources()?;
            let lattice = sources.grids[&pc.lattice_grid].lattice;
            let grids = build_grids(&lattice, &needed, sources)?;
            let surface = predict_grid(&model, &lattice, &grids, pc.variance, &r.cfg.model.family())?;
            write_raster(&surface.grid, r.path("prediction.asc"))?;
            let mut files = vec!["prediction.asc".to_string()];
            if let Some(v) = &surface.variance {
                write_raster(v, r.path("prediction_variance.asc"))?;
                files.push("prediction_variance.asc".into());
            }
            let valid: Vec<f64> = surface.grid.valid_cells().map(|(_, v)| v).collect();
            let summary = PredictionSummary {
                model_id: surface.model_id.clone(),
                n_cells: lattice.len(),
                n_nodata: surface.n_nodata,
                n_floored: surface.n_floored,
                min: valid.iter().copied().fold(f64::INFINITY, f64::min),
                mean: valid.iter().sum::<f64>() / valid.len().max(1) as f64,
                max: valid.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            write_json(&r.path("prediction.json"), &summary)?;
            files.push("prediction.json".into());
            Ok(files)
        })
    }

    fn exposure(&mut self) -> Result<()> {
        let Some(ec) = self.cfg.exposure.clone() else {
            return Ok(());
        };
        let mut inputs = self.upstream(&["prediction.asc"])?;
        let pop_path = &self.cfg.inputs.grids[&ec.population_grid];
        inputs.insert(format!("grid:{}", ec.population_grid), hash_file(pop_path)?);
        let thresholds = self.cfg.thresholds();
        let section = json!({"exposure": ec, "thresholds": thresholds});
        self.stage(Stage::Exposure, section, inputs, move |r| {
            let surface = read_raster(r.path("prediction.asc"))?;
            let mut population = read_raster(&r.cfg.inputs.grids[&ec.population_grid])?;
            if population.lattice != surface.lattice {
                population = population.resample_bilinear(&surface.lattice)?;
            }
            let curve = cumulative_exposure_filtered(&surface, &population, &thresholds, &ec.filter())?;
            curve.write_csv(r.path("exposure.csv"))?;
            let mut files = vec!["exposure.csv".to_string()];
            let mut windows = Vec::new();
            for &w in &ec.windows {
                let grid = window_variance(&surface, w)?;
                let name = format!("window_variance_{w}.asc");
                write_raster(&grid, r.path(&name))?;
                let valid: Vec<f64> = grid.valid_cells().map(|(_, v)| v).collect();
                windows.push(WindowSummary {
                    window_cells: w,
                    file: name.clone(),
                    mean_variance: valid.iter().sum::<f64>() / valid.len().max(1) as f64,
                });
                files.push(name);
            }
            write_json(&r.path("exposure.json"), &ExposureSummary { curve, windows })?;
            files.push("exposure.json".into());
            Ok(files)
        })
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Annualize => self.annualize(),
            Stage::Covariates => self.covariates(),
            Stage::Fit => self.fit(),
            Stage::Cv => self.cv(),
            Stage::Predict => self.predict(),
            Stage::Exposure => self.exposure(),
        }
    }

    fn parse<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Option<T> {
        if !self.produced.contains_key(name) {
            return None;
        }
        read_json(&self.path(name)).ok()
    }

    fn report(&self, failure: Option<(Stage, String)>) -> RunReport {
        let cfg = self.cfg;
        let load = |name: &str| -> Option<serde_json::Value> {
            self.produced.contains_key(name).then(|| read_json(&self.path(name)).ok()).flatten()
        };
        let dataset_hash = match (self.produced.get("annual.csv"), self.produced.get("covariates.csv")) {
            (Some(a), Some(c)) => Some(hash_bytes(format!("{a}{c}").as_bytes())),
            _ => None,
        };
        let n_sites = self
            .produced
            .contains_key("annual.csv")
            .then(|| MonitorTable::read_csv(self.path("annual.csv")).ok().map(|t| t.len()))
            .flatten();
        let n_excluded = load("excluded.json").and_then(|v| v.as_array().map(|a| a.len()));
        let n_covariates = load("covariate_specs.json").and_then(|v| v.as_array().map(|a| a.len()));
        let exposure: Option<ExposureSummary> = self.parse("exposure.json");
        let mut seeds = BTreeMap::from([("master".to_string(), cfg.seed)]);
        if cfg.model.selection == SelectionMethod::Pls {
            seeds.insert("fit:pls".into(), self.seed("fit:pls"));
        }
        if cfg.cv.kfold.is_some() {
            seeds.insert("cv:kfold".into(), self.seed("cv:kfold"));
        }
        RunReport {
            status: if failure.is_some() { RunStatus::Failed } else { RunStatus::Completed },
            failed_stage: failure.as_ref().map(|f| f.0),
            error: failure.map(|f| f.1),
            pollutant: cfg.pollutant.clone(),
            year: cfg.year,
            recipe: RecipeInfo {
                family: cfg.model.family(),
                selection: cfg.model.selection,
                kriging: cfg.model.kriging,
                satellite: cfg.model.satellite,
            },
            dataset_hash,
            n_sites,
            n_excluded,
            n_covariates,
            fit: self.parse("fit.json"),
            cv: self.parse("cv_summary.json").unwrap_or_default(),
            prediction: self.parse("prediction.json"),
            exposure: exposure.map(|e| e.curve),
            artifacts: self.produced.clone(),
            seeds,
        }
    }
}

fn fit_summary(model: &FittedModel, ds: &Dataset, n_candidates: usize) -> Result<FitSummary> {
    let (trend, variogram) = match model {
        FittedModel::Linear { model } => (model.predict(&ds.x)?, None),
        FittedModel::Kriging { model } => (model.drift.predict(&ds.x)?, Some(model.variogram)),
        FittedModel::Pls { model } => (model.predict(&ds.x)?, None),
        FittedModel::PlsKriging { pls, kriging } => (pls.predict(&ds.x)?, Some(kriging.variogram)),
    };
    let residuals: Vec<f64> = ds.y.iter().zip(&trend).map(|(y, t)| y - t).collect();
    let (intercept, coefficients, n_components) = match model {
        FittedModel::Linear { model } | FittedModel::Kriging { model: crate::kriging::KrigingModel { drift: model, .. } } => {
            (Some(model.intercept), model.coefficients.clone(), None)
        }
        FittedModel::Pls { model } | FittedModel::PlsKriging { pls: model, .. } => {
            (None, model.standardized_coefficients(), Some(model.n_components))
        }
    };
    Ok(FitSummary {
        n_sites: ds.len(),
        n_candidates,
        selected: model.required_columns().to_vec(),
        intercept,
        coefficients,
        n_components,
        trend_r2: crate::evaluation::r2_mse(&ds.y, &trend).unwrap_or(f64::NAN),
        morans_i: morans_i(&residuals, &ds.coords).ok(),
        variogram,
    })
}

/// Runs every configured stage up to and including `last`. The report goes to
/// `report.json` for full runs and `report_<last>.json` otherwise.
pub fn run_until(config: &PipelineConfig, last: Stage) -> Result<RunReport> {
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let log_path = dir.join(LOG_FILE);
    let log = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut runner = Runner {
        cfg: config,
        manifest: Manifest::load(&dir)?,
        dir,
        log,
        sources: None,
        source_hashes: None,
        produced: BTreeMap::new(),
    };
    let total = Instant::now();
    let mut failure = None;
    for stage in Stage::ALL.into_iter().filter(|s| *s <= last) {
        if let Err(e) = runner.run_stage(stage) {
            warn!("{e}");
            runner.log_line(&format!("stage={stage} status=failed error={e:?}"));
            let message = match e {
                Error::Stage { message, .. } => message,
                other => other.to_string(),
            };
            failure = Some((stage, message));
            break;
        }
    }
    let status = if failure.is_some() { "failed" } else { "completed" };
    runner.log_line(&format!("run status={status} seconds={:.3}", total.elapsed().as_secs_f64()));
    let report = runner.report(failure);
    let name = if last == Stage::Exposure {
        REPORT_FILE.to_string()
    } else {
        format!("report_{last}.json")
    };
    report.save(runner.path(&name))?;
    Ok(report)
}

/// Runs the full stage graph. Stage failures are reported in the returned
/// report rather than as errors; invalid configs are errors.
pub fn run(config: &PipelineConfig) -> Result<RunReport> {
    run_until(config, Stage::Exposure)
}
