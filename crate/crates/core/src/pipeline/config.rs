use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariates::DefaultSetSources;
use crate::error::{Error, Result};
use crate::evaluation::{ModelRecipe, Selection};
use crate::exposure::{PopulationFilter, NO2_THRESHOLDS, PM25_THRESHOLDS};
use crate::kriging::VariogramConfig;
use crate::lur::StepwiseConfig;
use crate::monitors::GroupKey;

/// Files feeding a run. Relative paths are resolved against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    /// Site metadata CSV.
    pub sites: PathBuf,
    /// Daily measurements CSV.
    pub daily: PathBuf,
    /// Feature layers (points or polylines) by source name.
    #[serde(default)]
    pub layers: BTreeMap<String, PathBuf>,
    /// Real-valued ESRI ASCII grids by source name.
    #[serde(default)]
    pub grids: BTreeMap<String, PathBuf>,
    /// Categorical land-cover grids by source name.
    #[serde(default)]
    pub landcover: BTreeMap<String, LandcoverInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandcoverInput {
    pub path: PathBuf,
    /// Valid category codes; every non-nodata code when absent.
    #[serde(default)]
    pub categories: Option<Vec<i32>>,
}

/// Which covariate specs to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSetRef {
    /// A JSON list of covariate specs.
    File(PathBuf),
    /// The standard buffer ladders over the named sources.
    Default(DefaultSetSources),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    #[default]
    Stepwise,
    Pls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub selection: SelectionMethod,
    pub kriging: bool,
    /// Whether the satellite columns are candidates.
    pub satellite: bool,
    pub satellite_columns: Vec<String>,
    /// Restricts candidates to these columns when present.
    pub include: Option<Vec<String>>,
    pub exclude: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            selection: SelectionMethod::Stepwise,
            kriging: true,
            satellite: false,
            satellite_columns: Vec::new(),
            include: None,
            exclude: Vec::new(),
        }
    }
}

impl ModelConfig {
    /// Model family such as `stepwise+uk+sat`.
    pub fn family(&self) -> String {
        let mut s = match self.selection {
            SelectionMethod::Stepwise => "stepwise",
            SelectionMethod::Pls => "pls",
        }
        .to_string();
        if self.kriging {
            s.push_str("+uk");
        }
        if self.satellite {
            s.push_str("+sat");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlsSettings {
    pub max_components: usize,
    pub folds: usize,
}

impl Default for PlsSettings {
    fn default() -> Self {
        Self {
            max_components: 10,
            folds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    /// Number of random folds; no k-fold run when absent.
    pub kfold: Option<usize>,
    /// One leave-one-group-out run per key.
    pub logo: Vec<GroupKey>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            kfold: Some(10),
            logo: vec![GroupKey::Province],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    /// Name of an input grid whose lattice is the prediction lattice.
    pub lattice_grid: String,
    /// Also write the kriging variance surface.
    #[serde(default)]
    pub variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureConfig {
    /// Name of an input grid holding population counts.
    pub population_grid: String,
    /// Defaults depend on the pollutant.
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default)]
    pub min_population: Option<f64>,
    #[serde(default)]
    pub max_population: Option<f64>,
    /// Moving-window variance sizes in cells.
    #[serde(default)]
    pub windows: Vec<usize>,
}

impl ExposureConfig {
    pub fn filter(&self) -> PopulationFilter {
        PopulationFilter {
            min_population: self.min_population,
            max_population: self.max_population,
        }
    }
}

/// Concentration thresholds used when the config gives none.
pub fn default_thresholds(pollutant: &str) -> Option<Vec<f64>> {
    let key: String = pollutant
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    match key.as_str() {
        "pm25" => Some(PM25_THRESHOLDS.to_vec()),
        "no2" => Some(NO2_THRESHOLDS.to_vec()),
        _ => None,
    }
}

/// Declarative description of one end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub pollutant: String,
    pub year: i32,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub inputs: InputPaths,
    pub covariates: CovariateSetRef,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub stepwise: StepwiseConfig,
    #[serde(default)]
    pub pls: PlsSettings,
    #[serde(default)]
    pub variogram: VariogramConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub prediction: Option<PredictionConfig>,
    #[serde(default)]
    pub exposure: Option<ExposureConfig>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a JSON config and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Joins every relative path onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        let inp = &mut self.inputs;
        resolve(base, &mut inp.sites);
        resolve(base, &mut inp.daily);
        for p in inp.layers.values_mut().chain(inp.grids.values_mut()) {
            resolve(base, p);
        }
        for lc in inp.landcover.values_mut() {
            resolve(base, &mut lc.path);
        }
        if let CovariateSetRef::File(p) = &mut self.covariates {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        let exists = |what: &str, p: &Path| -> Result<()> {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what}: `{}` does not exist", p.display())))
            }
        };
        exists("sites", &self.inputs.sites)?;
        exists("daily", &self.inputs.daily)?;
        for (n, p) in self.inputs.layers.iter().chain(&self.inputs.grids) {
            exists(n, p)?;
        }
        for (n, lc) in &self.inputs.landcover {
            exists(n, &lc.path)?;
        }
        if let CovariateSetRef::File(p) = &self.covariates {
            exists("covariate specs", p)?;
        }
        self.stepwise.validate()?;
        if self.model.satellite && self.model.satellite_columns.is_empty() {
            return bad("a satellite model family needs `satellite_columns`".into());
        }
        if self.model.selection == SelectionMethod::Pls && (self.pls.max_components == 0 || self.pls.folds < 2) {
            return bad("pls needs max_components ≥ 1 and folds ≥ 2".into());
        }
        if self.variogram.n_bins == 0 {
            return bad("variogram n_bins must be positive".into());
        }
        if let Some(k) = self.cv.kfold {
            if k < 2 {
                return bad(format!("kfold must be at least 2, got {k}"));
            }
        }
        if let Some(p) = &self.prediction {
            if !self.inputs.grids.contains_key(&p.lattice_grid) {
                return bad(format!("prediction lattice grid `{}` is not an input grid", p.lattice_grid));
            }
        }
        if let Some(e) = &self.exposure {
            if self.prediction.is_none() {
                return bad("exposure needs a prediction section".into());
            }
            if !self.inputs.grids.contains_key(&e.population_grid) {
                return bad(format!("population grid `{}` is not an input grid", e.population_grid));
            }
            if e.thresholds.is_none() && default_thresholds(&self.pollutant).is_none() {
                return bad(format!("no default thresholds for pollutant `{}`", self.pollutant));
            }
            if e.windows.iter().any(|&w| w == 0) {
                return bad("window sizes must be positive".into());
            }
        }
        Ok(())
    }

    /// The evaluation recipe this config describes. `pls_seed` drives the
    /// PLS component-selection folds.
    pub fn recipe(&self, pls_seed: u64) -> ModelRecipe {
        let selection = match self.model.selection {
            SelectionMethod::Stepwise => Selection::Stepwise(self.stepwise),
            SelectionMethod::Pls => Selection::Pls {
                max_components: self.pls.max_components,
                folds: self.pls.folds,
                seed: pls_seed,
            },
        };
        let mut exclude = self.model.exclude.clone();
        if !self.model.satellite {
            exclude.extend(self.model.satellite_columns.iter().cloned());
        }
        ModelRecipe {
            selection,
            kriging: self.model.kriging.then_some(self.variogram),
            include: self.model.include.clone(),
            exclude,
        }
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.exposure
            .as_ref()
            .and_then(|e| e.thresholds.clone())
            .or_else(|| default_thresholds(&self.pollutant))
            .unwrap_or_default()
    }
}
