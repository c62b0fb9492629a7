//! End-to-end runs from a declarative config, plus the synthetic region
//! generator.

mod compare;
mod config;
mod run;
mod synthetic;

pub use compare::{compare_models, ComparisonRow, ComparisonTable};
pub use config::{
    default_thresholds, CovariateSetRef, CvConfig, ExposureConfig, InputPaths, LandcoverInput, ModelConfig,
    PipelineConfig, PlsSettings, PredictionConfig, SelectionMethod,
};
pub use run::{
    derive_seed, hash_bytes, hash_file, load_dataset, run, run_until, ExposureSummary, FitSummary, Manifest,
    PredictionSummary, RecipeInfo, RunReport, RunStatus, Stage, StageRecord, WindowSummary, LOG_FILE, MANIFEST_FILE,
    REPORT_FILE,
};
pub use synthetic::{
    generate_synthetic, simulate_grf, synthetic_set_sources, GroundTruth, GrfParams, SiteTruth, SyntheticData,
    SyntheticScenario, TrendTerm, GRID_NAMES, LANDCOVER_CLASSES, LANDCOVER_NODATA, POI_CATEGORIES, SATELLITE_GRIDS,
    URBAN_CLASS,
};
