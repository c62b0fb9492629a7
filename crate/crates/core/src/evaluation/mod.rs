//! Cross-validation, metrics and the Monte Carlo subsampling experiment.

mod cv;
mod metrics;
mod montecarlo;
mod plan;
mod recipe;

pub use cv::{run_cv, CvResult, CvSummary, FoldMetrics};
pub use metrics::{median, quantile, r2_mse, rmse, DistanceSummary};
pub use montecarlo::{monte_carlo_curve, monte_carlo_sample, McRecord, McSummary, MonteCarloConfig, MonteCarloResult};
pub use plan::{kfold_assignment, nn_distance_summary, CvPlan, CvScheme};
pub use recipe::{fit_recipe, Dataset, FittedModel, ModelRecipe, Selection};
