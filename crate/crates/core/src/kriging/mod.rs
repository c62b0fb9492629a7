//! Residual variograms and universal kriging with an external drift.

mod uk;
mod variogram;

pub use uk::{uk_fit, uk_fit_with_variogram, uk_predict, KrigingModel, KrigingPrediction};
pub use variogram::{
    empirical_variogram, fit_exponential, max_pairwise_distance, EmpiricalVariogram, VariogramBin, VariogramConfig,
    VariogramModel,
};
