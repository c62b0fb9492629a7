//! Trend models: OLS, forward stepwise selection, PLS and residual
//! diagnostics.

mod linear;
mod moran;
mod ols;
mod pls;
mod stepwise;

pub use linear::{FitStats, LinearModel};
pub use moran::{expected_i, morans_i, morans_i_with_cap, MoranResult, DEFAULT_MIN_DISTANCE_M};
pub use ols::{adjusted_r2, ols_fit, t_test_p_value, vif, OlsFit};
pub use pls::{pls_fit, pls_fit_components, score_names, training_scores, PlsFit, PlsModel};
pub use stepwise::{stepwise_select, Criterion, Direction, SelectionStep, StepwiseConfig};
