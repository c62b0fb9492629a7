use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x}, {y}) is outside the grid domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("nodata encountered: {0}")]
    Nodata(String),

    #[error("layer contains no features")]
    NoFeatures,

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("no admissible variable for the first model step")]
    EmptyModel,

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("empirical variogram has no pairs within the maximum lag")]
    EmptyVariogram,

    #[error("variogram fit failed: {0}")]
    VariogramFit(String),

    #[error("singular kriging system: {0}")]
    SingularKriging(String),

    #[error("fold {fold}: {message}")]
    Fold { fold: String, message: String },

    #[error("nodata for covariates: {}", format_pairs(.0))]
    CovariateNodata(Vec<(String, String)>),

    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_pairs(pairs: &[(String, String)]) -> String {
    let shown: Vec<String> = pairs
        .iter()
        .take(10)
        .map(|(site, spec)| format!("({site}, {spec})"))
        .collect();
    if pairs.len() > 10 {
        format!("{} and {} more", shown.join(", "), pairs.len() - 10)
    } else {
        shown.join(", ")
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
