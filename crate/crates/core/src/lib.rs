pub mod covariates;
pub mod error;
pub mod evaluation;
pub mod exposure;
pub mod geodata;
pub mod kriging;
pub mod lur;
pub mod monitors;
pub mod pipeline;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geodata.md")]
    mod geodata {}
    #[doc = include_str!("../../../book/src/monitors.md")]
    mod monitors {}
    #[doc = include_str!("../../../book/src/covariates.md")]
    mod covariates {}
    #[doc = include_str!("../../../book/src/lur.md")]
    mod lur {}
    #[doc = include_str!("../../../book/src/kriging.md")]
    mod kriging {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/exposure.md")]
    mod exposure {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
