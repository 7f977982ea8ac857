pub mod config;
pub mod error;
pub mod experiments;
pub mod instance;
pub mod logit;
pub mod manifest;
pub mod seeds;
pub mod svg;
pub mod validate;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
