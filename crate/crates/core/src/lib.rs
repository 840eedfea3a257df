//! Multimodal relapse-prediction pipeline: synthetic cohorts, preprocessing,
//! a vision + tabular late-fusion network, training for relapse
//! classification and RFS regression, F-beta threshold selection,
//! survival-style evaluation and interpretability.

pub mod cohort;
pub mod config;
pub mod error;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod thresholds;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
