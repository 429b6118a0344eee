//! Dual-granularity contrastive graph learning for session-based
//! recommendation.

pub mod params;

pub mod cli;
pub mod config;
pub mod contrast;
pub mod dataio;
pub mod disentangle;
pub mod encoder;
pub mod error;
pub mod graphs;
pub mod harness;
pub mod model;
pub mod predictor;
pub mod propagation;
pub mod rng;
pub mod tape;

pub use config::{TrainConfig, Variant};
pub use error::{Error, Result};
