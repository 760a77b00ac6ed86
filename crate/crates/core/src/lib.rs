//! Illumination-guided low-light super-resolution: model, data pipeline,
//! metrics, optimizer and training harness.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod selftest;
pub mod trainer;

pub use config::{GtfmnConfig, GuideAblation};
pub use error::{GtfmnError, Result};
pub use model::{ForwardOutput, GtfmnModel, IlluminationMap};
