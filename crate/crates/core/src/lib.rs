//! Mixture-effect estimation for quantized exposures.
//!
//! * [`quantize`] scores continuous exposures into quantile levels.
//! * [`regress`] holds the linear and logistic GLM kernels.
//! * [`qgc`] implements quantile g-computation.
//! * [`wqs`] implements weighted quantile sum regression.
//! * [`simgen`] and [`mcharness`] reproduce the simulation study: scenario
//!   data generation, replications and bias/coverage/power summaries.

pub mod data;
pub mod error;
mod linalg;
pub mod mcharness;
pub mod qgc;
pub mod quantize;
pub mod regress;
pub mod rng;
pub mod simgen;
pub mod wqs;

pub use data::MixtureData;
pub use error::{Error, ErrorKind, Result};

/// Two-sided 95% Wald critical value used for every interval and test.
pub const Z_95: f64 = 1.96;
