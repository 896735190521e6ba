pub mod allocation;
pub mod baselines;
pub mod codsa;
pub mod dataset;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod generator;
pub mod metrics;
pub mod nncore;
pub mod rng;
pub mod scaling;
pub mod tuner;

pub use error::{Error, Result};
