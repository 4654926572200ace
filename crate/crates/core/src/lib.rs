pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod consistency;
pub mod dataset;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod metrics;
pub mod mp;
pub mod nn;
pub mod plot;
pub mod policy;

pub use error::{FrmdError, Result};
