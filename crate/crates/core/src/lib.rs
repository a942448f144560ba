//! Adaptive multi-altitude hotspot search with Gaussian-process surrogates.

pub mod baselines;
pub mod bench;
pub mod error;
pub mod field;
pub mod geom;
pub mod gp;
pub mod planner;
pub mod sensing;

pub use error::{Error, Result};
