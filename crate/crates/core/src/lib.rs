//! Offline optimization by learning the joint design-score distribution with
//! a variance-preserving diffusion model and steering its reverse process.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod guidance;
pub mod io;
pub mod manifest;
pub mod pareto;
pub mod rng;
pub mod scaling;
pub mod scorenet;
pub mod sde;
pub mod training;

pub use error::{Error, Result};
