//! Latent Bayesian generative modeling for nonlinear instrumental-variable
//! regression.

pub mod bench;
pub mod error;
pub mod harness;
pub mod infer;
pub mod model;
pub mod ndcompute;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
