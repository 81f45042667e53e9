//! Spike-and-slab quasi-posteriors for high-dimensional sparse estimation.
//!
//! The crate provides MCMC samplers (a generic kernel and a fast Gaussian
//! regression kernel), template-based variational approximations, posterior
//! diagnostics, and two applications built on the regression sampler:
//! Gaussian graphical model selection and sparse principal components.

pub mod bench;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod ggm;
pub mod io;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod simulate;
pub mod spca;
pub mod varapprox;

pub use error::{Error, Result};
pub use model::{
    log_prior, BinaryModel, CoordinateScanner, GaussianRegressionQL, LogDensity, ModelState,
    PriorSpec, QuasiLikelihood,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
