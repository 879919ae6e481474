//! Bayesian distributed lag non-linear models with penalized splines and
//! spatial random effects, fitted by Laplace approximation.

pub mod artifact;
pub mod basis;
pub mod crossbasis;
pub mod error;
pub mod fit;
pub mod model;
pub mod panel;
pub mod penalty;
pub mod posterior;
pub mod sim;
pub mod spatial;

pub use error::{Error, Result};
pub use fit::{fit, FitOptions, LatentFit};
pub use model::{ModelConfig, ModelSpec};
