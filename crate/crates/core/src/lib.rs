//! Bayesian order determination for stationary vector autoregressions.
//!
//! The lag matrices are sampled on an unconstrained scale that maps one to
//! one onto the stationary region, under a shrinkage prior whose strength
//! grows with the lag. Posterior draws are then summarized into a
//! distribution over the effective order, Granger-causality edges and a
//! decomposition into quasi-periodic latent components.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod model;
pub mod reparam;
pub mod sim;

pub use error::{Error, Result};
pub use fit::{fit, Fit};
pub use linalg::Matrix;
pub use model::{Dataset, Model, ModelConfig};
pub use reparam::VarModel;
pub use varorder_nuts as nuts;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
