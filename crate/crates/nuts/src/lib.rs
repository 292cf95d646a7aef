//! No-U-Turn Hamiltonian Monte Carlo.
//!
//! Multinomial NUTS with the generalized (momentum-sum) no-U-turn criterion,
//! dual-averaging step size adaptation and a diagonal metric learned in
//! expanding warmup windows. Chains run in parallel with independent,
//! seed-derived random streams, so a `(seed, config)` pair fully determines
//! the output.
//!
//! Targets implement [`LogDensity`]; anything that can produce a log density
//! and its gradient at a point can be sampled.

mod adapt;
mod config;
pub mod diagnostics;
mod draws;
mod hamiltonian;
mod sampler;

pub use adapt::{DualAveraging, WindowSchedule, WelfordVariance};
pub use config::SamplerConfig;
pub use diagnostics::{diagnose, ess, split_rhat, Diagnostics, ParamDiagnostics};
pub use draws::{ChainDraws, PosteriorDraws};
pub use hamiltonian::{leapfrog_energy_error, DiagMetric};
pub use sampler::{sample, sample_chain};

use thiserror::Error;

/// A differentiable log density over `R^dim`.
///
/// Implementations return the log density at `x` and write its gradient into
/// `grad`. Invalid points are signalled by a non-finite return value; the
/// sampler treats them as divergent proposals.
pub trait LogDensity {
    fn dim(&self) -> usize;

    fn log_density_and_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("chain {chain}: no finite initial point after {attempts} attempts")]
    Initialization { chain: usize, attempts: usize },
    #[error("chain {chain}: step size search failed ({reason})")]
    StepSize { chain: usize, reason: &'static str },
    #[error("invalid sampler configuration: {0}")]
    Config(String),
}
