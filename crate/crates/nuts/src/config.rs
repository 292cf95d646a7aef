use serde::{Deserialize, Serialize};

use crate::SamplerError;

/// Sampler settings. Defaults: 4 chains of 1000 warmup and 4000 sampling
/// iterations at target acceptance 0.8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_treedepth: usize,
    pub seed: u64,
    /// Energy error above which a trajectory is flagged divergent.
    pub max_energy_error: f64,
    /// Half-width of the uniform box used to draw initial points.
    pub init_radius: f64,
    /// Run chains on the rayon thread pool.
    pub parallel: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            samples: 4000,
            target_accept: 0.8,
            max_treedepth: 10,
            seed: 0,
            max_energy_error: 1000.0,
            init_radius: 2.0,
            parallel: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.chains == 0 {
            return Err(SamplerError::Config("chains must be positive".into()));
        }
        if self.samples == 0 {
            return Err(SamplerError::Config("samples must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(SamplerError::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_treedepth == 0 {
            return Err(SamplerError::Config("max_treedepth must be positive".into()));
        }
        if !(self.max_energy_error > 0.0) {
            return Err(SamplerError::Config("max_energy_error must be positive".into()));
        }
        if !(self.init_radius > 0.0 && self.init_radius.is_finite()) {
            return Err(SamplerError::Config("init_radius must be positive".into()));
        }
        Ok(())
    }
}
