use std::sync::Arc;

use varorder_nuts::{diagnose, sample, Diagnostics, PosteriorDraws, SamplerConfig};

use crate::error::Result;
use crate::model::{Dataset, Model, ModelConfig};

/// Draws and diagnostics of one posterior fit.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: Arc<Model>,
    pub draws: PosteriorDraws,
    pub diagnostics: Diagnostics,
}

/// Sample the posterior of `data` under `model_cfg`.
pub fn fit(data: &Dataset, model_cfg: &ModelConfig, sampler_cfg: &SamplerConfig) -> Result<Fit> {
    let model = Arc::new(Model::new(data, model_cfg)?);
    let draws = sample(&model.density(), sampler_cfg)?.with_names(model.layout().names());
    let diagnostics = diagnose(&draws);
    Ok(Fit {
        model,
        draws,
        diagnostics,
    })
}
