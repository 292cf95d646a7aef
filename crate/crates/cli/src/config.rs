use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use varorder_core::nuts::SamplerConfig;
use varorder_core::sim::{Start, StudyGrid};
use varorder_core::ModelConfig;

use crate::error::{CliError, Result};

/// Post-processing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Coverage level of the truncation threshold.
    pub beta: f64,
    pub granger: bool,
    pub decompose: bool,
    /// Refit at the modal order for the Granger and decomposition analyses
    /// instead of reusing the leading lags of the `p_max` fit.
    pub refit: bool,
    /// Number of quasi-periodic components to summarize.
    pub components: usize,
    /// Time between rows, in `time_unit`.
    pub time_step: f64,
    pub time_unit: String,
    /// CSV with columns `name,label,x,y` placing series on the Granger graph.
    pub regions: Option<PathBuf>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            beta: 0.99,
            granger: true,
            decompose: true,
            refit: false,
            components: 2,
            time_step: 1.0,
            time_unit: "samples".into(),
            regions: None,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(CliError::Usage(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.time_step > 0.0 && self.time_step.is_finite()) {
            return Err(CliError::Usage(format!("time_step must be positive, got {}", self.time_step)));
        }
        if self.components == 0 {
            return Err(CliError::Usage("components must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything a `fit` run depends on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        self.model.validate(m)?;
        self.sampler
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.analysis.validate()
    }
}

/// A `simulate` request. Either `m` and `p` (random model with `Σ = I`) or
/// an explicit `model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub m: Option<usize>,
    pub p: Option<usize>,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub start: Start,
    pub model: Option<ModelSpec>,
    pub names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub sigma: Vec<Vec<f64>>,
    /// `φ_1..φ_p`, each as rows.
    pub phi: Vec<Vec<Vec<f64>>>,
}

/// A `study` request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub grid: StudyGrid,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Also write every cell's draws.
    #[serde(default)]
    pub save_draws: bool,
}

fn default_beta() -> f64 {
    0.99
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical (compact) serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("serializable value").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for bad in [
            r#"{"samplr": {}}"#,
            r#"{"sampler": {"chain": 2}}"#,
            r#"{"model": {"pmax": 3}}"#,
            r#"{"model": {"mgp": {"b": 1}}}"#,
            r#"{"analysis": {"betta": 0.9}}"#,
        ] {
            assert!(serde_json::from_str::<RunConfig>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"model": {"p_max": 3, "mgp": {"a1": 2.0}}, "sampler": {"chains": 2}}"#).unwrap();
        assert_eq!(cfg.model.p_max, 3);
        assert_eq!(cfg.model.mgp.a1, 2.0);
        assert_eq!(cfg.model.mgp.a, 6.0);
        assert_eq!(cfg.sampler.chains, 2);
        assert_eq!(cfg.sampler.warmup, 1000);
        assert_eq!(cfg.analysis.beta, 0.99);
    }

    #[test]
    fn roundtrip_keeps_the_hash() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&to_json(&cfg)).unwrap();
        assert_eq!(config_hash(&cfg), config_hash(&back));
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let mut cfg = RunConfig::default();
        cfg.analysis.beta = 1.0;
        assert_eq!(cfg.validate(2).unwrap_err().exit_code(), 2);
        let mut cfg = RunConfig::default();
        cfg.sampler.chains = 0;
        assert_eq!(cfg.validate(2).unwrap_err().exit_code(), 2);
    }
}
