use serde::{Deserialize, Serialize};

/// Post-warmup output of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    /// One row per draw, one column per unconstrained coordinate.
    pub draws: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub divergent: Vec<bool>,
    pub treedepth: Vec<usize>,
    pub n_leapfrog: Vec<usize>,
    pub accept_stat: Vec<f64>,
    pub energy: Vec<f64>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    /// Divergences seen during warmup (not part of the draws).
    pub warmup_divergences: usize,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Trace of coordinate `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }
}

/// Draws from all chains plus the coordinate names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub param_names: Vec<String>,
    pub chains: Vec<ChainDraws>,
    pub max_treedepth: usize,
}

impl PosteriorDraws {
    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    /// All draws, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.chains.iter().flat_map(|c| c.draws.iter().map(Vec::as_slice))
    }

    /// Per-chain traces of coordinate `k`.
    pub fn traces(&self, k: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.column(k)).collect()
    }

    pub fn divergences(&self) -> usize {
        self.chains
            .iter()
            .map(|c| c.divergent.iter().filter(|&&d| d).count())
            .sum()
    }

    pub fn treedepth_hits(&self) -> usize {
        self.chains
            .iter()
            .map(|c| c.treedepth.iter().filter(|&&d| d >= self.max_treedepth).count())
            .sum()
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.dim(), "name count must match dimension");
        self.param_names = names;
        self
    }

    /// Assemble draws from bare rows (one chain per entry), e.g. when
    /// reading stored output. Sampler statistics are left empty.
    pub fn from_rows(param_names: Vec<String>, chains: Vec<Vec<Vec<f64>>>) -> Self {
        let chains = chains
            .into_iter()
            .map(|draws| {
                let n = draws.len();
                ChainDraws {
                    draws,
                    log_density: vec![f64::NAN; n],
                    divergent: vec![false; n],
                    treedepth: vec![0; n],
                    n_leapfrog: vec![0; n],
                    accept_stat: vec![f64::NAN; n],
                    energy: vec![f64::NAN; n],
                    step_size: f64::NAN,
                    inv_metric: Vec::new(),
                    warmup_divergences: 0,
                }
            })
            .collect();
        Self {
            param_names,
            chains,
            max_treedepth: usize::MAX,
        }
    }
}
