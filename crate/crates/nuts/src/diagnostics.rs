//! Convergence diagnostics: rank-normalized split R-hat and effective
//! sample size from Geyer's initial monotone sequence.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::PosteriorDraws;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// Rank-normalized split R-hat; NaN when a chain is constant.
    pub rhat: f64,
    pub rhat_undefined: bool,
    /// ESS of the rank-normalized draws.
    pub ess_bulk: f64,
    /// ESS of the raw draws, the one relevant for the mean.
    pub ess_mean: f64,
    /// Monte Carlo standard error of the mean, `sd / sqrt(ess_mean)`.
    pub mcse_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub params: Vec<ParamDiagnostics>,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub divergences: usize,
    pub treedepth_hits: usize,
    pub max_rhat: f64,
    pub min_ess_bulk: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Halve every chain; the middle draw of an odd-length chain is dropped.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Replace pooled draws by normal scores of their (average-tie) ranks.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, xs)| xs.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut k = 0;
    while k < pooled.len() {
        let mut j = k;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[k].0 {
            j += 1;
        }
        // 1-based average rank of the tie block.
        let rank = (k + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, i) in &pooled[k..=j] {
            out[c][i] = z;
        }
        k = j + 1;
    }
    out
}

/// Potential scale reduction of already-split chains.
fn rhat_raw(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let within = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let between = n * sample_var(&means);
    if !(within > 0.0) {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    (var_plus / within).sqrt()
}

/// Rank-normalized split R-hat. Returns NaN if any split chain is constant
/// or the chains are too short to split.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let halves = split(chains);
    if halves.iter().any(|c| c.iter().all(|&x| x == c[0])) {
        return f64::NAN;
    }
    rhat_raw(&rank_normalize(&halves))
}

fn autocovariance(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// truncation. Chains must share a common length of at least 4.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    if m == 0 {
        return f64::NAN;
    }
    let n = chains[0].len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocovariance(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho_at = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 5 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = rho_even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = -1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + tail;
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

fn summarize(name: &str, chains: &[Vec<f64>]) -> ParamDiagnostics {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let mu = mean(&pooled);
    let sd = if pooled.len() > 1 {
        sample_var(&pooled).sqrt()
    } else {
        f64::NAN
    };
    let rhat = split_rhat(chains);
    let (ess_bulk, ess_mean) = if chains.iter().all(|c| c.len() >= 4) {
        let halves = split(chains);
        let constant = halves.iter().any(|c| c.iter().all(|&x| x == c[0]));
        let bulk = if constant {
            f64::NAN
        } else {
            ess(&rank_normalize(&halves))
        };
        (bulk, ess(&halves))
    } else {
        (f64::NAN, f64::NAN)
    };
    ParamDiagnostics {
        name: name.to_string(),
        mean: mu,
        sd,
        rhat,
        rhat_undefined: rhat.is_nan(),
        ess_bulk,
        ess_mean,
        mcse_mean: sd / ess_mean.sqrt(),
    }
}

/// Per-parameter and global diagnostics for a set of draws.
pub fn diagnose(draws: &PosteriorDraws) -> Diagnostics {
    let params: Vec<ParamDiagnostics> = draws
        .param_names
        .iter()
        .enumerate()
        .map(|(k, name)| summarize(name, &draws.traces(k)))
        .collect();
    let max_rhat = params
        .iter()
        .map(|p| p.rhat)
        .filter(|r| r.is_finite())
        .fold(f64::NAN, f64::max);
    let min_ess_bulk = params
        .iter()
        .map(|p| p.ess_bulk)
        .filter(|e| e.is_finite())
        .fold(f64::NAN, f64::min);
    Diagnostics {
        params,
        chains: draws.num_chains(),
        draws_per_chain: draws.chains.first().map_or(0, |c| c.len()),
        divergences: draws.divergences(),
        treedepth_hits: draws.treedepth_hits(),
        max_rhat,
        min_ess_bulk,
    }
}
