//! Post-processing of posterior draws.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use varorder_nuts::PosteriorDraws;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ParamLayout;
use crate::reparam::{a_to_pacf, a_to_var, companion_eigenvalues};

/// `ε = Φ^{-1}((β^{1/m²} + 1) / 2) / √n`: the level below which every entry
/// of an `m x m` matrix of independent `N(0, 1/n)` variables stays with
/// probability `β`.
pub fn truncation_threshold(m: usize, n: usize, beta: f64) -> Result<f64> {
    if m == 0 || n < 2 {
        return Err(Error::Usage(format!("threshold needs m >= 1 and n >= 2, got m={m}, n={n}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Usage(format!("beta must lie in (0, 1), got {beta}")));
    }
    let q = (beta.powf(1.0 / (m * m) as f64) + 1.0) / 2.0;
    Ok(Normal::standard().inverse_cdf(q) / (n as f64).sqrt())
}

/// Largest lag whose partial autocorrelation has an entry of magnitude at
/// least `epsilon`; 0 if all are truncated.
pub fn effective_order(pacf: &[Matrix<f64>], epsilon: f64) -> usize {
    pacf.iter()
        .rposition(|p| p.max_abs() >= epsilon)
        .map_or(0, |s| s + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderPosterior {
    /// Probability of each order `0..=p_max`.
    pub pmf: Vec<f64>,
    pub threshold: f64,
    pub beta: f64,
    pub n: usize,
    pub m: usize,
    pub draws: usize,
}

impl OrderPosterior {
    pub fn from_orders(orders: &[usize], p_max: usize, threshold: f64, beta: f64, n: usize, m: usize) -> Self {
        let mut counts = vec![0usize; p_max + 1];
        for &k in orders {
            counts[k] += 1;
        }
        let total = orders.len() as f64;
        Self {
            pmf: counts.iter().map(|&c| c as f64 / total).collect(),
            threshold,
            beta,
            n,
            m,
            draws: orders.len(),
        }
    }

    /// Most probable order; ties go to the smaller order.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.pmf.iter().enumerate() {
            if p > self.pmf[best] {
                best = k;
            }
        }
        best
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.pmf.get(k).copied().unwrap_or(0.0)
    }
}

fn unpack_a(layout: &ParamLayout, theta: &[f64]) -> Vec<Matrix<f64>> {
    layout.unpack(theta).a
}

/// Partial autocorrelations of every draw, chain by chain.
pub fn pacf_draws(draws: &PosteriorDraws, layout: &ParamLayout) -> Result<Vec<Vec<Matrix<f64>>>> {
    let rows: Vec<&[f64]> = draws.iter().collect();
    rows.par_iter().map(|theta| a_to_pacf(&unpack_a(layout, theta))).collect()
}

/// VAR coefficients `φ_1..φ_{p_max}` of every draw, chain by chain.
pub fn coefficient_draws(draws: &PosteriorDraws, layout: &ParamLayout) -> Result<Vec<Vec<Matrix<f64>>>> {
    let rows: Vec<&[f64]> = draws.iter().collect();
    rows.par_iter()
        .map(|theta| {
            let params = layout.unpack(theta);
            Ok(a_to_var(&params.sigma(), &params.a)?.0.phi)
        })
        .collect()
}

/// Effective order of every draw.
pub fn order_draws(pacf: &[Vec<Matrix<f64>>], epsilon: f64) -> Vec<usize> {
    pacf.iter().map(|p| effective_order(p, epsilon)).collect()
}

/// Posterior of the effective order for data of length `n`.
pub fn order_posterior(draws: &PosteriorDraws, layout: &ParamLayout, n: usize, beta: f64) -> Result<OrderPosterior> {
    if draws.total_draws() == 0 {
        return Err(Error::Usage("no draws".into()));
    }
    let pacf = pacf_draws(draws, layout)?;
    order_posterior_from_pacf(&pacf, layout.p_max(), layout.m(), n, beta)
}

/// Same as [`order_posterior`] on precomputed partial autocorrelations.
pub fn order_posterior_from_pacf(pacf: &[Vec<Matrix<f64>>], p_max: usize, m: usize, n: usize, beta: f64) -> Result<OrderPosterior> {
    if pacf.is_empty() {
        return Err(Error::Usage("no draws".into()));
    }
    let eps = truncation_threshold(m, n, beta)?;
    let orders = order_draws(pacf, eps);
    Ok(OrderPosterior::from_orders(&orders, p_max, eps, beta, n, m))
}

/// Sample quantile with linear interpolation between order statistics
/// (type 7). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrangerEdge {
    pub lag: usize,
    /// Source component, 1-based.
    pub from: usize,
    /// Target component, 1-based.
    pub to: usize,
    /// `|posterior mean of φ_{lag, to, from}|`.
    pub weight: f64,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Edges `j -> i` at lags up to `modal_order` whose 50% central credible
/// interval for `φ_{s,ij}` excludes zero.
pub fn granger_edges(phi_draws: &[Vec<Matrix<f64>>], modal_order: usize) -> Vec<GrangerEdge> {
    let Some(first) = phi_draws.first() else {
        return Vec::new();
    };
    let m = first[0].rows();
    let order = modal_order.min(first.len());
    let mut edges = Vec::new();
    for s in 0..order {
        for i in 0..m {
            for j in 0..m {
                let mut vals: Vec<f64> = phi_draws.iter().map(|d| d[s][(i, j)]).collect();
                let mu = mean(&vals);
                vals.sort_by(f64::total_cmp);
                let lo = quantile_sorted(&vals, 0.25);
                let hi = quantile_sorted(&vals, 0.75);
                if lo > 0.0 || hi < 0.0 {
                    edges.push(GrangerEdge {
                        lag: s + 1,
                        from: j + 1,
                        to: i + 1,
                        weight: mu.abs(),
                        mean: mu,
                        ci_lo: lo,
                        ci_hi: hi,
                    });
                }
            }
        }
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    ComplexPair,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentComponent {
    pub kind: ComponentKind,
    pub modulus: f64,
    /// Radians per sample.
    pub frequency: f64,
    /// `2π / ω` in samples; absent for real components.
    pub period_samples: Option<f64>,
    /// Period in the dataset's time unit.
    pub period_time: Option<f64>,
    /// Negative real eigenvalue: a component that flips sign every step.
    pub alternating: bool,
}

const REAL_TOL: f64 = 1e-10;

/// Quasi-periodic and real components from the companion eigenvalues of
/// `φ_1..φ_{modal_order}`. Complex pairs come first by increasing
/// frequency, then real components by decreasing modulus.
pub fn latent_decomposition(phi: &[Matrix<f64>], modal_order: usize, time_step: f64) -> Vec<LatentComponent> {
    let order = modal_order.min(phi.len());
    if order == 0 {
        return Vec::new();
    }
    let mut pairs = Vec::new();
    let mut reals = Vec::new();
    for z in companion_eigenvalues(&phi[..order]) {
        let r = z.norm();
        if z.im.abs() <= REAL_TOL * r.max(1.0) {
            reals.push(LatentComponent {
                kind: ComponentKind::Real,
                modulus: r,
                frequency: if z.re < 0.0 { PI } else { 0.0 },
                period_samples: None,
                period_time: None,
                alternating: z.re < 0.0,
            });
        } else if z.im > 0.0 {
            let w = z.arg();
            let period = 2.0 * PI / w;
            pairs.push(LatentComponent {
                kind: ComponentKind::ComplexPair,
                modulus: r,
                frequency: w,
                period_samples: Some(period),
                period_time: Some(period * time_step),
                alternating: false,
            });
        }
    }
    pairs.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    reals.sort_by(|a, b| b.modulus.total_cmp(&a.modulus));
    pairs.extend(reals);
    pairs
}

/// Mean and central 95% interval of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: mean(&v),
            lo: quantile_sorted(&v, 0.025),
            hi: quantile_sorted(&v, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    /// 1-based rank by increasing frequency.
    pub index: usize,
    pub moduli: Vec<f64>,
    pub periods_samples: Vec<f64>,
    pub modulus: Interval,
    pub period_samples: Interval,
    pub period_time: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub components: Vec<ComponentSummary>,
    pub draws: usize,
    /// Draws with fewer than `k` complex pairs.
    pub missing: usize,
    pub time_step: f64,
}

/// Posterior of moduli and periods of the `k` lowest-frequency
/// quasi-periodic components.
pub fn decomposition_summary(phi_draws: &[Vec<Matrix<f64>>], modal_order: usize, k: usize, time_step: f64) -> Result<DecompositionSummary> {
    if k == 0 {
        return Err(Error::Usage("k must be at least 1".into()));
    }
    let per_draw: Vec<Vec<LatentComponent>> = phi_draws
        .par_iter()
        .map(|phi| {
            latent_decomposition(phi, modal_order, time_step)
                .into_iter()
                .filter(|c| c.kind == ComponentKind::ComplexPair)
                .take(k)
                .collect()
        })
        .collect();
    let missing = per_draw.iter().filter(|c| c.len() < k).count();
    let mut components = Vec::new();
    for j in 0..k {
        let present: Vec<&LatentComponent> = per_draw.iter().filter_map(|c| c.get(j)).collect();
        if present.is_empty() {
            break;
        }
        let moduli: Vec<f64> = present.iter().map(|c| c.modulus).collect();
        let periods: Vec<f64> = present.iter().filter_map(|c| c.period_samples).collect();
        let times: Vec<f64> = periods.iter().map(|p| p * time_step).collect();
        components.push(ComponentSummary {
            index: j + 1,
            modulus: Interval::of(&moduli),
            period_samples: Interval::of(&periods),
            period_time: Interval::of(&times),
            moduli,
            periods_samples: periods,
        });
    }
    Ok(DecompositionSummary {
        components,
        draws: phi_draws.len(),
        missing,
        time_step,
    })
}

/// Silverman's rule: `0.9 min(sd, IQR / 1.34) n^{-1/5}`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mu = mean(values);
    let sd = (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile(values, 0.75) - quantile(values, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density estimate at `grid`.
pub fn kde(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let h = silverman_bandwidth(values);
    if !(h > 0.0) {
        return vec![0.0; grid.len()];
    }
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    grid.iter()
        .map(|&x| values.iter().map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}
