//! Joint log posterior over the unconstrained parameter vector.
//!
//! Parameters: the unconstrained lag matrices `A_s` under a multiplicative
//! gamma process shrinkage prior with local precisions `λ_{s,ij}` and global
//! precisions `τ_s = δ_1 ⋯ δ_s`, and the innovation variance Σ under an
//! inverse Wishart prior. The likelihood is exact: the first `p_max`
//! observations are drawn from the stationary distribution.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use varorder_nuts::LogDensity;

use crate::autodiff::{GradientContext, NonFiniteSite, Real};
use crate::error::{Error, Result};
use crate::linalg::{log_det_from_cholesky, mvn_logpdf, spd_inverse_from_cholesky, Matrix};
use crate::reparam::{a_to_pacf, a_to_var, build_initial_variance, check_stationary, initial_variance, VarModel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Shape parameters of the shrinkage prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgpHyperParams {
    /// `λ ~ Gam(a/2, a/2)`.
    pub a: f64,
    /// `δ_1 ~ Gam(a1, 1)`.
    pub a1: f64,
    /// `δ_k ~ Gam(a2, 1)` for `k > 1`.
    pub a2: f64,
}

impl Default for MgpHyperParams {
    fn default() -> Self {
        Self {
            a: 6.0,
            a1: 2.5,
            a2: 3.0,
        }
    }
}

impl MgpHyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("a1", self.a1), ("a2", self.a2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Usage(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Prior mean of `τ_s`, 1-based.
    pub fn expected_tau(&self, s: usize) -> f64 {
        self.a1 * self.a2.powi(s as i32 - 1)
    }
}

/// Model settings shared by fitting and analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub p_max: usize,
    /// Shrinkage prior shapes, a nested object in JSON.
    pub mgp: MgpHyperParams,
    pub sigma_scale_diag: f64,
    pub sigma_scale_offdiag: f64,
    /// Inverse Wishart degrees of freedom; `m + 4` when absent.
    pub sigma_dof: Option<f64>,
    /// Drop the likelihood and sample the prior.
    pub prior_only: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            p_max: 8,
            mgp: MgpHyperParams::default(),
            sigma_scale_diag: 1.0,
            sigma_scale_offdiag: 0.0,
            sigma_dof: None,
            prior_only: false,
        }
    }
}

impl ModelConfig {
    pub fn sigma_prior(&self, m: usize) -> Result<SigmaPrior> {
        let scale = Matrix::from_fn(m, m, |r, c| {
            if r == c {
                self.sigma_scale_diag
            } else {
                self.sigma_scale_offdiag
            }
        });
        SigmaPrior::new(scale, self.sigma_dof.unwrap_or(m as f64 + 4.0))
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.p_max == 0 {
            return Err(Error::Usage("p_max must be at least 1".into()));
        }
        self.mgp.validate()?;
        self.sigma_prior(m)?;
        Ok(())
    }
}

/// Inverse Wishart prior on Σ.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPrior {
    pub scale: Matrix<f64>,
    pub dof: f64,
    scale_chol: Matrix<f64>,
    log_norm: f64,
}

/// `log Γ_m(x)`.
pub fn ln_multivariate_gamma(m: usize, x: f64) -> f64 {
    let mf = m as f64;
    mf * (mf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=m).map(|j| ln_gamma(x + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

impl SigmaPrior {
    pub fn new(scale: Matrix<f64>, dof: f64) -> Result<Self> {
        let m = scale.rows();
        if !(dof > m as f64 - 1.0) {
            return Err(Error::Usage(format!("sigma_dof must exceed m - 1 = {}, got {dof}", m as f64 - 1.0)));
        }
        let scale_chol = scale
            .cholesky()
            .map_err(|e| Error::Usage(format!("sigma scale matrix: {e}")))?;
        let mf = m as f64;
        let log_norm = dof / 2.0 * log_det_from_cholesky(&scale_chol)
            - dof * mf / 2.0 * std::f64::consts::LN_2
            - ln_multivariate_gamma(m, dof / 2.0);
        Ok(Self {
            scale,
            dof,
            scale_chol,
            log_norm,
        })
    }

    pub fn identity(m: usize) -> Self {
        Self::new(Matrix::identity(m), m as f64 + 4.0).expect("valid default prior")
    }

    pub fn dim(&self) -> usize {
        self.scale.rows()
    }

    /// Log density at `Σ = L L^T` given the lower Cholesky factor `L`.
    pub fn log_density_chol<T: Real>(&self, l: &Matrix<T>) -> T {
        let m = self.dim() as f64;
        // tr(Ψ Σ^{-1}) = ||L^{-1} C||_F^2 with Ψ = C C^T.
        let w = Matrix::solve_lower(l, &Matrix::from_f64(&self.scale_chol));
        let mut tr = T::zero();
        for v in w.as_slice() {
            tr += v.square();
        }
        log_det_from_cholesky(l) * (-(self.dof + m + 1.0) / 2.0) - tr * 0.5 + self.log_norm
    }

    /// Inverse Wishart log density.
    pub fn log_density(&self, sigma: &Matrix<f64>) -> Result<f64> {
        if sigma.rows() != self.dim() || !sigma.is_square() {
            return Err(Error::Dimension("sigma does not match the prior dimension".into()));
        }
        Ok(self.log_density_chol(&sigma.cholesky()?))
    }
}

/// Log inverse Wishart density of `sigma`; a free-function form of `SigmaPrior::log_density`.
pub fn log_prior_sigma(sigma: &Matrix<f64>, prior: &SigmaPrior) -> Result<f64> {
    prior.log_density(sigma)
}

/// Precisions of the shrinkage prior on the natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MgpState {
    /// `λ_{s,ij}`, one `m x m` matrix per lag.
    pub lambda: Vec<Matrix<f64>>,
    /// `δ_1..δ_p`.
    pub delta: Vec<f64>,
}

impl MgpState {
    /// `τ_s = δ_1 ⋯ δ_s`.
    pub fn tau(&self) -> Vec<f64> {
        self.delta
            .iter()
            .scan(1.0, |acc, d| {
                *acc *= d;
                Some(*acc)
            })
            .collect()
    }
}

fn ln_gamma_pdf<T: Real>(log_x: T, x: T, shape: f64, rate: f64, ln_gamma_shape: f64) -> T {
    log_x * (shape - 1.0) - x * rate + (shape * rate.ln() - ln_gamma_shape)
}

/// Shrinkage prior evaluated from log precisions; the sampler's form.
pub fn log_prior_mgp_log<T: Real>(a: &[Matrix<T>], log_lambda: &[Matrix<T>], log_delta: &[T], hp: &MgpHyperParams) -> T {
    let half = hp.a / 2.0;
    let lg_half = ln_gamma(half);
    let lg_a1 = ln_gamma(hp.a1);
    let lg_a2 = ln_gamma(hp.a2);
    let mut total = T::zero();
    let mut log_tau = T::zero();
    for (s, (a_s, ll_s)) in a.iter().zip(log_lambda).enumerate() {
        let ld = log_delta[s];
        let delta = ld.exp();
        let (shape, lg) = if s == 0 { (hp.a1, lg_a1) } else { (hp.a2, lg_a2) };
        total += ln_gamma_pdf(ld, delta, shape, 1.0, lg);
        log_tau += ld;
        let tau = log_tau.exp();
        for (&x, &ll) in a_s.as_slice().iter().zip(ll_s.as_slice()) {
            let lambda = ll.exp();
            total += (ll + log_tau) * 0.5 - lambda * tau * x.square() * 0.5 - 0.5 * LN_2PI;
            total += ln_gamma_pdf(ll, lambda, half, half, lg_half);
        }
    }
    total
}

/// Shrinkage prior at natural-scale precisions.
pub fn log_prior_mgp(a: &[Matrix<f64>], state: &MgpState, hp: &MgpHyperParams) -> Result<f64> {
    if a.len() != state.lambda.len() || a.len() != state.delta.len() {
        return Err(Error::Dimension("lag counts of A, lambda and delta differ".into()));
    }
    let positive = state.delta.iter().all(|&d| d > 0.0)
        && state.lambda.iter().all(|l| l.as_slice().iter().all(|&v| v > 0.0));
    if !positive {
        return Err(Error::Usage("precisions must be positive".into()));
    }
    let log_lambda: Vec<Matrix<f64>> = state.lambda.iter().map(|l| l.map(|v| v.ln())).collect();
    let log_delta: Vec<f64> = state.delta.iter().map(|d| d.ln()).collect();
    Ok(log_prior_mgp_log(a, &log_lambda, &log_delta, hp))
}

/// An `n x m` series in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Matrix<f64>,
    pub names: Vec<String>,
    /// Column means removed on ingestion (zeros if the data came centered).
    pub means: Vec<f64>,
    /// Time between rows.
    pub time_step: f64,
    pub time_unit: String,
}

impl Dataset {
    /// Wrap data that is already mean-zero.
    pub fn new(y: Matrix<f64>) -> Self {
        let m = y.cols();
        Self {
            names: (1..=m).map(|i| format!("y{i}")).collect(),
            means: vec![0.0; m],
            y,
            time_step: 1.0,
            time_unit: "samples".into(),
        }
    }

    /// Subtract and record the column means.
    pub fn centered(y: Matrix<f64>) -> Self {
        let (n, m) = (y.rows(), y.cols());
        let means: Vec<f64> = (0..m)
            .map(|c| (0..n).map(|r| y[(r, c)]).sum::<f64>() / n as f64)
            .collect();
        let centered = Matrix::from_fn(n, m, |r, c| y[(r, c)] - means[c]);
        Self {
            means,
            ..Self::new(centered)
        }
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.m());
        self.names = names;
        self
    }

    pub fn with_time_step(mut self, step: f64, unit: impl Into<String>) -> Self {
        self.time_step = step;
        self.time_unit = unit.into();
        self
    }

    pub fn n(&self) -> usize {
        self.y.rows()
    }

    pub fn m(&self) -> usize {
        self.y.cols()
    }

    /// Observation at 0-based time `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        let m = self.m();
        &self.y.as_slice()[t * m..(t + 1) * m]
    }

    /// Largest absolute column mean of the stored data.
    pub fn max_abs_mean(&self) -> f64 {
        let n = self.n() as f64;
        (0..self.m())
            .map(|c| ((0..self.n()).map(|r| self.y[(r, c)]).sum::<f64>() / n).abs())
            .fold(0.0, f64::max)
    }
}

/// Direct evaluation of the exact likelihood, one conditional density per
/// time point. `model` may have any order up to `p_max`.
pub fn log_likelihood(data: &Dataset, model: &VarModel<f64>, p_max: usize) -> Result<f64> {
    let (n, m) = (data.n(), data.m());
    if n < p_max {
        return Err(Error::Usage(format!("need at least p_max = {p_max} observations, have {n}")));
    }
    if model.order() > p_max {
        return Err(Error::Usage("model order exceeds p_max".into()));
    }
    if model.dim() != m {
        return Err(Error::Dimension("model and data dimensions differ".into()));
    }
    let g = initial_variance(model, p_max)?;
    let x0: Vec<f64> = (0..p_max).rev().flat_map(|t| data.row(t).to_vec()).collect();
    let mut total = mvn_logpdf(&x0, &vec![0.0; m * p_max], &g)?;
    for t in p_max..n {
        let mut mean = vec![0.0; m];
        for (i, phi) in model.phi.iter().enumerate() {
            let prev = phi.matvec(data.row(t - 1 - i));
            mean.iter_mut().zip(prev).for_each(|(a, b)| *a += b);
        }
        total += mvn_logpdf(data.row(t), &mean, &model.sigma)?;
    }
    Ok(total)
}

/// Sufficient statistics of the conditional part of the likelihood.
#[derive(Debug, Clone)]
struct LikelihoodStats {
    /// `(y_{p}, ..., y_1)` stacked newest first.
    x0: Matrix<f64>,
    /// Σ_t x_t x_t^T with `x_t = (y_{t-1}, ..., y_{t-p})`.
    sxx: Matrix<f64>,
    /// Σ_t x_t y_t^T.
    sxy: Matrix<f64>,
    /// Σ_t y_t y_t^T.
    syy: Matrix<f64>,
    count: usize,
}

impl LikelihoodStats {
    fn new(data: &Dataset, p: usize) -> Self {
        let (n, m) = (data.n(), data.m());
        let x0: Vec<f64> = (0..p).rev().flat_map(|t| data.row(t).to_vec()).collect();
        let mut sxx = Matrix::zeros(m * p, m * p);
        let mut sxy = Matrix::zeros(m * p, m);
        let mut syy = Matrix::zeros(m, m);
        for t in p..n {
            let x: Vec<f64> = (1..=p).flat_map(|i| data.row(t - i).to_vec()).collect();
            let y = data.row(t);
            for r in 0..m * p {
                for c in 0..m * p {
                    sxx[(r, c)] += x[r] * x[c];
                }
                for c in 0..m {
                    sxy[(r, c)] += x[r] * y[c];
                }
            }
            for r in 0..m {
                for c in 0..m {
                    syy[(r, c)] += y[r] * y[c];
                }
            }
        }
        Self {
            x0: Matrix::from_vec(m * p, 1, x0),
            sxx,
            sxy,
            syy,
            count: n - p,
        }
    }

    fn evaluate<T: Real>(&self, model: &VarModel<T>, sigma_chol: &Matrix<T>) -> T {
        let m = sigma_chol.rows();
        let p = model.order();
        let g = match build_initial_variance(&model.gamma, p).and_then(|g| g.cholesky()) {
            Ok(l) => l,
            Err(_) => return T::cst(f64::NEG_INFINITY),
        };
        let w = Matrix::solve_lower(&g, &Matrix::from_f64(&self.x0));
        let mut quad = T::zero();
        for v in w.as_slice() {
            quad += v.square();
        }
        let initial = (log_det_from_cholesky(&g) + quad) * -0.5 - 0.5 * (m * p) as f64 * LN_2PI;

        let phi = Matrix::from_fn(m, m * p, |r, c| model.phi[c / m][(r, c % m)]);
        let phi_sxy = phi.matmul(&Matrix::from_f64(&self.sxy));
        let quad_form = phi.matmul(&Matrix::from_f64(&self.sxx)).matmul_t(&phi);
        let resid = Matrix::from_f64(&self.syy)
            .sub(&phi_sxy)
            .sub(&phi_sxy.transpose())
            .add(&quad_form);
        let sigma_inv = spd_inverse_from_cholesky(sigma_chol);
        let mut tr = T::zero();
        for (a, b) in sigma_inv.as_slice().iter().zip(resid.as_slice()) {
            tr += *a * *b;
        }
        let k = self.count as f64;
        let conditional = log_det_from_cholesky(sigma_chol) * (-k / 2.0) - tr * 0.5 - k * m as f64 / 2.0 * LN_2PI;
        initial + conditional
    }
}

/// Parameter blocks of the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    A,
    LogLambda,
    LogDelta,
    Chol,
}

pub const DEFAULT_BLOCK_ORDER: [Block; 4] = [Block::A, Block::LogLambda, Block::LogDelta, Block::Chol];

/// Unconstrained parameters in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedParams<T = f64> {
    pub a: Vec<Matrix<T>>,
    pub log_lambda: Vec<Matrix<T>>,
    pub log_delta: Vec<T>,
    /// Lower triangle of the Cholesky factor of Σ, row by row, with the
    /// diagonal on the log scale.
    pub chol: Vec<T>,
}

impl<T: Real> UnconstrainedParams<T> {
    pub fn dim(&self) -> usize {
        self.a.first().map_or(0, |a| a.rows())
    }

    /// Lower Cholesky factor `L` of Σ.
    pub fn cholesky_factor(&self) -> Matrix<T> {
        let m = self.dim();
        let mut l = Matrix::zeros(m, m);
        let mut k = 0;
        for i in 0..m {
            for j in 0..=i {
                l[(i, j)] = if i == j { self.chol[k].exp() } else { self.chol[k] };
                k += 1;
            }
        }
        l
    }

    pub fn sigma(&self) -> Matrix<T> {
        let l = self.cholesky_factor();
        l.matmul_t(&l).symmetrize()
    }

    /// `log |det J|` of the map to (λ, δ, Σ).
    pub fn log_jacobian(&self) -> T {
        let m = self.dim();
        let mut total = T::cst(m as f64 * std::f64::consts::LN_2);
        for ll in &self.log_lambda {
            for &v in ll.as_slice() {
                total += v;
            }
        }
        for &v in &self.log_delta {
            total += v;
        }
        let mut k = 0;
        for i in 0..m {
            // 1-based row i + 1 carries exponent m - (i + 1) + 2.
            total += self.chol[k + i] * (m - i + 1) as f64;
            k += i + 1;
        }
        total
    }
}

impl UnconstrainedParams<f64> {
    pub fn mgp_state(&self) -> MgpState {
        MgpState {
            lambda: self.log_lambda.iter().map(|l| l.map(|v| v.exp())).collect(),
            delta: self.log_delta.iter().map(|d| d.exp()).collect(),
        }
    }

    /// Build from Σ and natural-scale precisions.
    pub fn from_natural(a: Vec<Matrix<f64>>, state: &MgpState, sigma: &Matrix<f64>) -> Result<Self> {
        let l = sigma.cholesky()?;
        let m = sigma.rows();
        let mut chol = Vec::with_capacity(m * (m + 1) / 2);
        for i in 0..m {
            for j in 0..=i {
                chol.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
            }
        }
        Ok(Self {
            a,
            log_lambda: state.lambda.iter().map(|l| l.map(|v| v.ln())).collect(),
            log_delta: state.delta.iter().map(|d| d.ln()).collect(),
            chol,
        })
    }
}

/// Placement of the blocks in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    m: usize,
    p_max: usize,
    order: [Block; 4],
}

impl ParamLayout {
    pub fn new(m: usize, p_max: usize) -> Self {
        Self {
            m,
            p_max,
            order: DEFAULT_BLOCK_ORDER,
        }
    }

    pub fn with_order(m: usize, p_max: usize, order: [Block; 4]) -> Result<Self> {
        for b in DEFAULT_BLOCK_ORDER {
            if order.iter().filter(|&&x| x == b).count() != 1 {
                return Err(Error::Usage(format!("block order must list every block once: {order:?}")));
            }
        }
        Ok(Self { m, p_max, order })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p_max(&self) -> usize {
        self.p_max
    }

    pub fn block_len(&self, b: Block) -> usize {
        let (m, p) = (self.m, self.p_max);
        match b {
            Block::A | Block::LogLambda => p * m * m,
            Block::LogDelta => p,
            Block::Chol => m * (m + 1) / 2,
        }
    }

    pub fn offset(&self, b: Block) -> usize {
        self.order
            .iter()
            .take_while(|&&x| x != b)
            .map(|&x| self.block_len(x))
            .sum()
    }

    pub fn dim(&self) -> usize {
        DEFAULT_BLOCK_ORDER.iter().map(|&b| self.block_len(b)).sum()
    }

    fn block_names(&self, b: Block) -> Vec<String> {
        let (m, p) = (self.m, self.p_max);
        let lagged = |prefix: &str| {
            let mut v = Vec::with_capacity(p * m * m);
            for s in 1..=p {
                for i in 1..=m {
                    for j in 1..=m {
                        v.push(format!("{prefix}[{s},{i},{j}]"));
                    }
                }
            }
            v
        };
        match b {
            Block::A => lagged("a"),
            Block::LogLambda => lagged("log_lambda"),
            Block::LogDelta => (1..=p).map(|s| format!("log_delta[{s}]")).collect(),
            Block::Chol => (1..=m)
                .flat_map(|i| (1..=i).map(move |j| format!("L[{i},{j}]")))
                .collect(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.order.iter().flat_map(|&b| self.block_names(b)).collect()
    }

    pub fn unpack<T: Real>(&self, theta: &[T]) -> UnconstrainedParams<T> {
        assert_eq!(theta.len(), self.dim(), "parameter vector has the wrong length");
        let (m, p) = (self.m, self.p_max);
        let block = |b: Block| &theta[self.offset(b)..self.offset(b) + self.block_len(b)];
        let lagged = |xs: &[T]| -> Vec<Matrix<T>> {
            xs.chunks(m * m)
                .map(|c| Matrix::from_vec(m, m, c.to_vec()))
                .collect()
        };
        let out = UnconstrainedParams {
            a: lagged(block(Block::A)),
            log_lambda: lagged(block(Block::LogLambda)),
            log_delta: block(Block::LogDelta).to_vec(),
            chol: block(Block::Chol).to_vec(),
        };
        debug_assert_eq!(out.a.len(), p);
        out
    }

    pub fn pack(&self, params: &UnconstrainedParams<f64>) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        let mut put = |b: Block, values: Vec<f64>| {
            assert_eq!(values.len(), self.block_len(b), "{b:?} block has the wrong size");
            let off = self.offset(b);
            theta[off..off + values.len()].copy_from_slice(&values);
        };
        put(Block::A, params.a.iter().flat_map(|a| a.as_slice().to_vec()).collect());
        put(
            Block::LogLambda,
            params.log_lambda.iter().flat_map(|a| a.as_slice().to_vec()).collect(),
        );
        put(Block::LogDelta, params.log_delta.clone());
        put(Block::Chol, params.chol.clone());
        theta
    }
}

/// Log posterior split into its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorParts<T = f64> {
    pub prior_mgp: T,
    pub prior_sigma: T,
    pub likelihood: T,
    pub jacobian: T,
}

impl<T: Real> PosteriorParts<T> {
    pub fn total(&self) -> T {
        self.prior_mgp + self.prior_sigma + self.likelihood + self.jacobian
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("prior", self.prior_mgp),
            ("prior", self.prior_sigma),
            ("likelihood", self.likelihood),
            ("jacobian", self.jacobian),
        ]
        .into_iter()
        .find(|(_, v)| !v.value().is_finite())
        .map(|(name, _)| name)
    }
}

/// The posterior for one dataset and configuration.
#[derive(Debug, Clone)]
pub struct Model {
    layout: ParamLayout,
    hp: MgpHyperParams,
    sigma_prior: SigmaPrior,
    stats: LikelihoodStats,
    prior_only: bool,
}

impl Model {
    pub fn new(data: &Dataset, cfg: &ModelConfig) -> Result<Self> {
        Self::with_layout(data, cfg, ParamLayout::new(data.m(), cfg.p_max))
    }

    pub fn with_layout(data: &Dataset, cfg: &ModelConfig, layout: ParamLayout) -> Result<Self> {
        let m = data.m();
        cfg.validate(m)?;
        if layout.m() != m || layout.p_max() != cfg.p_max {
            return Err(Error::Dimension("layout does not match the data".into()));
        }
        if data.n() < cfg.p_max {
            return Err(Error::Usage(format!(
                "need at least p_max = {} observations, have {}",
                cfg.p_max,
                data.n()
            )));
        }
        if !data.y.is_finite() {
            return Err(Error::Usage("data contain non-finite values".into()));
        }
        Ok(Self {
            stats: LikelihoodStats::new(data, cfg.p_max),
            sigma_prior: cfg.sigma_prior(m)?,
            hp: cfg.mgp,
            prior_only: cfg.prior_only,
            layout,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn m(&self) -> usize {
        self.layout.m()
    }

    pub fn p_max(&self) -> usize {
        self.layout.p_max()
    }

    pub fn log_posterior_parts<T: Real>(&self, theta: &[T]) -> PosteriorParts<T> {
        let params = self.layout.unpack(theta);
        let l = params.cholesky_factor();
        let likelihood = if self.prior_only {
            T::zero()
        } else {
            match a_to_var(&l.matmul_t(&l).symmetrize(), &params.a) {
                Ok((model, _)) => self.stats.evaluate(&model, &l),
                Err(_) => T::cst(f64::NEG_INFINITY),
            }
        };
        PosteriorParts {
            prior_mgp: log_prior_mgp_log(&params.a, &params.log_lambda, &params.log_delta, &self.hp),
            prior_sigma: self.sigma_prior.log_density_chol(&l),
            likelihood,
            jacobian: params.log_jacobian(),
        }
    }

    pub fn log_posterior<T: Real>(&self, theta: &[T]) -> T {
        self.log_posterior_parts(theta).total()
    }

    /// Log posterior with its gradient; reports where a non-finite value
    /// first arose.
    pub fn log_posterior_grad(&self, ctx: &mut GradientContext, theta: &[f64], grad: &mut [f64]) -> GradientReport {
        let mut component = None;
        let (value, site) = ctx.value_and_grad(theta, grad, |x| {
            let parts = self.log_posterior_parts(x);
            component = parts.non_finite_component();
            parts.total()
        });
        GradientReport {
            value,
            component,
            site,
        }
    }

    /// Natural-scale quantities of one draw.
    pub fn draw(&self, theta: &[f64]) -> Result<Draw> {
        let params = self.layout.unpack(theta);
        let sigma = params.sigma();
        let pacf = a_to_pacf(&params.a)?;
        let (var, _) = a_to_var(&sigma, &params.a)?;
        Ok(Draw {
            state: params.mgp_state(),
            pacf,
            var,
            params,
        })
    }

    /// A sampler target owning its own differentiation context.
    pub fn density(self: &Arc<Self>) -> PosteriorDensity {
        PosteriorDensity {
            model: Arc::clone(self),
            ctx: GradientContext::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub value: f64,
    /// Term that went non-finite.
    pub component: Option<&'static str>,
    /// First non-finite intermediate on the tape.
    pub site: Option<NonFiniteSite>,
}

/// One posterior draw in natural parameters.
#[derive(Debug, Clone)]
pub struct Draw {
    pub params: UnconstrainedParams<f64>,
    pub state: MgpState,
    pub pacf: Vec<Matrix<f64>>,
    pub var: VarModel<f64>,
}

impl Draw {
    pub fn is_stationary(&self) -> bool {
        check_stationary(&self.var.phi).0
    }
}

/// [`LogDensity`] adapter for the sampler. Clones get a fresh context, so
/// each chain differentiates independently.
#[derive(Debug)]
pub struct PosteriorDensity {
    model: Arc<Model>,
    ctx: GradientContext,
}

impl Clone for PosteriorDensity {
    fn clone(&self) -> Self {
        Self {
            model: Arc::clone(&self.model),
            ctx: GradientContext::new(),
        }
    }
}

impl LogDensity for PosteriorDensity {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density_and_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let report = self.model.log_posterior_grad(&mut self.ctx, x, grad);
        if report.value.is_finite() && grad.iter().all(|g| g.is_finite()) {
            report.value
        } else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            f64::NEG_INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::tests::{random_matrix, random_spd};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn scalar(v: f64) -> Matrix<f64> {
        Matrix::from_vec(1, 1, vec![v])
    }

    fn ln_gam(x: f64, shape: f64, rate: f64) -> f64 {
        shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
    }

    #[test]
    fn mgp_prior_at_unit_precisions() {
        let state = MgpState {
            lambda: vec![scalar(1.0)],
            delta: vec![1.0],
        };
        let v = log_prior_mgp(&[scalar(0.0)], &state, &MgpHyperParams::default()).unwrap();
        let expected = -0.5 * LN_2PI + ln_gam(1.0, 3.0, 3.0) + ln_gam(1.0, 2.5, 1.0);
        assert!((v - expected).abs() < 1e-13);
    }

    #[test]
    fn mgp_normal_term_responds_to_lambda() {
        let hp = MgpHyperParams::default();
        let at = |lam: f64| {
            let state = MgpState {
                lambda: vec![scalar(lam)],
                delta: vec![1.0],
            };
            log_prior_mgp(&[scalar(0.5)], &state, &hp).unwrap() - ln_gam(lam, 3.0, 3.0)
        };
        let change = at(4.0) - at(1.0);
        let expected = 0.5 * 4f64.ln() - 0.5 * (4.0 - 1.0) * 0.25;
        assert!((change - expected).abs() < 1e-13);
    }

    #[test]
    fn mgp_rejects_nonpositive_precision() {
        let state = MgpState {
            lambda: vec![scalar(0.0)],
            delta: vec![1.0],
        };
        assert!(log_prior_mgp(&[scalar(0.0)], &state, &MgpHyperParams::default()).is_err());
    }

    #[test]
    fn tau_prior_mean() {
        assert!((MgpHyperParams::default().expected_tau(3) - 22.5).abs() < 1e-12);
        let st = MgpState {
            lambda: vec![],
            delta: vec![2.0, 3.0, 0.5],
        };
        assert_eq!(st.tau(), vec![2.0, 6.0, 3.0]);
    }

    #[test]
    fn inverse_wishart_scalar_reduction() {
        // m = 1 reduces to an inverse gamma with shape dof/2 and scale psi/2.
        let prior = SigmaPrior::new(scalar(1.0), 5.0).unwrap();
        let v = prior.log_density(&scalar(1.0)).unwrap();
        let expected = 2.5 * 0.5f64.ln() - ln_gamma(2.5) - 0.5;
        assert!((v - expected).abs() < 1e-13);
        assert!((v + 2.517_550_821_872_783).abs() < 1e-12);
        // Mode at scale / (dof + 2).
        let mode = 1.0 / 7.0;
        let at = |x: f64| prior.log_density(&scalar(x)).unwrap();
        assert!(at(mode) > at(mode * 1.01) && at(mode) > at(mode * 0.99));
    }

    #[test]
    fn inverse_wishart_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let psi = random_spd(&mut rng, 3);
        let sigma = random_spd(&mut rng, 3);
        let prior = SigmaPrior::new(psi.clone(), 7.5).unwrap();
        let (m, nu) = (3.0, 7.5);
        let dp = crate::linalg::to_dmatrix(&psi);
        let ds = crate::linalg::to_dmatrix(&sigma);
        let tr = (&dp * ds.clone().try_inverse().unwrap()).trace();
        let lmg = m * (m - 1.0) / 4.0 * std::f64::consts::PI.ln()
            + ln_gamma(nu / 2.0)
            + ln_gamma(nu / 2.0 - 0.5)
            + ln_gamma(nu / 2.0 - 1.0);
        let expected = nu / 2.0 * dp.determinant().ln() - nu * m / 2.0 * 2f64.ln() - lmg
            - (nu + m + 1.0) / 2.0 * ds.determinant().ln()
            - 0.5 * tr;
        assert!((prior.log_density(&sigma).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn likelihood_examples() {
        let iid = VarModel::from_coefficients(scalar(1.0), vec![scalar(0.0)]).unwrap();
        let data = Dataset::new(Matrix::from_vec(2, 1, vec![0.0, 0.0]));
        assert!((log_likelihood(&data, &iid, 1).unwrap() + 1.837_877_066_409_345_5).abs() < 1e-12);

        let ar = VarModel::from_coefficients(scalar(1.0), vec![scalar(0.5)]).unwrap();
        let data = Dataset::new(Matrix::from_vec(2, 1, vec![1.0, 1.0]));
        let expected = mvn_logpdf(&[1.0], &[0.0], &scalar(4.0 / 3.0)).unwrap()
            + mvn_logpdf(&[1.0], &[0.5], &scalar(1.0)).unwrap();
        assert!((log_likelihood(&data, &ar, 1).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn likelihood_rejects_short_series() {
        let ar = VarModel::from_coefficients(scalar(1.0), vec![scalar(0.5)]).unwrap();
        let data = Dataset::new(Matrix::from_vec(1, 1, vec![1.0]));
        assert!(matches!(log_likelihood(&data, &ar, 2), Err(Error::Usage(_))));
    }

    fn random_theta(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
        (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn random_data(rng: &mut impl Rng, n: usize, m: usize) -> Dataset {
        Dataset::new(random_matrix(rng, n, m))
    }

    #[test]
    fn sufficient_statistics_agree_with_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for (m, p) in [(1, 1), (2, 3), (3, 2)] {
            let data = random_data(&mut rng, 30, m);
            let cfg = ModelConfig {
                p_max: p,
                ..ModelConfig::default()
            };
            let model = Model::new(&data, &cfg).unwrap();
            let theta = random_theta(&mut rng, model.dim(), 0.5);
            let draw = model.draw(&theta).unwrap();
            let direct = log_likelihood(&data, &draw.var, p).unwrap();
            let fast = model.log_posterior_parts(&theta).likelihood;
            assert!((direct - fast).abs() < 1e-9 * direct.abs().max(1.0), "m={m} p={p}: {direct} vs {fast}");
        }
    }

    #[test]
    fn parts_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data = random_data(&mut rng, 40, 2);
        let cfg = ModelConfig {
            p_max: 3,
            ..ModelConfig::default()
        };
        let model = Model::new(&data, &cfg).unwrap();
        for _ in 0..20 {
            let theta = random_theta(&mut rng, model.dim(), 0.7);
            let parts = model.log_posterior_parts(&theta);
            let sum = parts.prior_mgp + parts.prior_sigma + parts.likelihood + parts.jacobian;
            assert!((model.log_posterior(&theta) - sum).abs() <= 1e-12 * sum.abs());
        }
    }

    #[test]
    fn gradient_value_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let data = random_data(&mut rng, 25, 2);
        let cfg = ModelConfig {
            p_max: 2,
            ..ModelConfig::default()
        };
        let model = Model::new(&data, &cfg).unwrap();
        let theta = random_theta(&mut rng, model.dim(), 0.5);
        let mut ctx = GradientContext::new();
        let mut grad = vec![0.0; model.dim()];
        let report = model.log_posterior_grad(&mut ctx, &theta, &mut grad);
        assert_eq!(report.value.to_bits(), model.log_posterior(&theta).to_bits());
        assert!(report.component.is_none() && report.site.is_none());
    }

    #[test]
    fn pack_unpack_roundtrip_and_names() {
        let layout = ParamLayout::new(2, 3);
        assert_eq!(layout.dim(), 3 * 4 * 2 + 3 + 3);
        let names = layout.names();
        assert_eq!(names[0], "a[1,1,1]");
        assert_eq!(names[1], "a[1,1,2]");
        assert_eq!(names[12], "log_lambda[1,1,1]");
        assert_eq!(names[24], "log_delta[1]");
        assert_eq!(&names[27..], &["L[1,1]", "L[2,1]", "L[2,2]"]);
        let theta: Vec<f64> = (0..layout.dim()).map(|i| i as f64 * 0.1 - 1.0).collect();
        assert_eq!(layout.pack(&layout.unpack(&theta)), theta);
    }

    #[test]
    fn block_order_does_not_change_the_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let data = random_data(&mut rng, 30, 2);
        let cfg = ModelConfig {
            p_max: 2,
            ..ModelConfig::default()
        };
        let base = Model::new(&data, &cfg).unwrap();
        let order = [Block::Chol, Block::LogDelta, Block::A, Block::LogLambda];
        let permuted = Model::with_layout(&data, &cfg, ParamLayout::with_order(2, 2, order).unwrap()).unwrap();
        let theta = random_theta(&mut rng, base.dim(), 0.5);
        let params = base.layout().unpack(&theta);
        let theta2 = permuted.layout().pack(&params);
        assert_ne!(theta, theta2);
        assert_eq!(base.log_posterior(&theta), permuted.log_posterior(&theta2));
        assert!(ParamLayout::with_order(2, 2, [Block::A, Block::A, Block::LogDelta, Block::Chol]).is_err());
    }

    #[test]
    fn jacobian_matches_log_determinant_of_the_sigma_map() {
        // Finite-difference Jacobian of chol-params -> vech(Σ) for m = 2.
        let p = UnconstrainedParams {
            a: vec![Matrix::<f64>::zeros(2, 2)],
            log_lambda: vec![Matrix::zeros(2, 2)],
            log_delta: vec![0.0],
            chol: vec![0.3, -0.7, -0.2],
        };
        let vech = |c: &[f64]| {
            let q = UnconstrainedParams { chol: c.to_vec(), ..p.clone() };
            let s = q.sigma();
            vec![s[(0, 0)], s[(1, 0)], s[(1, 1)]]
        };
        let mut jac = nalgebra::DMatrix::<f64>::zeros(3, 3);
        for k in 0..3 {
            let h = 1e-6;
            let mut cp = p.chol.clone();
            let mut cm = p.chol.clone();
            cp[k] += h;
            cm[k] -= h;
            let (fp, fm) = (vech(&cp), vech(&cm));
            for r in 0..3 {
                jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        // p.log_jacobian() also counts log λ and log δ, which are zero here.
        assert!((jac.determinant().abs().ln() - p.log_jacobian()).abs() < 1e-7);
    }

    #[test]
    fn failed_recursion_gives_negative_infinity() {
        let data = Dataset::new(Matrix::from_vec(4, 1, vec![0.1, -0.2, 0.3, 0.0]));
        let cfg = ModelConfig {
            p_max: 1,
            ..ModelConfig::default()
        };
        let model = Model::new(&data, &cfg).unwrap();
        // An overflowing A breaks the recursion.
        let theta = vec![1e200, 0.0, 0.0, 0.0];
        let parts = model.log_posterior_parts(&theta);
        assert_eq!(parts.likelihood, f64::NEG_INFINITY);
        assert_eq!(parts.non_finite_component(), Some("prior"));
        let mut target = Arc::new(model).density();
        let mut grad = vec![0.0; 4];
        assert_eq!(target.log_density_and_grad(&theta, &mut grad), f64::NEG_INFINITY);
    }

    #[test]
    fn likelihood_is_invariant_to_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let sigma = random_spd(&mut rng, 3);
        let a: Vec<_> = (0..2).map(|_| random_matrix(&mut rng, 3, 3)).collect();
        let (model, _) = a_to_var(&sigma, &a).unwrap();
        let data = random_data(&mut rng, 20, 3);
        let perm = [2, 0, 1];
        let pm = |x: &Matrix<f64>| Matrix::from_fn(3, 3, |r, c| x[(perm[r], perm[c])]);
        let permuted = VarModel::from_coefficients(pm(&model.sigma), model.phi.iter().map(pm).collect()).unwrap();
        let pdata = Dataset::new(Matrix::from_fn(20, 3, |t, c| data.y[(t, perm[c])]));
        let a = log_likelihood(&data, &model, 2).unwrap();
        let b = log_likelihood(&pdata, &permuted, 2).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs());
    }
}
