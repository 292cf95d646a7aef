//! Stationary reparameterization.
//!
//! Unconstrained matrices `A_s` map to partial autocorrelation matrices
//! `P_s = (I + A_s A_s^T)^{-1/2} A_s` (singular values squeezed into `[0, 1)`),
//! and a sequence of such `P_s` together with the innovation variance maps
//! one-to-one onto the stationary region of VAR coefficients. The recursion
//! also yields the autocovariances `Γ_h = E[y_t y_{t-h}^T]` needed by the
//! exact likelihood.

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::linalg::{
    denman_beavers, eigenvalues, solve_discrete_lyapunov, spectral_radius, svd, sym_inv_sqrt,
    sym_sqrt, Matrix, SqrtPair,
};

/// A stationary VAR with its leading autocovariances.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel<T = f64> {
    /// Innovation variance Σ.
    pub sigma: Matrix<T>,
    /// φ_1..φ_p.
    pub phi: Vec<Matrix<T>>,
    /// Γ_0..Γ_{p-1}.
    pub gamma: Vec<Matrix<T>>,
}

/// Forward and backward conditional variances of the recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct StageVariances<T = f64> {
    /// Σ_0..Σ_p.
    pub sigma_fwd: Vec<Matrix<T>>,
    /// Σ*_0..Σ*_p.
    pub sigma_bwd: Vec<Matrix<T>>,
}

impl<T: Real> VarModel<T> {
    pub fn dim(&self) -> usize {
        self.sigma.rows()
    }

    pub fn order(&self) -> usize {
        self.phi.len()
    }

    /// Γ_h for `h` possibly negative, from the stored or extended sequence.
    fn gamma_signed(gamma: &[Matrix<T>], h: isize) -> Matrix<T> {
        if h >= 0 {
            gamma[h as usize].clone()
        } else {
            gamma[(-h) as usize].transpose()
        }
    }

    /// Γ_0..Γ_{count-1}, extending the stored ones through the Yule–Walker
    /// equations `Γ_h = Σ_j φ_j Γ_{h-j}`.
    pub fn autocovariances(&self, count: usize) -> Vec<Matrix<T>> {
        let mut gamma: Vec<Matrix<T>> = self.gamma.iter().take(count).cloned().collect();
        let m = self.dim();
        while gamma.len() < count {
            let h = gamma.len() as isize;
            let mut g = Matrix::zeros(m, m);
            for (j, phi) in self.phi.iter().enumerate() {
                g = g.add(&phi.matmul(&Self::gamma_signed(&gamma, h - j as isize - 1)));
            }
            gamma.push(g);
        }
        gamma
    }
}

impl VarModel<f64> {
    /// Build a model from its coefficients, solving for the autocovariances.
    pub fn from_coefficients(sigma: Matrix<f64>, phi: Vec<Matrix<f64>>) -> Result<Self> {
        let m = sigma.rows();
        if phi.iter().any(|f| f.rows() != m || f.cols() != m) {
            return Err(Error::Dimension("coefficients must be m x m".into()));
        }
        let p = phi.len();
        let mut gamma = Vec::with_capacity(p);
        if p == 0 {
            gamma.push(sigma.clone());
        } else {
            let state = stationary_state_variance(&phi, &sigma)?;
            for h in 0..p {
                gamma.push(state.block(0, h * m, m, m));
            }
        }
        gamma.truncate(p.max(1));
        Ok(Self { sigma, phi, gamma })
    }

    pub fn companion(&self) -> Matrix<f64> {
        companion(&self.phi)
    }
}

/// The `mp x mp` companion matrix of `φ_1..φ_p`.
pub fn companion(phi: &[Matrix<f64>]) -> Matrix<f64> {
    let p = phi.len();
    if p == 0 {
        return Matrix::zeros(0, 0);
    }
    let m = phi[0].rows();
    let mut c = Matrix::zeros(m * p, m * p);
    for (j, f) in phi.iter().enumerate() {
        c.set_block(0, j * m, f);
    }
    for i in m..m * p {
        c[(i, i - m)] = 1.0;
    }
    c
}

/// Stability of a coefficient sequence through its companion matrix.
pub fn check_stationary(phi: &[Matrix<f64>]) -> (bool, f64) {
    if phi.is_empty() {
        return (true, 0.0);
    }
    let radius = spectral_radius(&companion(phi));
    (radius < 1.0, radius)
}

/// Companion eigenvalues, exposed for the latent decomposition.
pub fn companion_eigenvalues(phi: &[Matrix<f64>]) -> Vec<nalgebra::Complex<f64>> {
    eigenvalues(&companion(phi))
}

/// Variance of the stacked state `(y_t, y_{t-1}, ..., y_{t-p+1})` via the
/// discrete Lyapunov equation.
pub fn stationary_state_variance(phi: &[Matrix<f64>], sigma: &Matrix<f64>) -> Result<Matrix<f64>> {
    let m = sigma.rows();
    let p = phi.len();
    let f = companion(phi);
    let mut e = Matrix::zeros(m * p, m * p);
    e.set_block(0, 0, sigma);
    solve_discrete_lyapunov(&f, &e)
}

/// `P_s = (I + A_s A_s^T)^{-1/2} A_s`.
pub fn a_to_pacf<T: Real>(a: &[Matrix<T>]) -> Result<Vec<Matrix<T>>> {
    a.iter()
        .enumerate()
        .map(|(s, a)| {
            let pair = denman_beavers(&a.matmul_t(a).identity_plus()).map_err(|e| at_stage(e, s + 1))?;
            Ok(pair.inv_sqrt.matmul(a))
        })
        .collect()
}

/// `A_s = (I - P_s P_s^T)^{-1/2} P_s`; rejects singular values within
/// `1e-12` of one.
pub fn pacf_to_a(pacf: &[Matrix<f64>]) -> Result<Vec<Matrix<f64>>> {
    pacf.iter()
        .enumerate()
        .map(|(s, p)| {
            let top = svd(p)?.s.first().copied().unwrap_or(0.0);
            if !(top < 1.0 - 1e-12) {
                return Err(Error::SingularValue {
                    stage: s + 1,
                    value: top,
                });
            }
            Ok(sym_inv_sqrt(&p.matmul_t(p).identity_minus())?.matmul(p))
        })
        .collect()
}

fn at_stage(e: Error, stage: usize) -> Error {
    match e {
        Error::NotSpd(msg) => Error::NotSpd(format!("stage {stage}: {msg}")),
        Error::NonFinite(msg) => Error::NonFinite(format!("stage {stage}: {msg}")),
        Error::NoConvergence(msg) => Error::NoConvergence(format!("stage {stage}: {msg}")),
        other => other,
    }
}

/// Per-stage inputs of the recursion: `P`, and `B^{1/2}`, `B^{-1/2}` for
/// `B = I - P P^T`.
struct Stage<T> {
    p: Matrix<T>,
    b_half: Matrix<T>,
    b_inv_half: Matrix<T>,
}

/// Map `(Σ, P_1..P_p)` to the stationary VAR(p) with innovation variance Σ.
pub fn pacf_to_var<T: Real>(sigma: &Matrix<T>, pacf: &[Matrix<T>]) -> Result<(VarModel<T>, StageVariances<T>)> {
    let stages = pacf
        .iter()
        .enumerate()
        .map(|(s, p)| {
            let b = p.matmul_t(p).identity_minus();
            let SqrtPair { sqrt, inv_sqrt, .. } = denman_beavers(&b).map_err(|e| at_stage(e, s + 1))?;
            Ok(Stage {
                p: p.clone(),
                b_half: sqrt,
                b_inv_half: inv_sqrt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    recursion(sigma, stages)
}

/// Same as `pacf_to_var(sigma, a_to_pacf(a))` but with one square root per
/// stage instead of two: `I + A A^T = B^{-1}`, so its root pair gives both
/// `B^{1/2}` and `B^{-1/2}`.
pub fn a_to_var<T: Real>(sigma: &Matrix<T>, a: &[Matrix<T>]) -> Result<(VarModel<T>, StageVariances<T>)> {
    let stages = a
        .iter()
        .enumerate()
        .map(|(s, a)| {
            let SqrtPair { sqrt, inv_sqrt, .. } =
                denman_beavers(&a.matmul_t(a).identity_plus()).map_err(|e| at_stage(e, s + 1))?;
            Ok(Stage {
                p: inv_sqrt.matmul(a),
                b_half: inv_sqrt,
                b_inv_half: sqrt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    recursion(sigma, stages)
}

fn recursion<T: Real>(sigma: &Matrix<T>, stages: Vec<Stage<T>>) -> Result<(VarModel<T>, StageVariances<T>)> {
    let p = stages.len();
    let m = sigma.rows();
    if p == 0 {
        return Err(Error::Usage("at least one lag is required".into()));
    }
    if stages.iter().any(|s| s.p.rows() != m || s.p.cols() != m) {
        return Err(Error::Dimension("partial autocorrelations must be m x m".into()));
    }

    // Backward pass for Σ_p..Σ_0 with their root pairs.
    let mut fwd: Vec<Matrix<T>> = vec![Matrix::zeros(m, m); p + 1];
    let mut fwd_half: Vec<Matrix<T>> = vec![Matrix::zeros(m, m); p];
    let mut fwd_inv_half: Vec<Matrix<T>> = vec![Matrix::zeros(m, m); p];
    fwd[p] = sigma.symmetrize();
    for s in (0..p).rev() {
        let st = &stages[s];
        let c = st.b_half.matmul(&fwd[s + 1]).matmul(&st.b_half);
        let root = denman_beavers(&c).map_err(|e| at_stage(e, s))?;
        let half = st.b_inv_half.matmul(&root.sqrt).matmul(&st.b_inv_half).symmetrize();
        fwd_inv_half[s] = st.b_half.matmul(&root.inv_sqrt).matmul(&st.b_half).symmetrize();
        fwd[s] = half.matmul(&half).symmetrize();
        fwd_half[s] = half;
    }

    // Forward pass for Σ*_0..Σ*_p interleaved with the coefficient updates.
    let mut bwd: Vec<Matrix<T>> = Vec::with_capacity(p + 1);
    bwd.push(fwd[0].clone());
    let mut bwd_half = fwd_half[0].clone();
    let mut bwd_inv_half = fwd_inv_half[0].clone();
    let mut phi: Vec<Matrix<T>> = Vec::new();
    let mut phi_star: Vec<Matrix<T>> = Vec::new();
    let mut gamma: Vec<Matrix<T>> = vec![fwd[0].clone()];
    for s in 0..p {
        let pm = &stages[s].p;
        let lead = fwd_half[s].matmul(pm).matmul(&bwd_inv_half);
        let lead_star = bwd_half.matmul(&pm.transpose()).matmul(&fwd_inv_half[s]);
        let mut next = Vec::with_capacity(s + 1);
        let mut next_star = Vec::with_capacity(s + 1);
        for j in 0..s {
            next.push(phi[j].sub(&lead.matmul(&phi_star[s - 1 - j])));
            next_star.push(phi_star[j].sub(&lead_star.matmul(&phi[s - 1 - j])));
        }
        next.push(lead);
        next_star.push(lead_star);
        phi = next;
        phi_star = next_star;

        let star = bwd_half
            .matmul(&pm.t_matmul(pm).identity_minus())
            .matmul(&bwd_half)
            .symmetrize();
        if s + 1 < p {
            let root = denman_beavers(&star).map_err(|e| at_stage(e, s + 1))?;
            bwd_half = root.sqrt;
            bwd_inv_half = root.inv_sqrt;
            // Γ_{s+1} = Σ_j φ_{s+1,j} Γ_{s+1-j}.
            let mut g = phi[0].matmul(&gamma[s]);
            for j in 1..=s {
                g = g.add(&phi[j].matmul(&gamma[s - j]));
            }
            gamma.push(g);
        }
        bwd.push(star);
    }

    Ok((
        VarModel {
            sigma: fwd[p].clone(),
            phi,
            gamma,
        },
        StageVariances {
            sigma_fwd: fwd,
            sigma_bwd: bwd,
        },
    ))
}

/// Inverse of [`pacf_to_var`]: the Durbin–Levinson recursion driven by the
/// autocovariances of a stationary model.
pub fn var_to_pacf(model: &VarModel<f64>) -> Result<(Matrix<f64>, Vec<Matrix<f64>>)> {
    let p = model.order();
    if p == 0 {
        return Err(Error::Usage("at least one lag is required".into()));
    }
    let (stable, radius) = check_stationary(&model.phi);
    if !stable {
        return Err(Error::NonStationary { radius });
    }
    let base = VarModel::from_coefficients(model.sigma.clone(), model.phi.clone())?;
    let gamma = base.autocovariances(p + 1);

    let mut fwd = gamma[0].clone();
    let mut bwd = gamma[0].clone();
    let mut phi: Vec<Matrix<f64>> = Vec::new();
    let mut phi_star: Vec<Matrix<f64>> = Vec::new();
    let mut pacf = Vec::with_capacity(p);
    for s in 0..p {
        let mut delta = gamma[s + 1].clone();
        for j in 0..s {
            delta = delta.sub(&phi[j].matmul(&gamma[s - j]));
        }
        let fwd_half = sym_sqrt(&fwd).map_err(|e| at_stage(e, s))?;
        let fwd_inv_half = sym_inv_sqrt(&fwd).map_err(|e| at_stage(e, s))?;
        let bwd_half = sym_sqrt(&bwd).map_err(|e| at_stage(e, s))?;
        let bwd_inv_half = sym_inv_sqrt(&bwd).map_err(|e| at_stage(e, s))?;
        let pm = fwd_inv_half.matmul(&delta).matmul(&bwd_inv_half);

        let lead = fwd_half.matmul(&pm).matmul(&bwd_inv_half);
        let lead_star = bwd_half.matmul(&pm.transpose()).matmul(&fwd_inv_half);
        let mut next = Vec::with_capacity(s + 1);
        let mut next_star = Vec::with_capacity(s + 1);
        for j in 0..s {
            next.push(phi[j].sub(&lead.matmul(&phi_star[s - 1 - j])));
            next_star.push(phi_star[j].sub(&lead_star.matmul(&phi[s - 1 - j])));
        }
        next.push(lead);
        next_star.push(lead_star);
        phi = next;
        phi_star = next_star;

        fwd = fwd_half.matmul(&pm.matmul_t(&pm).identity_minus()).matmul(&fwd_half).symmetrize();
        bwd = bwd_half.matmul(&pm.t_matmul(&pm).identity_minus()).matmul(&bwd_half).symmetrize();
        pacf.push(pm);
    }
    Ok((fwd, pacf))
}

/// The `m p_max x m p_max` variance of the stacked initial observations,
/// newest first: block `(i, j)` is `Γ_{j-i}` for `j >= i` and its transpose
/// below the diagonal. This is the stationary variance of the companion
/// state.
pub fn build_initial_variance<T: Real>(gamma: &[Matrix<T>], p_max: usize) -> Result<Matrix<T>> {
    if gamma.len() < p_max {
        return Err(Error::Dimension(format!(
            "need {p_max} autocovariances, have {}",
            gamma.len()
        )));
    }
    let m = gamma[0].rows();
    let mut g = Matrix::zeros(m * p_max, m * p_max);
    for i in 0..p_max {
        for j in i..p_max {
            let blk = &gamma[j - i];
            g.set_block(i * m, j * m, blk);
            if j > i {
                g.set_block(j * m, i * m, &blk.transpose());
            }
        }
    }
    Ok(g.symmetrize())
}

/// [`build_initial_variance`] for a model of any order.
pub fn initial_variance(model: &VarModel<f64>, p_max: usize) -> Result<Matrix<f64>> {
    let (stable, radius) = check_stationary(&model.phi);
    if !stable {
        return Err(Error::NonStationary { radius });
    }
    let g = build_initial_variance(&model.autocovariances(p_max), p_max)?;
    g.cholesky()
        .map_err(|e| Error::NotSpd(format!("initial variance: {e}")))?;
    Ok(g)
}
