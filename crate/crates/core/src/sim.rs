//! Simulation: random stationary models, exact-start series, prior draws
//! and seeded study grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use varorder_nuts::{Diagnostics, PosteriorDraws, SamplerConfig};

use crate::analysis::{order_posterior, OrderPosterior};
use crate::error::{Error, Result};
use crate::fit::fit;
use crate::linalg::Matrix;
use crate::model::{Dataset, MgpState, ModelConfig, SigmaPrior};
use crate::reparam::{a_to_pacf, initial_variance, pacf_to_var, VarModel};

/// How the first observations are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// Draw `(y_1, ..., y_p)` from the stationary distribution.
    #[default]
    Exact,
    /// Start from zeros and discard this many initial values.
    BurnIn(usize),
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seed determined by `seed` and a path of labels.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `A_1..A_p` with iid standard normal entries, mapped to a stationary
/// VAR with `Σ = I`.
pub fn random_model(m: usize, p: usize, seed: u64) -> Result<(Vec<Matrix<f64>>, VarModel<f64>)> {
    if m == 0 || p == 0 {
        return Err(Error::Usage("m and p must be positive".into()));
    }
    let mut r = rng(seed);
    let a: Vec<Matrix<f64>> = (0..p).map(|_| normal_matrix(&mut r, m, m)).collect();
    let (model, _) = pacf_to_var(&Matrix::identity(m), &a_to_pacf(&a)?)?;
    Ok((a, model))
}

/// Simulate `n` observations of a stationary VAR.
pub fn simulate(model: &VarModel<f64>, n: usize, seed: u64, start: Start) -> Result<Dataset> {
    let (m, p) = (model.dim(), model.order());
    if n < p {
        return Err(Error::Usage(format!("n = {n} is smaller than the order {p}")));
    }
    let mut r = rng(seed);
    let noise_chol = model.sigma.cholesky()?;
    let draw_noise = |r: &mut ChaCha8Rng| {
        let z: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
        noise_chol.matvec(&z)
    };
    let (target, mut y): (usize, Vec<Vec<f64>>) = match start {
        Start::Exact => {
            let g_chol = initial_variance(model, p)?.cholesky()?;
            let z: Vec<f64> = (0..m * p).map(|_| r.sample(StandardNormal)).collect();
            let x0 = g_chol.matvec(&z);
            // x0 stacks (y_p, ..., y_1).
            (n, (0..p).rev().map(|i| x0[i * m..(i + 1) * m].to_vec()).collect())
        }
        Start::BurnIn(b) => (p + b + n, vec![vec![0.0; m]; p]),
    };
    while y.len() < target {
        let t = y.len();
        let mut next = draw_noise(&mut r);
        for (i, phi) in model.phi.iter().enumerate() {
            for (a, b) in next.iter_mut().zip(phi.matvec(&y[t - 1 - i])) {
                *a += b;
            }
        }
        y.push(next);
    }
    let skip = target - n;
    let rows: Vec<f64> = y[skip..].iter().flatten().copied().collect();
    Ok(Dataset::new(Matrix::from_vec(n, m, rows)))
}

/// One draw from the joint prior.
#[derive(Debug, Clone)]
pub struct PriorDraw {
    pub a: Vec<Matrix<f64>>,
    pub state: MgpState,
    pub sigma: Matrix<f64>,
}

/// Inverse Wishart draw by the Bartlett decomposition of its inverse.
pub fn sample_inverse_wishart(prior: &SigmaPrior, rng: &mut impl Rng) -> Result<Matrix<f64>> {
    let m = prior.dim();
    let c = prior.scale.spd_inverse()?.cholesky()?;
    let mut b = Matrix::zeros(m, m);
    for i in 0..m {
        let chi2 = Gamma::new((prior.dof - i as f64) / 2.0, 2.0)
            .map_err(|e| Error::Usage(format!("inverse Wishart: {e}")))?
            .sample(rng);
        b[(i, i)] = chi2.sqrt();
        for j in 0..i {
            b[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let cb = c.matmul(&b);
    cb.matmul_t(&cb).symmetrize().spd_inverse()
}

fn gamma(shape: f64, rate: f64, rng: &mut impl Rng) -> Result<f64> {
    Ok(Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Usage(format!("gamma({shape}, {rate}): {e}")))?
        .sample(rng))
}

/// Draw `(A, λ, δ, Σ)` from the prior for dimension `m`.
pub fn sample_prior(m: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<PriorDraw> {
    cfg.validate(m)?;
    let hp = cfg.mgp;
    let p = cfg.p_max;
    let mut delta = Vec::with_capacity(p);
    let mut lambda = Vec::with_capacity(p);
    let mut a = Vec::with_capacity(p);
    let mut tau = 1.0;
    for s in 0..p {
        let d = gamma(if s == 0 { hp.a1 } else { hp.a2 }, 1.0, rng)?;
        tau *= d;
        delta.push(d);
        let mut lam = Matrix::zeros(m, m);
        let mut a_s = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let l = gamma(hp.a / 2.0, hp.a / 2.0, rng)?;
                lam[(i, j)] = l;
                let z: f64 = rng.sample(StandardNormal);
                a_s[(i, j)] = z / (l * tau).sqrt();
            }
        }
        lambda.push(lam);
        a.push(a_s);
    }
    Ok(PriorDraw {
        a,
        state: MgpState { lambda, delta },
        sigma: sample_inverse_wishart(&cfg.sigma_prior(m)?, rng)?,
    })
}

/// A simulation study grid; every combination is replicated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyGrid {
    pub m: Vec<usize>,
    pub p: Vec<usize>,
    pub n: Vec<usize>,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub start: Start,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyCell {
    pub m: usize,
    pub p: usize,
    pub n: usize,
    /// 1-based replicate index.
    pub replicate: usize,
    pub index: usize,
}

impl StudyGrid {
    pub fn cells(&self) -> Vec<StudyCell> {
        let mut out = Vec::new();
        for &m in &self.m {
            for &p in &self.p {
                for &n in &self.n {
                    for replicate in 1..=self.replicates {
                        out.push(StudyCell {
                            m,
                            p,
                            n,
                            replicate,
                            index: out.len(),
                        });
                    }
                }
            }
        }
        out
    }

    /// Seed of the cell's true model; shared across `n` so that series
    /// lengths are compared on the same process.
    pub fn model_seed(&self, c: &StudyCell) -> u64 {
        derive_seed(self.seed, &[1, c.m as u64, c.p as u64, c.replicate as u64])
    }

    pub fn data_seed(&self, c: &StudyCell) -> u64 {
        derive_seed(self.seed, &[2, c.m as u64, c.p as u64, c.replicate as u64, c.n as u64])
    }

    pub fn sampler_seed(&self, c: &StudyCell) -> u64 {
        derive_seed(self.seed, &[3, c.m as u64, c.p as u64, c.replicate as u64, c.n as u64])
    }
}

/// Everything a cell produced; handed to the study sink.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub cell: StudyCell,
    pub truth: VarModel<f64>,
    pub a: Vec<Matrix<f64>>,
    pub data: Dataset,
    pub draws: PosteriorDraws,
    pub diagnostics: Diagnostics,
    pub order: OrderPosterior,
}

/// Summary row of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: StudyCell,
    pub modal_order: Option<usize>,
    pub mass_at_true: Option<f64>,
    pub pmf: Option<Vec<f64>>,
    pub threshold: Option<f64>,
    pub max_rhat: Option<f64>,
    pub min_ess_bulk: Option<f64>,
    pub divergences: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub cells: Vec<CellReport>,
    pub failures: usize,
}

fn run_cell(grid: &StudyGrid, cell: StudyCell, model_cfg: &ModelConfig, sampler: &SamplerConfig, beta: f64) -> Result<CellOutput> {
    let (a, truth) = random_model(cell.m, cell.p, grid.model_seed(&cell))?;
    let data = simulate(&truth, cell.n, grid.data_seed(&cell), grid.start)?;
    let cfg = SamplerConfig {
        seed: grid.sampler_seed(&cell),
        ..sampler.clone()
    };
    let result = fit(&data, model_cfg, &cfg)?;
    let order = order_posterior(&result.draws, result.model.layout(), data.n(), beta)?;
    Ok(CellOutput {
        cell,
        truth,
        a,
        data,
        draws: result.draws,
        diagnostics: result.diagnostics,
        order,
    })
}

/// Simulate and fit every cell. Cells run concurrently; a failing cell is
/// recorded in the report and the rest continue. `sink` sees each
/// successful cell's full output (in completion order).
pub fn run_study(
    grid: &StudyGrid,
    model_cfg: &ModelConfig,
    sampler: &SamplerConfig,
    beta: f64,
    sink: &(dyn Fn(&CellOutput) + Sync),
) -> StudyReport {
    let cells: Vec<CellReport> = grid
        .cells()
        .into_par_iter()
        .map(|cell| match run_cell(grid, cell, model_cfg, sampler, beta) {
            Ok(out) => {
                sink(&out);
                CellReport {
                    cell,
                    modal_order: Some(out.order.mode()),
                    mass_at_true: Some(out.order.mass(cell.p)),
                    pmf: Some(out.order.pmf.clone()),
                    threshold: Some(out.order.threshold),
                    max_rhat: Some(out.diagnostics.max_rhat),
                    min_ess_bulk: Some(out.diagnostics.min_ess_bulk),
                    divergences: Some(out.diagnostics.divergences),
                    error: None,
                }
            }
            Err(e) => CellReport {
                cell,
                modal_order: None,
                mass_at_true: None,
                pmf: None,
                threshold: None,
                max_rhat: None,
                min_ess_bulk: None,
                divergences: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let failures = cells.iter().filter(|c| c.error.is_some()).count();
    StudyReport { cells, failures }
}
