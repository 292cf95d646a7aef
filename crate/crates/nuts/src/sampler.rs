use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::adapt::{DualAveraging, WelfordVariance, WindowSchedule};
use crate::draws::{ChainDraws, PosteriorDraws};
use crate::hamiltonian::{leapfrog, DiagMetric, Point};
use crate::{LogDensity, SamplerConfig, SamplerError};

const INIT_ATTEMPTS: usize = 100;

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generalized no-U-turn check on a momentum sum.
fn persists(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn sum_into(out: &mut [f64], a: &[f64], b: &[f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x + y;
    }
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    accept_stat: f64,
    depth: usize,
    n_leapfrog: usize,
    divergent: bool,
    energy: f64,
}

struct Trajectory<'a, D: ?Sized> {
    target: &'a mut D,
    metric: &'a DiagMetric,
    eps: f64,
    max_delta_h: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<D: LogDensity + ?Sized> Trajectory<'_, D> {
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        p_sharp_beg: &mut [f64],
        p_sharp_end: &mut [f64],
        rho: &mut [f64],
        p_beg: &mut [f64],
        p_end: &mut [f64],
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        if depth == 0 {
            leapfrog(self.target, self.metric, z, sign * self.eps);
            self.n_leapfrog += 1;
            let h = z.hamiltonian(self.metric);
            // Written so that an infinite energy also trips the check.
            if !(h - h0 <= self.max_delta_h) {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            self.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.copy_from(z);
            self.metric.sharp(&z.p, p_sharp_beg);
            p_sharp_end.copy_from_slice(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            p_beg.copy_from_slice(&z.p);
            p_end.copy_from_slice(&z.p);
            return !self.divergent;
        }

        let dim = z.q.len();

        let mut lsw_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let valid_init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            &mut lsw_init,
            rng,
        );
        if !valid_init {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        let valid_final = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            &mut lsw_final,
            rng,
        );
        if !valid_final {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            z_propose.copy_from(&z_propose_final);
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if rng.random::<f64>() < accept {
                z_propose.copy_from(&z_propose_final);
            }
        }

        let mut rho_subtree = vec![0.0; dim];
        sum_into(&mut rho_subtree, &rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }

        let mut persist = persists(p_sharp_beg, p_sharp_end, &rho_subtree);
        let mut rho_ext = vec![0.0; dim];
        sum_into(&mut rho_ext, &rho_init, &p_final_beg);
        persist &= persists(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        sum_into(&mut rho_ext, &rho_final, &p_init_end);
        persist &= persists(&p_sharp_init_end, p_sharp_end, &rho_ext);
        persist
    }
}

fn sample_momentum(metric: &DiagMetric, p: &mut [f64], rng: &mut ChaCha8Rng) {
    for (pi, w) in p.iter_mut().zip(&metric.inv_mass) {
        let z: f64 = StandardNormal.sample(rng);
        *pi = z / w.sqrt();
    }
}

/// One multinomial NUTS transition from `z`; `z` is replaced by the draw.
fn transition<D: LogDensity + ?Sized>(
    target: &mut D,
    metric: &DiagMetric,
    eps: f64,
    cfg: &SamplerConfig,
    z: &mut Point,
    rng: &mut ChaCha8Rng,
) -> Transition {
    let dim = z.q.len();
    sample_momentum(metric, &mut z.p, rng);

    let mut z_fwd = z.clone();
    let mut z_bck = z.clone();
    let mut z_sample = z.clone();
    let mut z_propose = z.clone();

    let mut p_sharp = vec![0.0; dim];
    metric.sharp(&z.p, &mut p_sharp);
    let mut p_fwd_fwd = z.p.clone();
    let mut p_sharp_fwd_fwd = p_sharp.clone();
    let mut p_fwd_bck = z.p.clone();
    let mut p_sharp_fwd_bck = p_sharp.clone();
    let mut p_bck_fwd = z.p.clone();
    let mut p_sharp_bck_fwd = p_sharp.clone();
    let mut p_bck_bck = z.p.clone();
    let mut p_sharp_bck_bck = p_sharp;

    let mut rho = z.p.clone();
    let mut log_sum_weight = 0.0;
    let h0 = z.hamiltonian(metric);

    let mut traj = Trajectory {
        target,
        metric,
        eps,
        max_delta_h: cfg.max_energy_error,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };

    let mut depth = 0;
    let mut rho_fwd = vec![0.0; dim];
    let mut rho_bck = vec![0.0; dim];
    while depth < cfg.max_treedepth {
        rho_fwd.iter_mut().for_each(|x| *x = 0.0);
        rho_bck.iter_mut().for_each(|x| *x = 0.0);
        let mut lsw_subtree = f64::NEG_INFINITY;

        let valid = if rng.random::<f64>() > 0.5 {
            rho_bck.copy_from_slice(&rho);
            p_bck_fwd.copy_from_slice(&p_fwd_bck);
            p_sharp_bck_fwd.copy_from_slice(&p_sharp_fwd_bck);
            traj.build_tree(
                depth,
                &mut z_fwd,
                &mut z_propose,
                &mut p_sharp_fwd_bck,
                &mut p_sharp_fwd_fwd,
                &mut rho_fwd,
                &mut p_fwd_bck,
                &mut p_fwd_fwd,
                h0,
                1.0,
                &mut lsw_subtree,
                rng,
            )
        } else {
            rho_fwd.copy_from_slice(&rho);
            p_fwd_bck.copy_from_slice(&p_bck_fwd);
            p_sharp_fwd_bck.copy_from_slice(&p_sharp_bck_fwd);
            traj.build_tree(
                depth,
                &mut z_bck,
                &mut z_propose,
                &mut p_sharp_bck_fwd,
                &mut p_sharp_bck_bck,
                &mut rho_bck,
                &mut p_bck_fwd,
                &mut p_bck_bck,
                h0,
                -1.0,
                &mut lsw_subtree,
                rng,
            )
        };
        if !valid {
            break;
        }
        depth += 1;

        if lsw_subtree > log_sum_weight {
            z_sample.copy_from(&z_propose);
        } else {
            let accept = (lsw_subtree - log_sum_weight).exp();
            if rng.random::<f64>() < accept {
                z_sample.copy_from(&z_propose);
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

        sum_into(&mut rho, &rho_bck, &rho_fwd);
        let mut persist = persists(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
        let mut rho_ext = vec![0.0; dim];
        sum_into(&mut rho_ext, &rho_bck, &p_fwd_bck);
        persist &= persists(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
        sum_into(&mut rho_ext, &rho_fwd, &p_bck_fwd);
        persist &= persists(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
        if !persist {
            break;
        }
    }

    let n_leapfrog = traj.n_leapfrog;
    let accept_stat = if n_leapfrog > 0 {
        traj.sum_metro_prob / n_leapfrog as f64
    } else {
        0.0
    };
    let divergent = traj.divergent;
    z.copy_from(&z_sample);
    Transition {
        accept_stat,
        depth,
        n_leapfrog,
        divergent,
        energy: z.hamiltonian(metric),
    }
}

/// Heuristic initial step size: double or halve until the one-step
/// acceptance probability crosses 0.8.
fn init_step_size<D: LogDensity + ?Sized>(
    target: &mut D,
    metric: &DiagMetric,
    z: &Point,
    mut eps: f64,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, SamplerError> {
    let log_target = 0.8f64.ln();
    let mut trial = z.clone();
    let mut step = |eps: f64, trial: &mut Point, rng: &mut ChaCha8Rng| {
        trial.copy_from(z);
        sample_momentum(metric, &mut trial.p, rng);
        let h0 = trial.hamiltonian(metric);
        leapfrog(target, metric, trial, eps);
        h0 - trial.hamiltonian(metric)
    };
    let delta_h = step(eps, &mut trial, rng);
    let direction = if delta_h > log_target { 1 } else { -1 };
    loop {
        let delta_h = step(eps, &mut trial, rng);
        if direction == 1 && !(delta_h > log_target) {
            break;
        }
        if direction == -1 && !(delta_h < log_target) {
            break;
        }
        eps = if direction == 1 { 2.0 * eps } else { 0.5 * eps };
        if eps > 1e7 {
            return Err(SamplerError::StepSize {
                chain,
                reason: "posterior appears improper",
            });
        }
        if eps == 0.0 {
            return Err(SamplerError::StepSize {
                chain,
                reason: "no acceptable step size above zero",
            });
        }
    }
    Ok(eps)
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initialize<D: LogDensity + ?Sized>(
    target: &mut D,
    cfg: &SamplerConfig,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Point, SamplerError> {
    let mut z = Point::new(target.dim());
    for _ in 0..INIT_ATTEMPTS {
        for q in z.q.iter_mut() {
            *q = rng.random_range(-cfg.init_radius..cfg.init_radius);
        }
        z.refresh(target);
        if z.logp.is_finite() && z.grad.iter().all(|g| g.is_finite()) {
            return Ok(z);
        }
    }
    Err(SamplerError::Initialization {
        chain,
        attempts: INIT_ATTEMPTS,
    })
}

/// Run one chain: warmup with adaptation, then `cfg.samples` recorded draws.
pub fn sample_chain<D: LogDensity + ?Sized>(
    target: &mut D,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainDraws, SamplerError> {
    cfg.validate()?;
    let dim = target.dim();
    let mut rng = chain_rng(cfg.seed, chain);
    let mut z = initialize(target, cfg, chain, &mut rng)?;

    let mut metric = DiagMetric::identity(dim);
    let mut eps = init_step_size(target, &metric, &z, 1.0, chain, &mut rng)?;
    let mut step_adapt = DualAveraging::new(cfg.target_accept, eps);
    let mut windows = WindowSchedule::new(cfg.warmup);
    let mut variance = WelfordVariance::new(dim);

    let mut out = ChainDraws {
        draws: Vec::with_capacity(cfg.samples),
        log_density: Vec::with_capacity(cfg.samples),
        divergent: Vec::with_capacity(cfg.samples),
        treedepth: Vec::with_capacity(cfg.samples),
        n_leapfrog: Vec::with_capacity(cfg.samples),
        accept_stat: Vec::with_capacity(cfg.samples),
        energy: Vec::with_capacity(cfg.samples),
        step_size: eps,
        inv_metric: Vec::new(),
        warmup_divergences: 0,
    };

    for it in 0..cfg.warmup {
        let t = transition(target, &metric, eps, cfg, &mut z, &mut rng);
        if t.divergent {
            out.warmup_divergences += 1;
        }
        eps = step_adapt.update(t.accept_stat);
        if windows.in_window(it) {
            variance.add(&z.q);
        }
        if windows.end_of_window(it) {
            metric.inv_mass = variance.regularized_variance();
            variance.reset();
            eps = init_step_size(target, &metric, &z, eps, chain, &mut rng)?;
            step_adapt.restart(eps);
        }
    }
    if cfg.warmup > 0 {
        eps = step_adapt.final_step();
    }
    out.step_size = eps;

    for _ in 0..cfg.samples {
        let t = transition(target, &metric, eps, cfg, &mut z, &mut rng);
        out.draws.push(z.q.clone());
        out.log_density.push(z.logp);
        out.divergent.push(t.divergent);
        out.treedepth.push(t.depth);
        out.n_leapfrog.push(t.n_leapfrog);
        out.accept_stat.push(t.accept_stat);
        out.energy.push(t.energy);
    }
    out.inv_metric = metric.inv_mass;
    Ok(out)
}

/// Run `cfg.chains` independent chains, each on its own clone of `target`.
///
/// Chain `c` draws from the stream `(cfg.seed, c)`, so the result does not
/// depend on scheduling.
pub fn sample<D>(target: &D, cfg: &SamplerConfig) -> Result<PosteriorDraws, SamplerError>
where
    D: LogDensity + Clone + Send,
{
    cfg.validate()?;
    let locals: Vec<(usize, D)> = (0..cfg.chains).map(|c| (c, target.clone())).collect();
    let run = |(c, mut local): (usize, D)| sample_chain(&mut local, cfg, c);
    let chains: Vec<Result<ChainDraws, SamplerError>> = if cfg.parallel {
        locals.into_par_iter().map(run).collect()
    } else {
        locals.into_iter().map(run).collect()
    };
    let chains = chains.into_iter().collect::<Result<Vec<_>, _>>()?;
    let dim = target.dim();
    Ok(PosteriorDraws {
        param_names: (1..=dim).map(|i| format!("x[{i}]")).collect(),
        chains,
        max_treedepth: cfg.max_treedepth,
    })
}
