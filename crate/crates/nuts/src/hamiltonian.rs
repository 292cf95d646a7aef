use crate::LogDensity;

/// Diagonal Euclidean metric, stored as the inverse mass (a variance per
/// coordinate).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagMetric {
    pub inv_mass: Vec<f64>,
}

impl DiagMetric {
    pub fn identity(dim: usize) -> Self {
        Self {
            inv_mass: vec![1.0; dim],
        }
    }

    pub fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_mass)
            .map(|(&pi, &w)| pi * pi * w)
            .sum::<f64>()
    }

    /// Velocity `M^{-1} p`.
    pub fn sharp(&self, p: &[f64], out: &mut [f64]) {
        for ((o, &pi), &w) in out.iter_mut().zip(p).zip(&self.inv_mass) {
            *o = pi * w;
        }
    }
}

/// A phase-space point together with its cached log density and gradient.
#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    pub fn new(dim: usize) -> Self {
        Self {
            q: vec![0.0; dim],
            p: vec![0.0; dim],
            grad: vec![0.0; dim],
            logp: f64::NEG_INFINITY,
        }
    }

    pub fn hamiltonian(&self, metric: &DiagMetric) -> f64 {
        let h = -self.logp + metric.kinetic(&self.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    pub fn refresh<D: LogDensity + ?Sized>(&mut self, target: &mut D) {
        self.logp = target.log_density_and_grad(&self.q, &mut self.grad);
        if self.logp.is_nan() {
            self.logp = f64::NEG_INFINITY;
        }
    }

    pub fn copy_from(&mut self, other: &Point) {
        self.q.copy_from_slice(&other.q);
        self.p.copy_from_slice(&other.p);
        self.grad.copy_from_slice(&other.grad);
        self.logp = other.logp;
    }
}

/// One velocity-Verlet step of signed size `eps`.
pub(crate) fn leapfrog<D: LogDensity + ?Sized>(
    target: &mut D,
    metric: &DiagMetric,
    z: &mut Point,
    eps: f64,
) {
    let half = 0.5 * eps;
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += half * g;
    }
    for ((q, p), w) in z.q.iter_mut().zip(&z.p).zip(&metric.inv_mass) {
        *q += eps * w * p;
    }
    z.refresh(target);
    if z.logp.is_finite() {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
    }
}

/// Absolute Hamiltonian error after `steps` leapfrog steps from `(q, p)`.
///
/// Exposed for integrator checks; the sampler does not use it.
pub fn leapfrog_energy_error<D: LogDensity + ?Sized>(
    target: &mut D,
    metric: &DiagMetric,
    q: &[f64],
    p: &[f64],
    eps: f64,
    steps: usize,
) -> f64 {
    let mut z = Point::new(q.len());
    z.q.copy_from_slice(q);
    z.p.copy_from_slice(p);
    z.refresh(target);
    let h0 = z.hamiltonian(metric);
    for _ in 0..steps {
        leapfrog(target, metric, &mut z, eps);
    }
    (z.hamiltonian(metric) - h0).abs()
}
