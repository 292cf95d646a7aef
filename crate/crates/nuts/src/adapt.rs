/// Nesterov dual averaging of `log(step size)` towards a target acceptance
/// statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    pub target: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(target: f64, initial_step: f64) -> Self {
        let mut da = Self {
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        };
        da.restart(initial_step);
        da
    }

    /// Forget the running averages and re-centre on `10 * step`.
    pub fn restart(&mut self, step: f64) {
        self.mu = (10.0 * step).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Feed one acceptance statistic, returning the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = if accept_stat.is_nan() {
            0.0
        } else {
            accept_stat.min(1.0)
        };
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Averaged step size used once warmup ends.
    pub fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford accumulator for per-coordinate variances.
#[derive(Debug, Clone)]
pub struct WelfordVariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WelfordVariance {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((mu, m2), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = xi - *mu;
            *mu += d / n;
            *m2 += d * (xi - *mu);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Unbiased sample variance per coordinate.
    pub fn variance(&self) -> Vec<f64> {
        let denom = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|m| m / denom).collect()
    }

    /// Variance shrunk towards `1e-3`, as used for metric estimates.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.variance()
            .into_iter()
            .map(|v| (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0)))
            .collect()
    }

    pub fn reset(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|x| *x = 0.0);
        self.m2.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Warmup schedule: a fast initial buffer, slow metric windows that double
/// in length, and a fast terminal buffer.
///
/// Buffer sizes are 75 / 25 / 50 for a warmup of 1000 iterations and scale
/// proportionally otherwise (each at least one iteration).
#[derive(Debug, Clone)]
pub struct WindowSchedule {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window_end: usize,
}

impl WindowSchedule {
    pub fn new(warmup: usize) -> Self {
        let scale = |base: f64| ((base * warmup as f64 / 1000.0).round() as usize).max(1);
        let mut init_buffer = scale(75.0);
        let mut term_buffer = scale(50.0);
        let mut base_window = scale(25.0);
        if init_buffer + term_buffer + base_window > warmup {
            // Too short to hold all three phases: one slow window fills the middle.
            init_buffer = warmup * 15 / 100;
            term_buffer = warmup / 10;
            base_window = warmup.saturating_sub(init_buffer + term_buffer);
        }
        Self::with_buffers(warmup, init_buffer, term_buffer, base_window)
    }

    pub fn with_buffers(warmup: usize, init_buffer: usize, term_buffer: usize, base_window: usize) -> Self {
        Self {
            warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window_end: (init_buffer + base_window).saturating_sub(1),
        }
    }

    pub fn buffers(&self) -> (usize, usize) {
        (self.init_buffer, self.term_buffer)
    }

    fn slow_end(&self) -> usize {
        self.warmup.saturating_sub(self.term_buffer)
    }

    /// Whether iteration `i` contributes to the current metric window.
    pub fn in_window(&self, i: usize) -> bool {
        self.window_size > 0 && i >= self.init_buffer && i < self.slow_end() && i != self.warmup
    }

    /// Whether iteration `i` closes a metric window. Advances the schedule
    /// when it does.
    pub fn end_of_window(&mut self, i: usize) -> bool {
        if self.window_size == 0 || i != self.next_window_end || i == self.warmup {
            return false;
        }
        let last = self.slow_end().saturating_sub(1);
        if self.next_window_end != last {
            self.window_size *= 2;
            self.next_window_end = i + self.window_size;
            if self.next_window_end != last && self.next_window_end + 2 * self.window_size >= self.slow_end() {
                self.next_window_end = last;
            }
        }
        true
    }
}
