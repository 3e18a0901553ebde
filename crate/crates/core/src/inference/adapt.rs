//! Warmup adaptation: dual averaging for the step size and windowed
//! estimation of a diagonal metric.

#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    pub delta: f64,
    gamma: f64,
    kappa: f64,
    t0: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(delta: f64) -> Self {
        Self { delta, gamma: 0.05, kappa: 0.75, t0: 10.0, mu: 0.0, counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    /// Restarts around `eps`, aiming slightly above it.
    pub fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size given the last acceptance statistic.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        let a = if accept_stat.is_nan() { 0.0 } else { accept_stat.min(1.0) };
        self.counter += 1.0;
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self { n: 0, mean: vec![0.0; d], m2: vec![0.0; d] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    fn restart(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Warmup schedule: a fast initial buffer, doubling slow windows for the
/// metric, then a terminal fast buffer.
#[derive(Debug, Clone)]
pub(crate) struct WindowedMetric {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    est: Welford,
    enabled: bool,
}

impl WindowedMetric {
    pub fn new(dim: usize, num_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut window_size) = (75, 50, 25);
        let enabled = num_warmup >= 20;
        if enabled && init_buffer + term_buffer + window_size > num_warmup {
            init_buffer = (0.15 * num_warmup as f64) as usize;
            term_buffer = (0.1 * num_warmup as f64) as usize;
            window_size = num_warmup - init_buffer - term_buffer;
        }
        Self {
            num_warmup,
            init_buffer,
            term_buffer,
            window_size,
            next_window: init_buffer + window_size - 1,
            counter: 0,
            est: Welford::new(dim),
            enabled,
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn window_end(&self) -> bool {
        self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer {
            self.next_window = last;
        }
    }

    /// Feeds one warmup draw; returns `true` when `inv_metric` was updated.
    pub fn learn(&mut self, q: &[f64], inv_metric: &mut [f64]) -> bool {
        if !self.enabled {
            return false;
        }
        if self.in_window() {
            self.est.add(q);
        }
        if self.window_end() {
            self.compute_next_window();
            let n = self.est.n as f64;
            if self.est.n > 1 {
                for (m, m2) in inv_metric.iter_mut().zip(&self.est.m2) {
                    let var = m2 / (n - 1.0);
                    *m = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
                }
            }
            self.est.restart();
            self.counter += 1;
            return true;
        }
        self.counter += 1;
        false
    }
}
