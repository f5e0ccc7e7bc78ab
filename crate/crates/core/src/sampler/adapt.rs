//! Warmup adaptation: dual averaging for the step size and windowed
//! variance estimation for the diagonal inverse metric.

const GAMMA: f64 = 0.05;
const KAPPA: f64 = 0.75;
const T0: f64 = 10.0;

const INIT_BUFFER: usize = 75;
const TERM_BUFFER: usize = 50;
const BASE_WINDOW: usize = 25;

const METRIC_MIN: f64 = 1e-10;
const METRIC_MAX: f64 = 1e10;

#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    delta: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(target_accept: f64, step_size: f64) -> Self {
        let mut d = Self { delta: target_accept, mu: 0.0, counter: 0.0, s_bar: 0.0, x_bar: 0.0 };
        d.restart(step_size);
        d
    }

    /// Resets the averages and shrinks toward `10 * step_size`.
    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    pub fn learn(&mut self, step_size: &mut f64, accept_stat: f64) {
        self.counter += 1.0;
        let accept_stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept_stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / GAMMA;
        let x_eta = self.counter.powf(-KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        *step_size = x.exp();
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford accumulator for per-coordinate variances.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
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

    fn variance(&self) -> Vec<f64> {
        let denom = (self.n as f64 - 1.0).max(1.0);
        self.m2.iter().map(|m| m / denom).collect()
    }

    fn reset(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Slow-phase schedule: after a fast initial buffer, variance is estimated
/// over doubling windows and the metric is updated at the end of each; a
/// fast terminal buffer follows.
#[derive(Debug, Clone)]
pub(crate) struct WindowedVariance {
    num_warmup: usize,
    counter: usize,
    window_size: usize,
    next_window: usize,
    estimator: Welford,
}

impl WindowedVariance {
    pub fn new(num_warmup: usize, dim: usize) -> Self {
        Self {
            num_warmup,
            counter: 0,
            window_size: BASE_WINDOW,
            next_window: INIT_BUFFER + BASE_WINDOW - 1,
            estimator: Welford::new(dim),
        }
    }

    fn last_window_end(&self) -> usize {
        self.num_warmup.saturating_sub(TERM_BUFFER + 1)
    }

    fn in_window(&self) -> bool {
        self.counter >= INIT_BUFFER
            && self.counter < self.num_warmup.saturating_sub(TERM_BUFFER)
            && self.counter != self.num_warmup
    }

    fn window_ends(&self) -> bool {
        self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        if self.next_window == self.last_window_end() {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != self.last_window_end() {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.num_warmup - TERM_BUFFER {
                self.next_window = self.last_window_end();
            }
        }
    }

    /// Feeds one warmup position. Returns true when `inv_metric` was
    /// updated, in which case the step size should be re-initialized.
    pub fn learn(&mut self, inv_metric: &mut [f64], q: &[f64]) -> bool {
        if self.in_window() {
            self.estimator.add(q);
        }
        if self.window_ends() {
            self.compute_next_window();
            let n = self.estimator.n as f64;
            for (m, v) in inv_metric.iter_mut().zip(self.estimator.variance()) {
                // Regularize toward the unit metric for short windows.
                let shrunk = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
                *m = shrunk.clamp(METRIC_MIN, METRIC_MAX);
            }
            self.estimator.reset();
            self.counter += 1;
            return true;
        }
        self.counter += 1;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_boundaries_for_default_warmup() {
        let mut w = WindowedVariance::new(1000, 1);
        let mut metric = [1.0];
        let updates: Vec<usize> = (0..1000).filter(|&i| w.learn(&mut metric, &[i as f64])).collect();
        assert_eq!(updates, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn minimal_warmup_has_one_window() {
        let mut w = WindowedVariance::new(150, 1);
        let mut metric = [1.0];
        let updates: Vec<usize> = (0..150).filter(|&i| w.learn(&mut metric, &[i as f64])).collect();
        assert_eq!(updates, vec![99]);
    }

    #[test]
    fn metric_is_clamped() {
        let mut w = WindowedVariance::new(150, 1);
        let mut metric = [1.0];
        for _ in 0..150 {
            w.learn(&mut metric, &[1e30]);
        }
        // Constant input: only the regularization term survives.
        assert!((metric[0] - 1e-3 * 5.0 / 30.0).abs() < 1e-15);

        let mut w = WindowedVariance::new(150, 1);
        for i in 0..150 {
            w.learn(&mut metric, &[if i % 2 == 0 { 1e10 } else { -1e10 }]);
        }
        assert_eq!(metric[0], METRIC_MAX);
    }

    #[test]
    fn dual_averaging_moves_step_size_toward_target() {
        let mut d = DualAveraging::new(0.8, 1.0);
        let mut eps = 1.0;
        for _ in 0..50 {
            d.learn(&mut eps, 0.2);
        }
        assert!(d.final_step_size() < 1.0);
        let mut d = DualAveraging::new(0.8, 1.0);
        for _ in 0..50 {
            d.learn(&mut eps, 1.0);
        }
        assert!(d.final_step_size() > 1.0);
    }
}
