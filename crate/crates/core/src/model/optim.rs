use super::params::ModelParams;
use crate::{Error, Real, Result};

/// Adam with moments kept in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    /// Apply one update with the flat gradient (same order as
    /// [`ModelParams::to_flat`]).
    pub fn step<T: Real>(&mut self, params: &mut ModelParams<T>, grad: &[f64]) -> Result<()> {
        let n = params.n_params();
        if grad.len() != n {
            return Err(Error::Shape(format!("{} gradient values for {n} parameters", grad.len())));
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient at parameter {bad}")));
        }
        if self.m.is_empty() {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut flat = params.to_flat();
        for i in 0..n {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let update = self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            flat[i] = T::of(flat[i].f64() - update);
        }
        params.set_flat(&flat)
    }
}

/// Halves the learning rate when the loss has not improved (relative
/// threshold) for `patience` consecutive observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    bad: usize,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau { factor: 0.5, patience: 10, threshold: 1e-4, min_lr: 1e-6, best: f64::INFINITY, bad: 0 }
    }
}

impl Plateau {
    /// Record a loss; returns the (possibly reduced) learning rate.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best * (1.0 - self.threshold) {
            self.best = loss;
            self.bad = 0;
            return lr;
        }
        self.bad += 1;
        if self.bad > self.patience {
            self.bad = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}
