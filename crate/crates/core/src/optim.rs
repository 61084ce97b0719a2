//! Adam and the cosine-annealing learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                what: "Adam parameters/gradients",
                expected: self.m.len(),
                actual: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr}")));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {}",
                grads[i]
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Cosine annealing from `initial` down to `min` over `total_epochs`,
/// optionally restarting every `restart_period` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub min: f64,
    pub total_epochs: usize,
    pub restart_period: Option<usize>,
}

impl LrSchedule {
    pub fn new(initial: f64, min: f64, total_epochs: usize, restart_period: Option<usize>) -> Result<Self> {
        if !(initial.is_finite() && min.is_finite() && min >= 0.0 && (initial > min || initial == 0.0 && min == 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "learning rates must satisfy initial > min >= 0, got {initial} and {min}"
            )));
        }
        if total_epochs == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one epoch".into()));
        }
        if restart_period == Some(0) {
            return Err(Error::InvalidArgument("restart period must be positive".into()));
        }
        Ok(LrSchedule {
            initial,
            min,
            total_epochs,
            restart_period,
        })
    }

    /// `min + (initial - min) (1 + cos(pi tau / T)) / 2`, `tau` the position in the cycle.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let (tau, period) = match self.restart_period {
            Some(p) => (epoch % p, p),
            None => (epoch.min(self.total_epochs), self.total_epochs),
        };
        let phase = std::f64::consts::PI * tau as f64 / period as f64;
        self.min + 0.5 * (self.initial - self.min) * (1.0 + phase.cos())
    }
}

/// Initial learning rate used for the four reference depths.
pub fn reference_learning_rate(depth: usize) -> Option<f64> {
    match depth {
        50 => Some(1.0e-2),
        100 => Some(5.0e-3),
        150 => Some(2.5e-3),
        200 => Some(1.0e-3),
        _ => None,
    }
}
