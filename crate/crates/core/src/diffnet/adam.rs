use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Triangular cyclic learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CyclicLr {
    pub base_lr: f64,
    pub max_lr: f64,
    /// Steps per full base→max→base cycle.
    pub period: u64,
}

impl CyclicLr {
    pub fn lr_at(&self, step: u64) -> f64 {
        let period = self.period.max(1);
        let frac = (step % period) as f64 / period as f64;
        let tri = 1.0 - (2.0 * frac - 1.0).abs();
        self.base_lr + (self.max_lr - self.base_lr) * tri
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) weight decay coefficient.
    pub weight_decay: f64,
    pub cyclic: Option<CyclicLr>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            cyclic: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid Adam settings {self:?}")));
        }
        if let Some(c) = self.cyclic {
            if !(c.base_lr > 0.0 && c.max_lr >= c.base_lr && c.period > 0) {
                return Err(Error::InvalidConfig(format!("invalid cyclic schedule {c:?}")));
            }
        }
        Ok(())
    }
}

/// Adam optimizer state for one parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// Learning rate applied at `step` (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.config.cyclic {
            Some(c) => c.lr_at(step),
            None => self.config.lr,
        }
    }

    /// One bias-corrected Adam update. Fails without touching the
    /// parameters if any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        let next_step = self.step + 1;
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        for (g, m) in grads.iter().zip(&self.m) {
            if g.shape() != m.shape() {
                return Err(Error::DimensionMismatch {
                    expected: m.len(),
                    got: g.len(),
                });
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step: next_step });
        }
        self.step = next_step;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let lr = self.lr_at(next_step);
        let bc1 = 1.0 - beta1.powi(next_step as i32);
        let bc2 = 1.0 - beta2.powi(next_step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * p.data[i]);
            }
        }
        Ok(())
    }
}
