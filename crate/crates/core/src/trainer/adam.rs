//! Adaptive-moment optimiser over a flat real parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub stabilizer: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            stabilizer: 1e-8,
            lr_decay: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.stabilizer > 0.0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0;
        if !ok {
            return Err(Error::InvalidInput(format!("invalid optimiser settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update at learning rate `lr`.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig, lr: f64) -> Result<()> {
    if theta.len() != grad.len() || state.m.len() != theta.len() || state.v.len() != theta.len() {
        return Err(Error::shape(theta.len(), grad.len()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((th, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *th -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.stabilizer);
    }
    Ok(())
}
