//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self { config, m: vec![0.0; param_count], v: vec![0.0; param_count], step: 0 }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.step = 0;
    }
}

/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_update(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState) -> Result<()> {
    if !params.same_layout(grads) || state.m.len() != params.param_count() {
        return Err(Error::LayoutMismatch("parameters, gradients and optimizer state differ in layout"));
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - math::powf(c.beta1, t);
    let bc2 = 1.0 - math::powf(c.beta2, t);
    for (((p, &g), m), v) in params.values_mut().iter_mut().zip(grads.as_slice()).zip(&mut state.m).zip(&mut state.v) {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        *p -= c.learning_rate * (*m / bc1) / (math::sqrt(*v / bc2) + c.epsilon);
    }
    Ok(())
}
