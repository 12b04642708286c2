use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for Adam, one pair per store entry.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<RealMatrix>,
    second: Vec<RealMatrix>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || -> Vec<RealMatrix> {
            params
                .iter()
                .map(|(_, v, _)| RealMatrix::zeros(v.rows(), v.cols()))
                .collect()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[RealMatrix] {
        &self.first
    }

    pub fn second_moments(&self) -> &[RealMatrix] {
        &self.second
    }
}

/// One bias-corrected Adam update using the store's gradient buffers.
///
/// Entries are visited in the store's insertion order; within an entry,
/// in row-major order.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} parameters, store has {}",
            state.first.len(),
            params.len()
        )));
    }
    for id in params.ids() {
        let (value_shape, grad_shape) = (params.value(id).shape(), params.grad(id).shape());
        if value_shape != grad_shape || state.first[id.index()].shape() != value_shape {
            return Err(Error::Shape(format!(
                "parameter `{}`: value {:?}, gradient {:?}, moments {:?}",
                params.name(id),
                value_shape,
                grad_shape,
                state.first[id.index()].shape()
            )));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);

    for id in params.ids() {
        let grad = params.grad(id).as_slice().to_vec();
        let m = state.first[id.index()].as_mut_slice();
        let v = state.second[id.index()].as_mut_slice();
        let value = params.value_mut(id).as_mut_slice();
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            value[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
