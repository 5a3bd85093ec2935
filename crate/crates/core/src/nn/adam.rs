use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: one first/second moment buffer per parameter tensor,
/// in the order the parameters are passed to [`adam_step`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let AdamConfig { lr, beta1, beta2, eps } = config;
        let unit = 0.0..1.0;
        if !(lr > 0.0 && unit.contains(&beta1) && unit.contains(&beta2) && beta1 > 0.0 && beta2 > 0.0 && eps > 0.0) {
            return Err(Error::Parameter(format!("invalid Adam config {config:?}")));
        }
        Ok(AdamState { config, step_count: 0, first: Vec::new(), second: Vec::new() })
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }
}

/// One bias-corrected Adam update over `params`, using each tensor's grad.
///
/// All gradients are checked before anything is modified; a non-finite
/// gradient aborts the step and names the offending parameter.
pub fn adam_step<T: Scalar>(params: &mut [(String, &mut Tensor<T>)], state: &mut AdamState) -> Result<()> {
    if state.first.is_empty() {
        state.first = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len() {
        return Err(Error::dim(format!(
            "optimizer tracks {} parameters, got {}",
            state.first.len(),
            params.len()
        )));
    }
    for ((name, p), m) in params.iter().zip(&state.first) {
        let grad = p.grad().ok_or_else(|| Error::State(format!("parameter {name} has no gradient")))?;
        if grad.len() != m.len() {
            return Err(Error::dim(format!("parameter {name}: moment buffer size {} != {}", m.len(), grad.len())));
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }

    state.step_count += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((_, p), m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let (data, grad) = p.data_and_grad_mut();
        let grad = grad.expect("checked above");
        for i in 0..data.len() {
            let g = grad[i].to_f64();
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            data[i] = T::from_f64(data[i].to_f64() - update);
        }
    }
    Ok(())
}
