use std::collections::BTreeMap;

use super::params::ParameterStore;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step_count: u64,
    moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step_count: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// Global ℓ2 norm over the gradients of all trainable parameters.
pub fn grad_norm(store: &ParameterStore) -> f64 {
    store
        .iter()
        .filter(|(p, _)| store.is_trainable(p))
        .filter_map(|(_, t)| t.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all trainable gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm(store: &mut ParameterStore, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, t) in store.iter_mut() {
            if let Some(g) = t.grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

/// Applies one Adam update to every trainable parameter, then clears all
/// gradients. Frozen parameters are never written.
pub fn optimizer_step(store: &mut ParameterStore, state: &mut OptimizerState) -> Result<()> {
    let trainable: Vec<String> = store.trainable_paths().cloned().collect();
    for p in &trainable {
        if store.get(p)?.grad.is_none() {
            return Err(Error::MissingGrad(p.clone()));
        }
    }
    state.step_count += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for p in &trainable {
        let tensor = store.get_mut(p)?;
        let grad = tensor.grad.take().expect("checked above");
        let m = state.moments.entry(p.clone()).or_insert_with(|| Moments {
            first: vec![0.0; grad.len()],
            second: vec![0.0; grad.len()],
        });
        if m.first.len() != grad.len() {
            return Err(Error::shape("optimizer_step", &[m.first.len()], &[grad.len()]));
        }
        for (i, w) in tensor.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * g;
            m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * g * g;
            let mhat = m.first[i] / bc1;
            let vhat = m.second[i] / bc2;
            *w -= learning_rate * mhat / (vhat.sqrt() + epsilon);
        }
    }
    store.zero_grads();
    Ok(())
}
