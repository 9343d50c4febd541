use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NnError, ParamGrads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for every parameter, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params
            .iter()
            .map(|(name, t)| (name.clone(), vec![0.0; t.len()]))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.first.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.second.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// treated as having a zero gradient.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut AdamState,
) -> Result<(), NnError> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.clone()))?;
        if p.len() != g.len() {
            return Err(NnError::Shape(format!(
                "gradient for '{name}' has {} values, parameter has {}",
                g.len(),
                p.len()
            )));
        }
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let bias1 = 1.0 - beta1.powi(state.step as i32);
    let bias2 = 1.0 - beta2.powi(state.step as i32);
    for (name, param) in params.iter_mut() {
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; param.len()]);
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; param.len()]);
        if m.len() != param.len() {
            return Err(NnError::Shape(format!("moment shape for '{name}'")));
        }
        let grad = grads.get(name);
        for (i, w) in param.data_mut().iter_mut().enumerate() {
            let g = grad.map_or(0.0, |g| g[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if !param.is_finite() {
            return Err(NnError::NonFinite("adam_step"));
        }
    }
    Ok(())
}
