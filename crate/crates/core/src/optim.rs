//! Adam optimizer with bias-corrected moment estimates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::params::Params;
use crate::tensor::Tensor;

/// Adam hyperparameters. The defaults are the ones adversarial image
/// translation is trained with: lr 2e-4 and a reduced beta1 of 0.5, which
/// damps the momentum oscillations the two-player game excites.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig { lr, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Usage(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Usage(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Usage(format!("epsilon must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First and second moment accumulators for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(numel: usize) -> Self {
        AdamState { m: vec![0.0; numel], v: vec![0.0; numel], t: 0 }
    }
}

/// One Adam step on a single tensor. Returns the updated tensor (the
/// gradient-tracking flag is preserved) and advances the moments in place.
pub fn adam_step(
    param: &Tensor,
    grad: &[f32],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    let n = param.numel();
    if grad.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dim(format!(
            "adam_step length mismatch: param {n}, grad {}, m {}, v {}",
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if !kernels::all_finite(grad) {
        return Err(Error::Numeric("adam_step received a non-finite gradient".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t.min(i32::MAX as u64) as i32);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        out.push(param.data()[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
    }
    if !kernels::all_finite(&out) {
        return Err(Error::Numeric("adam_step produced a non-finite parameter".into()));
    }
    param.with_data(out)
}

/// Applies one Adam step to every parameter in the set, in name order.
/// Parameters without an entry in `grads` take a zero-gradient step, which
/// keeps their time counter aligned and lets residual momentum decay.
pub fn adam_update(
    params: &mut Params,
    grads: &BTreeMap<String, Vec<f32>>,
    states: &mut BTreeMap<String, AdamState>,
    cfg: &AdamConfig,
) -> Result<()> {
    for name in grads.keys() {
        if params.get(name).is_err() {
            return Err(Error::Usage(format!("gradient for unknown parameter {name:?}")));
        }
    }
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let t = params.get(&name)?.clone();
        let state = states
            .entry(name.clone())
            .or_insert_with(|| AdamState::new(t.numel()));
        let zeros;
        let g: &[f32] = match grads.get(&name) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; t.numel()];
                &zeros
            }
        };
        let updated = adam_step(&t, g, state, cfg)?;
        params.set(&name, updated)?;
    }
    Ok(())
}
