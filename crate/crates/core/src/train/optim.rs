//! AdamW with optional per-tensor update clipping.
//!
//! The clipped variant rescales each tensor's learning rate by
//! `1 / max(1, rms/threshold)` where `rms = sqrt(mean(g^2 / v_hat))` is
//! the root-mean-square of the second-moment-normalized gradient,
//! computed after the moment update. On a well-scaled gradient the first
//! step has rms exactly 1, so clipping is a no-op there. Weight decay is
//! decoupled and uses the same per-tensor learning rate.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{Params, ParamsMut};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Per-tensor update clipping.
    pub update_clipping: bool,
    pub clip_threshold: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 2e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            update_clipping: true,
            clip_threshold: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(CoreError::Training("learning rate must be >= 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(CoreError::Training("weight decay must be >= 0".into()));
        }
        for beta in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&beta) {
                return Err(CoreError::Training(format!("beta {beta} outside (0,1)")));
            }
        }
        if self.clip_threshold <= 0.0 {
            return Err(CoreError::Training("clip threshold must be > 0".into()));
        }
        Ok(())
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

/// Optimizer state across steps. Moment slots are aligned with the
/// model's canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub moments: Vec<Moments>,
    pub best_valid_acc: Option<f64>,
}

impl TrainState {
    pub fn new(params: &Params<'_>) -> Self {
        TrainState {
            step: 0,
            moments: params
                .iter()
                .map(|(_, p)| Moments {
                    m: Array2::zeros(p.raw_dim()),
                    v: Array2::zeros(p.raw_dim()),
                })
                .collect(),
            best_valid_acc: None,
        }
    }
}

/// One optimizer step over every parameter tensor. Gradients must be
/// finite; otherwise the step is aborted with no state mutated.
pub fn stable_adamw_step(
    params: &mut ParamsMut<'_>,
    grads: &Params<'_>,
    state: &mut TrainState,
    config: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.moments.len() {
        return Err(CoreError::Training(format!(
            "parameter/gradient/state count mismatch: {} / {} / {}",
            params.len(),
            grads.len(),
            state.moments.len()
        )));
    }
    for ((pname, p), (gname, g)) in params.iter().zip(grads.iter()) {
        if pname != gname || p.raw_dim() != g.raw_dim() {
            return Err(CoreError::Training(format!(
                "parameter {pname} does not line up with gradient {gname}"
            )));
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Training(format!(
                "non-finite gradient in {gname}; step aborted"
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);

    for (((_, param), (_, grad)), moments) in
        params.iter_mut().zip(grads.iter()).zip(state.moments.iter_mut())
    {
        let p = param.as_slice_mut().expect("standard layout");
        let g = grad.as_slice().expect("standard layout");
        let m = moments.m.as_slice_mut().expect("standard layout");
        let v = moments.v.as_slice_mut().expect("standard layout");

        for i in 0..p.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
        }

        let lr_t = if config.update_clipping {
            let mut sum = 0.0;
            for i in 0..p.len() {
                let v_hat = (v[i] / bc2).max(config.epsilon * config.epsilon);
                sum += g[i] * g[i] / v_hat;
            }
            let rms = (sum / p.len() as f64).sqrt();
            config.lr / (rms / config.clip_threshold).max(1.0)
        } else {
            config.lr
        };

        for i in 0..p.len() {
            p[i] *= 1.0 - lr_t * config.weight_decay;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr_t * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}
