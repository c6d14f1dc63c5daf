//! AdamW with global-norm clipping and a linear warmup/decay schedule.

use serde::{Deserialize, Serialize};

use super::params::{decays, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub grad_accum_steps: usize,
    pub max_grad_norm: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            adam_epsilon: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            warmup_steps: 0,
            total_steps: 1000,
            grad_accum_steps: 10,
            max_grad_norm: 1.0,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.adam_epsilon > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate, adam_epsilon and max_grad_norm must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.total_steps == 0 || self.grad_accum_steps == 0 {
            return bad("total_steps and grad_accum_steps must be at least 1".into());
        }
        if self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        Ok(())
    }
}

/// `lr · min(step/warmup, (total − step)/(total − warmup))`, floored at 0.
/// Steps count from 1.
pub fn learning_rate_at(opt: &OptimizerConfig, step: u64) -> f64 {
    let step = step as f64;
    let warmup = opt.warmup_steps as f64;
    let total = opt.total_steps as f64;
    let rise = if opt.warmup_steps == 0 { 1.0 } else { step / warmup };
    let fall = if total > warmup {
        (total - step) / (total - warmup)
    } else if step <= total {
        1.0
    } else {
        0.0
    };
    opt.learning_rate * rise.min(fall).max(0.0)
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Parameters,
    pub second_moment: Parameters,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// factor applied.
pub fn clip_gradients(grads: &mut Parameters, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        let factor = max_norm / norm;
        grads.scale(factor);
        factor
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub learning_rate: f64,
    pub grad_norm: f64,
    pub clip_factor: f64,
}

/// One AdamW update with decoupled weight decay. `grads` is clipped in place.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut Parameters,
    grads: &mut Parameters,
    opt: &OptimizerConfig,
    step: u64,
) -> Result<StepStats> {
    if step == 0 {
        return Err(Error::InvalidArgument("optimizer steps count from 1".into()));
    }
    let grad_norm = grads.global_norm();
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    let clip_factor = clip_gradients(grads, opt.max_grad_norm);
    let lr = learning_rate_at(opt, step);
    let c1 = 1.0 - opt.beta1.powf(step as f64);
    let c2 = 1.0 - opt.beta2.powf(step as f64);

    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut());
    for (((p, g), m), v) in tensors {
        let decay = if decays(&p.name) { opt.weight_decay } else { 0.0 };
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = opt.beta1 * m.data[i] + (1.0 - opt.beta1) * gi;
            v.data[i] = opt.beta2 * v.data[i] + (1.0 - opt.beta2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] -= lr * (m_hat / (v_hat.sqrt() + opt.adam_epsilon) + decay * p.data[i]);
        }
    }
    Ok(StepStats {
        learning_rate: lr,
        grad_norm,
        clip_factor,
    })
}
