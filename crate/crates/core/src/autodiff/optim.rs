//! Adam with gradient clipping.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "limit")]
pub enum Clipping {
    /// Rescale all gradients together so their joint L2 norm is at most the limit.
    GlobalNorm(f64),
    /// Clamp every gradient entry to `[-limit, limit]`.
    Value(f64),
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clipping: Clipping,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clipping: Clipping::GlobalNorm(1.0),
        }
    }
}

/// Moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

/// What a step did to the gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub norm_before: f64,
    pub norm_after: f64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        OptimizerState {
            config,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Clips `grads` in place according to `clipping`.
pub fn clip_gradients(grads: &mut [Tensor], clipping: Clipping) -> StepReport {
    let norm_before = global_norm(grads);
    match clipping {
        Clipping::GlobalNorm(limit) if norm_before > limit => {
            let s = limit / norm_before;
            for g in grads.iter_mut() {
                g.scale(s);
            }
        }
        Clipping::Value(limit) => {
            for g in grads.iter_mut() {
                for v in g.data_mut() {
                    *v = v.clamp(-limit, limit);
                }
            }
        }
        _ => {}
    }
    StepReport {
        norm_before,
        norm_after: global_norm(grads),
    }
}

/// One Adam update. Gradients are clipped first; a non-finite gradient leaves
/// parameters and state untouched.
pub fn adam_step(params: &mut [&mut Tensor], mut grads: Vec<Tensor>, state: &mut OptimizerState) -> Result<StepReport> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Shape(format!(
                "adam: parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(format!("parameter {i}")));
        }
    }
    let report = clip_gradients(&mut grads, state.config.clipping);
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps, .. } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = beta1 * *mj + (1.0 - beta1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pj -= lr * (mj / c1) / ((vj / c2).sqrt() + eps);
        }
    }
    Ok(report)
}
