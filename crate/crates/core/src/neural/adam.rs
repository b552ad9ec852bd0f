//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{NetGrads, NetParams, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_beta = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite())
            || !ok_beta(self.beta1)
            || !ok_beta(self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments per trainable tensor plus the step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_params(params: &NetParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.trainable().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update of `param` in place; `step` is the 1-based step index.
pub fn adam_update<T: Scalar>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], step: u64, cfg: &AdamConfig) {
    let t = step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.epsilon);
    for (((p, &g), mi), vi) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + one_b1 * g;
        *vi = b2 * *vi + one_b2 * g * g;
        let m_hat = *mi * inv_bc1;
        let v_hat = *vi * inv_bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Applies one optimizer step to every trainable tensor.
pub fn adam_step<T: Scalar>(params: &mut NetParams<T>, grads: &NetGrads<T>, cfg: &AdamConfig) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if grads.tensors.len() != params.adam.m.len() {
        return Err(Error::Shape("gradient tensor count".into()));
    }
    let step = params.adam.step + 1;
    let mut m = std::mem::take(&mut params.adam.m);
    let mut v = std::mem::take(&mut params.adam.v);
    for (((p, g), mi), vi) in params
        .trainable_mut()
        .into_iter()
        .zip(&grads.tensors)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        adam_update(p, g, mi, vi, step, cfg);
    }
    params.adam.m = m;
    params.adam.v = v;
    params.adam.step = step;
    Ok(())
}
