//! Bias-corrected Adam.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Grads, ParamStore, Role};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !betas_ok || !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("bad Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First/second moments per trainable tensor (empty for buffers) and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = |p: &crate::model::params::ParamTensor<T>| match p.role {
            Role::Trainable => alloc::vec![T::zero(); p.data.len()],
            Role::Buffer => Vec::new(),
        };
        Self { m: params.tensors().iter().map(zeros).collect(), v: params.tensors().iter().map(zeros).collect(), t: 0 }
    }
}

/// One Adam update of every trainable tensor. Buffers (BN running stats) are left alone.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &Grads<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.buffers().len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors, {} gradients, {} moment slots",
            params.len(),
            grads.buffers().len(),
            state.m.len()
        )));
    }
    for (p, g) in params.tensors().iter().zip(grads.buffers()) {
        if p.role == Role::Trainable {
            if g.len() != p.data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for {} has {} values, expected {}",
                    p.name,
                    g.len(),
                    p.data.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { name: p.name.clone() });
            }
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - cfg.beta1), T::from_f64_lossy(1.0 - cfg.beta2));
    let (lr, eps) = (cfg.learning_rate, cfg.eps);
    for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads.buffers()).zip(&mut state.m).zip(&mut state.v) {
        if p.role != Role::Trainable {
            continue;
        }
        for (((theta, &gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let m_hat = mi.as_f64() / bc1;
            let v_hat = vi.as_f64() / bc2;
            *theta -= T::from_f64_lossy(lr * m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}
