use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// A trainable tensor together with its Adam state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub moment1: Matrix,
    pub moment2: Matrix,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            moment1: Matrix::zeros(r, c),
            moment2: Matrix::zeros(r, c),
            step_count: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global L2 norm of the gradient; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Global L2 norm over a set of gradient tensors.
pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
}

/// One bias-corrected Adam update. The gradients are first rescaled so that
/// their global norm does not exceed `clip_norm`. Returns the norm before
/// clipping.
pub fn adam_step(params: &mut [Parameter], grads: &[Matrix], config: &AdamConfig) -> Result<f64> {
    if !(config.lr > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {}",
            config.lr
        )));
    }
    if params.len() != grads.len() {
        return Err(Error::shape(
            "adam_step",
            "one gradient per parameter required",
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient shape for `{}`", p.name),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    let norm = global_norm(grads);
    let scale = match config.clip_norm {
        Some(max) if norm > max => max / norm,
        _ => 1.0,
    };
    for (p, g) in params.iter_mut().zip(grads) {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        let m = p.moment1.data_mut();
        let v = p.moment2.data_mut();
        let w = p.value.data_mut();
        for i in 0..w.len() {
            let gi = g.data()[i] * scale;
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(norm)
}
