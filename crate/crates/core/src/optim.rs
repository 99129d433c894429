//! Adam for offline training, plain gradient descent for online updates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter/gradient length mismatch: state holds {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid optimizer config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        for len in [params.len(), grads.len()] {
            if len != self.m.len() {
                return Err(OptimError::ShapeMismatch {
                    expected: self.m.len(),
                    got: len,
                });
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub steps_per_update: usize,
    /// Optional cap on the gradient norm of each step.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            steps_per_update: 5,
            clip_norm: None,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(OptimError::Config(format!(
                "lr must be non-negative, got {}",
                self.lr
            )));
        }
        if self.steps_per_update == 0 {
            return Err(OptimError::Config(
                "steps_per_update must be at least 1".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(OptimError::Config(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Runs `steps_per_update` gradient steps, re-evaluating `grad_fn` at the
/// current parameters before each one.
pub fn sgd_steps<F>(
    config: &SgdConfig,
    params: &mut [f64],
    mut grad_fn: F,
) -> Result<(), OptimError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    for _ in 0..config.steps_per_update {
        let mut g = grad_fn(params);
        if g.len() != params.len() {
            return Err(OptimError::ShapeMismatch {
                expected: params.len(),
                got: g.len(),
            });
        }
        if let Some(clip) = config.clip_norm {
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > clip {
                let k = clip / norm;
                g.iter_mut().for_each(|x| *x *= k);
            }
        }
        for (p, gi) in params.iter_mut().zip(&g) {
            *p -= config.lr * gi;
        }
    }
    Ok(())
}
