use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step over a flat tensor. `step` is 1-based.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    config: &AdamConfig,
    step: u64,
) {
    debug_assert!(step >= 1);
    let b1 = config.beta1;
    let b2 = config.beta2;
    let c1 = 1.0 - b1.powf(step as f64);
    let c2 = 1.0 - b2.powf(step as f64);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
    }
}

/// Adam moments for a parameter container of type `P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<P> {
    pub config: AdamConfig,
    pub m: P,
    pub v: P,
    pub step: u64,
}

impl<P: Parameters + Clone> Adam<P> {
    pub fn new(params: &P, config: AdamConfig) -> Self {
        Adam {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// Applies one update. Non-finite gradients abort the step and leave
    /// both parameters and moments untouched.
    pub fn update(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        if let Some(bad) = g.iter().find(|t| t.data.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite(format!("gradient `{}`", bad.name)));
        }
        self.step += 1;
        let step = self.step;
        let config = self.config;
        let p = params.tensors_mut();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        for (((p, g), m), v) in p.into_iter().zip(&g).zip(m).zip(v) {
            adam_update(p, g.data, m, v, &config, step);
        }
        Ok(())
    }
}
