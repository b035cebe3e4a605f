use serde::{Deserialize, Serialize};

use super::mlp::{MlpGrads, MlpParams};
use crate::error::{Error, Result};

/// Bias-corrected ADAM state over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// One update on a flat parameter slice.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch("optimizer state, parameters and gradients differ in length".into()));
        }
        self.t += 1;
        let (c1, c2) = self.corrections();
        for i in 0..params.len() {
            self.update(i, &mut params[i], grads[i], c1, c2);
        }
        Ok(())
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.t as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    #[inline]
    fn update(&mut self, i: usize, p: &mut f64, g: f64, c1: f64, c2: f64) {
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
        let m_hat = self.m[i] / c1;
        let v_hat = self.v[i] / c2;
        *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0, 1e-3)
    }
}

/// ADAM update of every MLP parameter block.
pub fn adam_step(state: &mut AdamState, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
    if state.m.len() != params.param_count() {
        return Err(Error::ShapeMismatch("optimizer state does not match the parameter count".into()));
    }
    state.t += 1;
    let (c1, c2) = state.corrections();
    let mut offset = 0;
    for (block, g) in params.blocks_mut().into_iter().zip(grads.blocks()) {
        if block.len() != g.len() {
            return Err(Error::ShapeMismatch("gradient block length differs from parameter block".into()));
        }
        for (j, (p, gv)) in block.iter_mut().zip(g).enumerate() {
            state.update(offset + j, p, *gv, c1, c2);
        }
        offset += block.len();
    }
    Ok(())
}
