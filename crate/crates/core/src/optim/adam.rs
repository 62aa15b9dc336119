use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{layout, ParamMask, RAW_LEN};

/// Moment decay rates and the denominator guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// Per-group learning rates. `position` is multiplied by the scene extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            sh_dc: 2.5e-3,
            sh_rest: 1.25e-4,
        }
    }
}

impl LearningRates {
    /// Learning rate of every raw parameter slot, with positions scaled by `extent`.
    pub fn per_slot(&self, extent: f64) -> [f64; RAW_LEN] {
        let mut out = [0.0; RAW_LEN];
        for (i, lr) in out.iter_mut().enumerate() {
            *lr = match i {
                _ if layout::POSITION.contains(&i) => self.position * extent,
                _ if layout::ROTATION.contains(&i) => self.rotation,
                _ if layout::SCALE.contains(&i) => self.scale,
                layout::OPACITY => self.opacity,
                _ if layout::SH_DC.contains(&i) => self.sh_dc,
                _ => self.sh_rest,
            };
        }
        out
    }
}

/// First and second moment estimates of one scalar parameter.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub m: f64,
    pub v: f64,
}

/// One bias-corrected adaptive update of a scalar; `step` counts from 1.
pub fn adaptive_step(param: &mut f64, grad: f64, state: &mut Moments, step: u64, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::NanGradient(0));
    }
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad;
    let t = step.max(1) as i32;
    let m_hat = state.m / (1.0 - cfg.beta1.powi(t));
    let v_hat = state.v / (1.0 - cfg.beta2.powi(t));
    *param -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    Ok(())
}

/// Moment state for a set of raw parameter vectors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub lr: [f64; RAW_LEN],
    moments: Vec<[Moments; RAW_LEN]>,
    step: u64,
}

impl Adam {
    pub fn new(count: usize, lr: [f64; RAW_LEN], cfg: AdamConfig) -> Self {
        Self {
            cfg,
            lr,
            moments: vec![[Moments::default(); RAW_LEN]; count],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advance the shared step counter; call once per iteration before [`Self::update`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Update slot `slot`'s raw vector in the groups allowed by `mask`.
    pub fn update(&mut self, slot: usize, raw: &mut [f64; RAW_LEN], grad: &[f64; RAW_LEN], mask: ParamMask) -> Result<()> {
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NanGradient(slot * RAW_LEN + i));
        }
        let state = &mut self.moments[slot];
        for i in 0..RAW_LEN {
            if mask.allows(i) {
                adaptive_step(&mut raw[i], grad[i], &mut state[i], self.step, self.lr[i], &self.cfg)?;
            }
        }
        Ok(())
    }
}
