//! Adam with bias correction and coupled (L2-gradient) weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamKind, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Also decay the unconstrained Meixner shape parameters.
    pub decay_meixner_params: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
            decay_meixner_params: false,
        }
    }
}

impl AdamConfig {
    /// Whether parameters of `kind` receive weight decay. Linear weights
    /// always do; biases and layer-norm affine parameters never do.
    pub fn decays(&self, kind: ParamKind) -> bool {
        match kind {
            ParamKind::Weight => true,
            ParamKind::MeixnerRaw => self.decay_meixner_params,
            ParamKind::Bias | ParamKind::NormGain | ParamKind::NormBias => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`. Parameters
    /// without a gradient (not reached by the loss) are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (_, p) in store.iter() {
            if let Some(g) = p.value.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.step += 1;
        let cfg = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);

        for (id, p) in store.iter_mut() {
            let Some(grad) = p.value.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let decay = if self.config.decays(p.kind) {
                cfg.weight_decay
            } else {
                0.0
            };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i] + decay * *w;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
