use std::collections::BTreeMap;

use super::Tensor;
use crate::{Error, Result};

/// Adam hyperparameters. beta1 defaults to 0.5, the usual choice for
/// adversarial training.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer. Moment buffers are keyed by
/// parameter path so the same instance can be re-applied to a rebuilt
/// network.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Adam {
        Adam {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One update over the given named parameters. Tensors without an
    /// enabled gradient are skipped (moving statistics and the like).
    pub fn step<'a>(
        &mut self,
        params: impl Iterator<Item = (String, &'a mut Tensor)>,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let corr1 = 1.0 - self.cfg.beta1.powi(t);
        let corr2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, tensor) in params {
            let (grad, data) = tensor.grad_and_data_mut();
            let Some(grad) = grad else { continue };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {name}"
                )));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            if m.len() != grad.len() {
                return Err(Error::shape(&name, &[m.len()], &[grad.len()]));
            }
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                data[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
        Ok(())
    }

    /// Export moment buffers for checkpointing.
    pub fn moments(&self) -> impl Iterator<Item = (&String, &(Vec<f64>, Vec<f64>))> {
        self.moments.iter()
    }

    /// Restore one moment buffer (checkpoint load).
    pub fn insert_moments(&mut self, name: String, m: Vec<f64>, v: Vec<f64>) {
        self.moments.insert(name, (m, v));
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }
}
