//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor, in the
/// order the parameters are passed to [`AdamState::step`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update in place. A fresh state adopts the parameter shapes;
    /// afterwards every call must present the same parameter set.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], cfg: &AdamConfig) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "adam: parameter {i} has shape {:?} but its gradient has {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::Shape(
                "adam: optimizer state belongs to a different parameter set".into(),
            ));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = (1.0 - (cfg.beta1 as f64).powi(t)) as f32;
        let bc2 = (1.0 - (cfg.beta2 as f64).powi(t)) as f32;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((w, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
