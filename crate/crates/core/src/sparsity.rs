//! Sparse training: Adam on the reconstruction loss, followed by an L1
//! proximal (soft-threshold) step on the weights of prunable layers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Model;
use crate::noise::Corruption;
use crate::optim::AdamState;
use crate::tensor::Tensor;
use crate::train::{adam_update, charbonnier_pass, Batch, ClipPool};

/// How the per-step soft-threshold is derived from the scheduled λ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `λ(step) · lr`, the proximal step of `lr · λ‖W‖₁`.
    #[default]
    LrScaled,
    /// `λ(step)` itself.
    Bare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparsityConfig {
    pub lambda_max: f32,
    /// Fraction of `total_steps` over which λ ramps linearly from zero.
    pub warmup_fraction: f32,
    pub lr: f32,
    pub batch_size: usize,
    pub total_steps: usize,
    pub threshold: ThresholdMode,
    /// Charbonnier ε.
    pub eps: f32,
    pub noise: Corruption,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        SparsityConfig {
            lambda_max: 0.09,
            warmup_fraction: 0.2,
            lr: 1.5e-5,
            batch_size: 64,
            total_steps: 10_000,
            threshold: ThresholdMode::LrScaled,
            eps: 1e-4,
            noise: Corruption::default(),
        }
    }
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda_max.is_finite() && self.lambda_max >= 0.0) {
            return bad(format!("lambda_max must be >= 0, got {}", self.lambda_max));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction <= 1.0) {
            return bad(format!(
                "warmup_fraction must lie in (0, 1], got {}",
                self.warmup_fraction
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return bad("batch_size and total_steps must be positive".into());
        }
        self.noise.validate()?;
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SparsityConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialise")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn warmup_steps(&self) -> f64 {
        self.warmup_fraction as f64 * self.total_steps as f64
    }
}

/// `sign(w) · max(|w| − lam, 0)` elementwise.
pub fn prox_soft_threshold(w: &Tensor, lam: f32) -> Result<Tensor> {
    let mut out = w.clone();
    prox_in_place(&mut out, lam)?;
    Ok(out)
}

pub fn prox_in_place(w: &mut Tensor, lam: f32) -> Result<()> {
    if !(lam.is_finite() && lam >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {lam}")));
    }
    if lam == 0.0 {
        return Ok(());
    }
    for v in w.data_mut() {
        let m = v.abs() - lam;
        *v = if m > 0.0 { m.copysign(*v) } else { 0.0 };
    }
    Ok(())
}

/// λ at `step`: a linear ramp from 0 to `lambda_max` over the warm-up, then
/// constant.
pub fn lambda_schedule(step: usize, cfg: &SparsityConfig) -> Result<f32> {
    if step > cfg.total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} is past total_steps {}",
            cfg.total_steps
        )));
    }
    let warm = cfg.warmup_steps();
    if step as f64 >= warm {
        return Ok(cfg.lambda_max);
    }
    Ok((cfg.lambda_max as f64 * step as f64 / warm) as f32)
}

/// Soft-threshold applied after the Adam update at `step`.
pub fn step_threshold(step: usize, cfg: &SparsityConfig) -> Result<f32> {
    let lam = lambda_schedule(step, cfg)?;
    Ok(match cfg.threshold {
        ThresholdMode::LrScaled => lam * cfg.lr,
        ThresholdMode::Bare => lam,
    })
}

/// Apply the soft-threshold to the weights of every prunable layer.
pub fn prox_prunable(model: &mut Model, threshold: f32) -> Result<()> {
    let prunable: Vec<bool> = model.spec().layers().map(|l| l.prunable).collect();
    for (p, keep) in model.layers_mut().iter_mut().zip(prunable) {
        if keep {
            prox_in_place(&mut p.weight, threshold)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparseRecord {
    pub step: usize,
    /// Charbonnier loss before the update.
    pub charbonnier: f64,
    pub lambda: f32,
    /// L1 norm of prunable weights after the proximal step.
    pub l1: f64,
    /// `lambda · l1`.
    pub penalty: f64,
    pub zero_fraction: f64,
}

impl SparseRecord {
    pub const CSV_HEADER: &'static str = "step,charbonnier,lambda,l1,penalty,zero_fraction";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9},{:.6},{:.6},{:.9},{:.6}",
            self.step, self.charbonnier, self.lambda, self.l1, self.penalty, self.zero_fraction
        )
    }
}

/// One sparse training step at index `step` (0-based).
pub fn sparse_train_step(
    model: &mut Model,
    batch: &Batch,
    cfg: &SparsityConfig,
    step: usize,
    state: &mut AdamState,
) -> Result<SparseRecord> {
    let lambda = lambda_schedule(step, cfg)?;
    let threshold = step_threshold(step, cfg)?;
    let pass = charbonnier_pass(model, batch, &[(1.0, &batch.clean)], cfg.eps)?;
    adam_update(model, &pass.grads, state, cfg.lr)?;
    prox_prunable(model, threshold)?;
    let l1 = model.prunable_l1();
    Ok(SparseRecord {
        step,
        charbonnier: pass.terms[0],
        lambda,
        l1,
        penalty: lambda as f64 * l1,
        zero_fraction: model.prunable_zero_fraction(),
    })
}

/// Run `cfg.total_steps` sparse steps on batches drawn from `pool`.
pub fn train_sparse(
    model: &mut Model,
    pool: &ClipPool,
    cfg: &SparsityConfig,
    seed: u64,
    mut on_step: impl FnMut(&SparseRecord),
) -> Result<()> {
    cfg.validate()?;
    let mut state = AdamState::new();
    for step in 0..cfg.total_steps {
        let batch = pool.batch(step, cfg.batch_size, seed, &cfg.noise)?;
        let rec = sparse_train_step(model, &batch, cfg, step, &mut state)?;
        on_step(&rec);
    }
    Ok(())
}
