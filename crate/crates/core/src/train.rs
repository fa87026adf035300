//! Batches and the shared forward/backward step used by the trainers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clip::{Clip, Frame, CLIP_FRAMES};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::net::{cascade_on_tape, Model};
use crate::noise::{mix_seed, Corruption};
use crate::optim::{AdamConfig, AdamState};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Noisy input clips with their clean center frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub noisy: Vec<Clip>,
    /// One noise-level map per clip, passed to networks that take one.
    pub maps: Vec<Frame>,
    pub clean: Vec<Frame>,
    /// Stable identifiers (used by file-backed teachers).
    pub ids: Vec<String>,
}

impl Batch {
    /// Corrupt clean clips on the fly. Clip `i` is corrupted with a seed
    /// derived from `(seed, i)`, so a batch is reproducible from its seed.
    pub fn corrupt(clean: &[Clip], ids: &[String], corruption: &Corruption, seed: u64) -> Result<Batch> {
        if ids.len() != clean.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} clips",
                ids.len(),
                clean.len()
            )));
        }
        let mut noisy = Vec::with_capacity(clean.len());
        let mut maps = Vec::with_capacity(clean.len());
        for (i, c) in clean.iter().enumerate() {
            let (n, m) = corruption.apply(c, mix_seed(seed, &[i as u64]))?;
            noisy.push(n);
            maps.push(m);
        }
        Ok(Batch {
            noisy,
            maps,
            clean: clean.iter().map(Clip::center).collect(),
            ids: ids.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.noisy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy.is_empty()
    }

    /// The maps if `model` takes them.
    pub fn maps_for(&self, model: &Model) -> Result<Option<&[Frame]>> {
        if !model.spec().noise_map_input {
            return Ok(None);
        }
        if self.maps.len() != self.noisy.len() {
            return Err(Error::InvalidArgument(format!(
                "network {:?} needs a noise map per clip",
                model.spec().name
            )));
        }
        Ok(Some(&self.maps))
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.noisy.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if self.clean.len() != self.noisy.len() {
            return Err(Error::Shape(format!(
                "{} targets for {} clips",
                self.clean.len(),
                self.noisy.len()
            )));
        }
        if !self.maps.is_empty() && self.maps.len() != self.noisy.len() {
            return Err(Error::Shape(format!(
                "{} noise maps for {} clips",
                self.maps.len(),
                self.noisy.len()
            )));
        }
        for (c, t) in self.noisy.iter().zip(&self.clean) {
            if t.dims() != (c.channels(), c.height(), c.width()) {
                return Err(Error::Shape(format!(
                    "target {:?} does not match clip frame {:?}",
                    t.dims(),
                    (c.channels(), c.height(), c.width())
                )));
            }
        }
        Ok(())
    }
}

/// Loss values and gradients from one forward/backward pass.
pub(crate) struct Pass {
    /// Value of each Charbonnier term, in the order given.
    pub terms: Vec<f64>,
    /// Gradients in the model's canonical parameter order.
    pub grads: Vec<Tensor>,
}

/// Forward the batch and back-propagate `Σ wᵢ·charbonnier(out, targetᵢ)`.
/// A single term with weight 1 is used unscaled.
pub(crate) fn charbonnier_pass(model: &Model, batch: &Batch, targets: &[(f32, &[Frame])], eps: f32) -> Result<Pass> {
    batch.check()?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let out = cascade_on_tape(&mut tape, model, &bound, &batch.noisy, batch.maps_for(model)?)?;
    let mut terms = Vec::with_capacity(targets.len());
    let mut total = None;
    for (weight, frames) in targets {
        if frames.len() != batch.len() {
            return Err(Error::Shape(format!(
                "{} targets for {} clips",
                frames.len(),
                batch.len()
            )));
        }
        let t = tape.constant(crate::clip::stack_frames(frames.iter())?);
        let l = tape.charbonnier(out, t, eps)?;
        terms.push(tape.value(l).item()? as f64);
        let weighted = if targets.len() == 1 && *weight == 1.0 {
            l
        } else {
            tape.scale(l, *weight)
        };
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("no loss terms".into()))?;
    let mut grads = tape.backward(total)?;
    Ok(Pass {
        terms,
        grads: bound.take_gradients(&mut grads)?,
    })
}

pub(crate) fn adam_update(model: &mut Model, grads: &[Tensor], state: &mut AdamState, lr: f32) -> Result<()> {
    let refs: Vec<&Tensor> = grads.iter().collect();
    let mut params = model.params_mut();
    state.step(&mut params, &refs, &AdamConfig::with_lr(lr))
}

/// Charbonnier loss against the clean frames and its gradient in the
/// model's parameter order.
pub fn supervised_gradients(model: &Model, batch: &Batch, eps: f32) -> Result<(f64, Vec<Tensor>)> {
    let pass = charbonnier_pass(model, batch, &[(1.0, &batch.clean)], eps)?;
    Ok((pass.terms[0], pass.grads))
}

/// One plain supervised step: Adam on the Charbonnier loss against the clean
/// frames. Returns the loss before the update.
pub fn supervised_train_step(
    model: &mut Model,
    batch: &Batch,
    lr: f32,
    eps: f32,
    state: &mut AdamState,
) -> Result<f64> {
    let pass = charbonnier_pass(model, batch, &[(1.0, &batch.clean)], eps)?;
    adam_update(model, &pass.grads, state, lr)?;
    Ok(pass.terms[0])
}

/// Plain supervised training for `steps` steps on batches drawn from
/// `pool`. Calls `on_step(step, loss)` after each update.
#[allow(clippy::too_many_arguments)]
pub fn train_supervised(
    model: &mut Model,
    pool: &ClipPool,
    corruption: &Corruption,
    steps: usize,
    batch_size: usize,
    lr: f32,
    eps: f32,
    seed: u64,
    mut on_step: impl FnMut(usize, f64),
) -> Result<()> {
    let mut state = AdamState::new();
    for step in 0..steps {
        let batch = pool.batch(step, batch_size, seed, corruption)?;
        on_step(step, supervised_train_step(model, &batch, lr, eps, &mut state)?);
    }
    Ok(())
}

/// Clean five-frame training clips with identifiers, sampled by seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPool {
    items: Vec<(String, Clip)>,
}

impl ClipPool {
    pub fn new(items: Vec<(String, Clip)>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Dataset("no training clips".into()));
        }
        let (c, h, w) = {
            let c = &items[0].1;
            (c.channels(), c.height(), c.width())
        };
        for (id, clip) in &items {
            if clip.num_frames() != CLIP_FRAMES {
                return Err(Error::Dataset(format!(
                    "clip {id:?} has {} frames, expected {CLIP_FRAMES}",
                    clip.num_frames()
                )));
            }
            if (clip.channels(), clip.height(), clip.width()) != (c, h, w) {
                return Err(Error::Dataset(format!(
                    "clip {id:?} does not match the pool's {c}×{h}×{w}"
                )));
            }
        }
        Ok(ClipPool { items })
    }

    /// `count` synthetic scenes of `size×size`, ids `scene-<i>`.
    pub fn synthetic(count: usize, size: usize, seed: u64) -> Result<Self> {
        let items = (0..count)
            .map(|i| {
                let clip = crate::scene::synth_clip(CLIP_FRAMES, size, size, mix_seed(seed, &[i as u64]))?;
                Ok((format!("scene-{i}"), clip))
            })
            .collect::<Result<_>>()?;
        Self::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[(String, Clip)] {
        &self.items
    }

    /// The batch for training step `step`: clips drawn uniformly with
    /// replacement, then corrupted, all derived from `(seed, step)`.
    pub fn batch(&self, step: usize, batch_size: usize, seed: u64, corruption: &Corruption) -> Result<Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[step as u64, 0]));
        let picks: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.items.len())).collect();
        let clips: Vec<Clip> = picks.iter().map(|&i| self.items[i].1.clone()).collect();
        let ids: Vec<String> = picks.iter().map(|&i| self.items[i].0.clone()).collect();
        Batch::corrupt(&clips, &ids, corruption, mix_seed(seed, &[step as u64, 1]))
    }

    /// Every clip once, in order, corrupted from `seed`.
    pub fn all(&self, seed: u64, corruption: &Corruption) -> Result<Batch> {
        let clips: Vec<Clip> = self.items.iter().map(|(_, c)| c.clone()).collect();
        let ids: Vec<String> = self.items.iter().map(|(i, _)| i.clone()).collect();
        Batch::corrupt(&clips, &ids, corruption, seed)
    }
}

/// Mean center-frame PSNR of the noisy input and of the model output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DenoiseReport {
    pub clips: usize,
    pub noisy_psnr_db: f64,
    pub denoised_psnr_db: f64,
}

impl DenoiseReport {
    pub fn gain_db(&self) -> f64 {
        self.denoised_psnr_db - self.noisy_psnr_db
    }
}

/// Denoise `batch` in chunks and compare with its clean frames.
pub fn evaluate(model: &Model, batch: &Batch) -> Result<DenoiseReport> {
    batch.check()?;
    const CHUNK: usize = 8;
    let maps = batch.maps_for(model)?;
    let (mut noisy, mut denoised) = (0.0, 0.0);
    for start in (0..batch.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(batch.len());
        let out = model.forward_cascade_batch(&batch.noisy[start..end], maps.map(|m| &m[start..end]))?;
        for (i, mut o) in out.into_iter().enumerate() {
            o.clamp01();
            let clean = &batch.clean[start + i];
            noisy += psnr(&batch.noisy[start + i].center(), clean)?;
            denoised += psnr(&o, clean)?;
        }
    }
    let n = batch.len() as f64;
    Ok(DenoiseReport {
        clips: batch.len(),
        noisy_psnr_db: noisy / n,
        denoised_psnr_db: denoised / n,
    })
}
