//! Forward passes of a block and of the five-frame cascade on a [`Tape`].

use super::model::Model;
use super::spec::{ChannelParams, NetworkSpec, FRAMES_PER_BLOCK, FRAME_CHANNELS, NOISE_MAP_CHANNELS};
use crate::clip::{stack_frames, unstack_frames, Clip, Frame, CLIP_FRAMES};
use crate::error::{Error, Result};
use crate::kernels::ConvGeometry;
use crate::tape::{Gradients, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub weight: NodeId,
    pub scale: Option<NodeId>,
    pub bias: Option<NodeId>,
}

/// A model's parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    layers: Vec<BoundLayer>,
}

impl BoundModel {
    pub fn layer(&self, i: usize) -> &BoundLayer {
        &self.layers[i]
    }

    /// Parameter nodes in canonical order.
    pub fn param_nodes(&self) -> Vec<NodeId> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(l.weight).chain(l.scale).chain(l.bias))
            .collect()
    }

    /// Pull this model's gradients out of `grads`, in canonical order.
    pub fn take_gradients(&self, grads: &mut Gradients) -> Result<Vec<Tensor>> {
        self.param_nodes().into_iter().map(|id| grads.take(id)).collect()
    }
}

impl Model {
    /// Register every parameter on `tape`, as trainable leaves or as
    /// constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let layers = self
            .layers()
            .iter()
            .map(|p| BoundLayer {
                weight: leaf(&p.weight),
                scale: p.scale.as_ref().map(&mut leaf),
                bias: p.bias.as_ref().map(&mut leaf),
            })
            .collect();
        BoundModel { layers }
    }
}

fn check_map(spec: &NetworkSpec, present: bool) -> Result<()> {
    match (spec.noise_map_input, present) {
        (true, false) => Err(Error::InvalidArgument(format!(
            "network {:?} expects a noise map input",
            spec.name
        ))),
        (false, true) => Err(Error::InvalidArgument(format!(
            "network {:?} takes no noise map input, but one was supplied",
            spec.name
        ))),
        _ => Ok(()),
    }
}

/// One denoising block on three frames (each N×3×H×W). Inputs whose size is
/// not a multiple of [`NetworkSpec::spatial_multiple`] are reflect-padded on
/// the bottom and right and the output is cropped back.
pub fn block_forward(
    tape: &mut Tape,
    spec: &NetworkSpec,
    bound: &BoundModel,
    block: usize,
    frames: [NodeId; FRAMES_PER_BLOCK],
    noise_map: Option<NodeId>,
) -> Result<NodeId> {
    check_map(spec, noise_map.is_some())?;
    let bspec = spec
        .blocks
        .get(block)
        .ok_or_else(|| Error::InvalidArgument(format!("no block {block}")))?;
    let [n, c, h, w] = tape.value(frames[0]).dims4()?;
    for id in frames.iter().chain(noise_map.iter()) {
        let s = tape.value(*id).shape();
        let want_c = if Some(*id) == noise_map {
            NOISE_MAP_CHANNELS
        } else {
            FRAME_CHANNELS
        };
        if s != [n, want_c, h, w] || c != FRAME_CHANNELS {
            return Err(Error::Shape(format!(
                "block input {s:?} does not match {n}×{want_c}×{h}×{w}"
            )));
        }
    }
    let m = spec.spatial_multiple();
    let (pb, pr) = ((m - h % m) % m, (m - w % m) % m);
    let pad = |tape: &mut Tape, id: NodeId| {
        if pb > 0 || pr > 0 {
            tape.reflect_pad(id, pb, pr)
        } else {
            Ok(id)
        }
    };
    let padded: Vec<NodeId> = frames.iter().map(|&f| pad(tape, f)).collect::<Result<_>>()?;
    let map = noise_map.map(|m| pad(tape, m)).transpose()?;
    let inputs: Vec<NodeId> = match map {
        Some(m) => padded.iter().flat_map(|&f| [f, m]).collect(),
        None => padded.clone(),
    };
    let mut x = tape.concat(&inputs)?;

    let offset: usize = spec.blocks[..block].iter().map(|b| b.layers.len()).sum();
    let mut outputs: Vec<NodeId> = Vec::with_capacity(bspec.layers.len());
    for (i, layer) in bspec.layers.iter().enumerate() {
        let p = bound.layer(offset + i);
        let geo = ConvGeometry::new(layer.stride(), layer.padding()).with_groups(layer.groups);
        let conv_bias = match layer.channel_params {
            ChannelParams::Bias => p.bias,
            _ => None,
        };
        let mut y = tape.conv2d(x, p.weight, conv_bias, geo)?;
        if layer.channel_params == ChannelParams::ScaleBias {
            let (s, b) = (p.scale.expect("scale bound"), p.bias.expect("bias bound"));
            y = tape.channel_affine(y, s, b)?;
        }
        if let Some(r) = layer.shuffle() {
            y = tape.pixel_shuffle(y, r)?;
        }
        if layer.has_activation() {
            y = tape.relu(y);
        }
        if let Some(src) = &layer.skip_from {
            let j = bspec.layer_index(src).expect("validated skip source");
            y = tape.add(y, outputs[j])?;
        }
        outputs.push(y);
        x = y;
    }
    let mut out = tape.add(padded[FRAMES_PER_BLOCK / 2], x)?;
    if pb > 0 || pr > 0 {
        out = tape.crop(out, h, w)?;
    }
    Ok(out)
}

/// Stage one runs block 0 on frame triplets (0,1,2), (1,2,3), (2,3,4);
/// stage two runs block 1 on the three results.
pub fn cascade_forward(
    tape: &mut Tape,
    spec: &NetworkSpec,
    bound: &BoundModel,
    frames: &[NodeId],
    noise_map: Option<NodeId>,
) -> Result<NodeId> {
    if frames.len() != CLIP_FRAMES {
        return Err(Error::InvalidArgument(format!(
            "the cascade takes {CLIP_FRAMES} frames, got {}",
            frames.len()
        )));
    }
    let mut mid = [frames[0]; FRAMES_PER_BLOCK];
    for (t, slot) in mid.iter_mut().enumerate() {
        *slot = block_forward(
            tape,
            spec,
            bound,
            0,
            [frames[t], frames[t + 1], frames[t + 2]],
            noise_map,
        )?;
    }
    block_forward(tape, spec, bound, 1, mid, noise_map)
}

/// Put a batch of clips on the tape as one N×3×H×W constant per frame index.
pub fn clip_batch_nodes(tape: &mut Tape, clips: &[Clip]) -> Result<Vec<NodeId>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty clip batch".into()))?;
    if first.num_frames() != CLIP_FRAMES {
        return Err(Error::InvalidArgument(format!(
            "the cascade takes {CLIP_FRAMES} frames, got {}",
            first.num_frames()
        )));
    }
    (0..CLIP_FRAMES)
        .map(|t| {
            let frames: Vec<Frame> = clips
                .iter()
                .map(|c| {
                    if c.num_frames() != CLIP_FRAMES {
                        return Err(Error::InvalidArgument(format!(
                            "the cascade takes {CLIP_FRAMES} frames, got {}",
                            c.num_frames()
                        )));
                    }
                    Ok(c.frame(t))
                })
                .collect::<Result<_>>()?;
            Ok(tape.constant(stack_frames(&frames)?))
        })
        .collect()
}

impl Model {
    pub fn forward_block(
        &self,
        block: usize,
        frames: [&Frame; FRAMES_PER_BLOCK],
        noise_map: Option<&Frame>,
    ) -> Result<Frame> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let mut ids = Vec::with_capacity(FRAMES_PER_BLOCK);
        for f in frames {
            if f.dims() != frames[0].dims() {
                return Err(Error::Shape(format!(
                    "block frames disagree: {:?} vs {:?}",
                    frames[0].dims(),
                    f.dims()
                )));
            }
            ids.push(tape.constant(f.to_tensor()));
        }
        let ids: [NodeId; FRAMES_PER_BLOCK] = ids.try_into().expect("three frames");
        let map = noise_map.map(|m| tape.constant(m.to_tensor()));
        let out = block_forward(&mut tape, self.spec(), &bound, block, ids, map)?;
        Frame::from_tensor(tape.value(out))
    }

    pub fn forward_cascade(&self, clip: &Clip, noise_map: Option<&Frame>) -> Result<Frame> {
        let maps = noise_map.map(|m| vec![m.clone()]);
        Ok(self
            .forward_cascade_batch(std::slice::from_ref(clip), maps.as_deref())?
            .remove(0))
    }

    pub fn forward_cascade_batch(&self, clips: &[Clip], noise_maps: Option<&[Frame]>) -> Result<Vec<Frame>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = cascade_on_tape(&mut tape, self, &bound, clips, noise_maps)?;
        unstack_frames(tape.value(out))
    }
}

/// Batch forward of the cascade on an existing tape.
pub fn cascade_on_tape(
    tape: &mut Tape,
    model: &Model,
    bound: &BoundModel,
    clips: &[Clip],
    noise_maps: Option<&[Frame]>,
) -> Result<NodeId> {
    let frames = clip_batch_nodes(tape, clips)?;
    let map = match noise_maps {
        Some(maps) => {
            if maps.len() != clips.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} noise maps for {} clips",
                    maps.len(),
                    clips.len()
                )));
            }
            Some(tape.constant(stack_frames(maps)?))
        }
        None => None,
    };
    cascade_forward(tape, model.spec(), bound, &frames, map)
}
