//! Declarative layer tables for the two-stage denoiser.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Colour channels per frame.
pub const FRAME_CHANNELS: usize = 3;
/// Channels of the per-frame noise map concatenated to each input frame.
pub const NOISE_MAP_CHANNELS: usize = 3;
pub const STAGE_COUNT: usize = 2;
pub const FRAMES_PER_BLOCK: usize = 3;
/// Upscale factor of an `upsample_conv`.
pub const UPSAMPLE_FACTOR: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Stride-1 convolution followed by ReLU.
    Conv,
    /// Stride-2 convolution followed by ReLU.
    StridedConv,
    /// Stride-1 convolution producing 4·C channels, pixel-shuffled to C at
    /// twice the resolution. No activation.
    UpsampleConv,
    /// Final 3-channel residual estimate. No activation.
    OutputConv,
}

/// Per-output-channel parameters that follow the convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelParams {
    /// Additive bias (one value per channel).
    #[default]
    Bias,
    /// Nothing: a bias-free convolution.
    None,
    /// Scale and shift (two values per channel), the inference form of a
    /// normalisation layer.
    ScaleBias,
}

impl ChannelParams {
    pub fn per_channel(self) -> usize {
        match self {
            ChannelParams::Bias => 1,
            ChannelParams::None => 0,
            ChannelParams::ScaleBias => 2,
        }
    }
}

fn one() -> usize {
    1
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

fn is_default_params(v: &ChannelParams) -> bool {
    *v == ChannelParams::Bias
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    #[serde(rename = "in")]
    pub in_channels: usize,
    /// Filter count of the convolution (for `upsample_conv`, before the
    /// shuffle).
    #[serde(rename = "out")]
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_from: Option<String>,
    #[serde(default)]
    pub prunable: bool,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub groups: usize,
    #[serde(default, skip_serializing_if = "is_default_params")]
    pub channel_params: ChannelParams,
}

impl LayerSpec {
    pub fn stride(&self) -> usize {
        match self.kind {
            LayerKind::StridedConv => 2,
            _ => 1,
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn has_activation(&self) -> bool {
        matches!(self.kind, LayerKind::Conv | LayerKind::StridedConv)
    }

    pub fn shuffle(&self) -> Option<usize> {
        (self.kind == LayerKind::UpsampleConv).then_some(UPSAMPLE_FACTOR)
    }

    /// Channels this layer hands to its consumer.
    pub fn effective_out(&self) -> usize {
        match self.shuffle() {
            Some(r) => self.out_channels / (r * r),
            None => self.out_channels,
        }
    }

    /// Filters feeding one effective output channel.
    pub fn filters_per_channel(&self) -> usize {
        self.out_channels / self.effective_out().max(1)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels * self.channel_params.per_channel()
    }
}

/// One denoising block: the ordered layer sequence applied to a frame
/// triplet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub name: String,
    #[serde(rename = "layer")]
    pub layers: Vec<LayerSpec>,
}

impl BlockSpec {
    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Resolution level (number of pending 2× downsamplings) after each layer.
    pub fn levels(&self) -> Vec<isize> {
        let mut level = 0isize;
        self.layers
            .iter()
            .map(|l| {
                match l.kind {
                    LayerKind::StridedConv => level += 1,
                    LayerKind::UpsampleConv => level -= 1,
                    _ => {}
                }
                level
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    #[serde(default = "one_u32")]
    pub version: u32,
    pub noise_map_input: bool,
    #[serde(rename = "block")]
    pub blocks: Vec<BlockSpec>,
}

fn one_u32() -> u32 {
    1
}

impl NetworkSpec {
    /// Channels entering the first layer of a block.
    pub fn block_input_channels(&self) -> usize {
        let per_frame = FRAME_CHANNELS + if self.noise_map_input { NOISE_MAP_CHANNELS } else { 0 };
        FRAMES_PER_BLOCK * per_frame
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.blocks.iter().flat_map(|b| b.layers.iter())
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers().find(|l| l.name == name)
    }

    /// Height and width must be multiples of this value inside a block.
    pub fn spatial_multiple(&self) -> usize {
        let deepest = self.blocks.iter().flat_map(|b| b.levels()).max().unwrap_or(0).max(0);
        1usize << deepest
    }

    pub fn count_params(&self) -> usize {
        self.layers().map(LayerSpec::param_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |layer: &str, msg: String| Err(Error::Spec(format!("layer {layer:?}: {msg}")));
        if self.blocks.len() != STAGE_COUNT {
            return Err(Error::Spec(format!(
                "expected {STAGE_COUNT} blocks, found {}",
                self.blocks.len()
            )));
        }
        let mut names = HashSet::new();
        for block in &self.blocks {
            if block.layers.is_empty() {
                return Err(Error::Spec(format!("block {:?} has no layers", block.name)));
            }
            let levels = block.levels();
            let mut expected_in = self.block_input_channels();
            for (i, layer) in block.layers.iter().enumerate() {
                let n = &layer.name;
                if !names.insert(n.clone()) {
                    return bad(n, "duplicate layer name".into());
                }
                if layer.in_channels == 0 || layer.out_channels == 0 {
                    return bad(n, "channel widths must be positive".into());
                }
                if layer.kernel == 0 || layer.kernel % 2 == 0 {
                    return bad(n, format!("kernel {} must be odd", layer.kernel));
                }
                if layer.in_channels != expected_in {
                    return bad(
                        n,
                        format!(
                            "takes {} input channels but its producer supplies {expected_in}",
                            layer.in_channels
                        ),
                    );
                }
                if layer.groups == 0 || layer.in_channels % layer.groups != 0 || layer.out_channels % layer.groups != 0
                {
                    return bad(n, format!("{} groups do not divide its channels", layer.groups));
                }
                if layer.groups > 1 && layer.prunable {
                    return bad(n, "grouped convolutions cannot be marked prunable".into());
                }
                if let Some(r) = layer.shuffle() {
                    if layer.out_channels % (r * r) != 0 {
                        return bad(
                            n,
                            format!("upsample filters {} not divisible by {}", layer.out_channels, r * r),
                        );
                    }
                }
                if levels[i] < 0 {
                    return bad(n, "upsamples above the input resolution".into());
                }
                let is_last = i + 1 == block.layers.len();
                if layer.kind == LayerKind::OutputConv {
                    if !is_last {
                        return bad(n, "output_conv must be the last layer of its block".into());
                    }
                    if layer.out_channels != FRAME_CHANNELS {
                        return bad(n, format!("output_conv must have {FRAME_CHANNELS} output channels"));
                    }
                    if layer.prunable {
                        return bad(n, "output_conv cannot be prunable".into());
                    }
                } else if is_last {
                    return bad(n, "the last layer of a block must be an output_conv".into());
                }
                if let Some(src) = &layer.skip_from {
                    let Some(j) = block.layer_index(src) else {
                        return bad(n, format!("skip_from {src:?} is not a layer of block {:?}", block.name));
                    };
                    if j >= i {
                        return bad(n, format!("skip_from {src:?} must come earlier in the block"));
                    }
                    if block.layers[j].effective_out() != layer.effective_out() {
                        return bad(
                            n,
                            format!(
                                "skip from {src:?} carries {} channels but this layer produces {}",
                                block.layers[j].effective_out(),
                                layer.effective_out()
                            ),
                        );
                    }
                    if levels[j] != levels[i] {
                        return bad(n, format!("skip from {src:?} joins a different resolution"));
                    }
                }
                expected_in = layer.effective_out();
            }
            if *levels.last().unwrap() != 0 {
                return Err(Error::Spec(format!(
                    "block {:?} does not return to the input resolution",
                    block.name
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: NetworkSpec = toml::from_str(text).map_err(|e| Error::Spec(format!("parse error: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network specs always serialise")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Copy with the noise-map inputs removed (first-layer input channels
    /// shrink accordingly).
    pub fn without_noise_map(&self, name: &str) -> Self {
        let mut spec = self.clone();
        spec.name = name.to_string();
        if spec.noise_map_input {
            spec.noise_map_input = false;
            let inputs = spec.block_input_channels();
            for block in &mut spec.blocks {
                block.layers[0].in_channels = inputs;
            }
        }
        spec
    }
}

/// Shape parameters for the three-scale encoder–decoder block family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDecoderLayout {
    /// Channel widths at full, half and quarter resolution.
    pub widths: [usize; 3],
    /// Per-frame features of the grouped input convolution.
    pub frame_features: usize,
    /// Extra stride-1 convolutions at each scale of the encoder and decoder.
    pub convs_per_scale: usize,
    pub noise_map_input: bool,
}

impl EncoderDecoderLayout {
    /// The reference video denoiser layout: 32/64/128 channels, 30 features
    /// per frame, two convolutions per scale, noise maps on.
    pub const REFERENCE: EncoderDecoderLayout = EncoderDecoderLayout {
        widths: [32, 64, 128],
        frame_features: 30,
        convs_per_scale: 2,
        noise_map_input: true,
    };

    /// Desk-scale layout with one convolution per scale and the given
    /// full-resolution width (widths `w`, `2w`, `4w`).
    pub fn mini(base_width: usize, noise_map_input: bool) -> Self {
        EncoderDecoderLayout {
            widths: [base_width, 2 * base_width, 4 * base_width],
            frame_features: (base_width / 2).max(1),
            convs_per_scale: 1,
            noise_map_input,
        }
    }

    pub fn build(&self, name: &str) -> NetworkSpec {
        let per_frame = FRAME_CHANNELS + if self.noise_map_input { NOISE_MAP_CHANNELS } else { 0 };
        let blocks = (1..=STAGE_COUNT)
            .map(|s| self.block(&format!("stage{s}"), &format!("s{s}."), FRAMES_PER_BLOCK * per_frame))
            .collect();
        NetworkSpec {
            name: name.to_string(),
            version: 1,
            noise_map_input: self.noise_map_input,
            blocks,
        }
    }

    fn block(&self, name: &str, p: &str, inputs: usize) -> BlockSpec {
        let [w0, w1, w2] = self.widths;
        let feat = FRAMES_PER_BLOCK * self.frame_features;
        let mut layers = Vec::new();
        let mut push = |name: String, kind, cin, cout, skip: Option<String>, prunable, groups, params| {
            layers.push(LayerSpec {
                name,
                kind,
                in_channels: cin,
                out_channels: cout,
                kernel: 3,
                skip_from: skip,
                prunable,
                groups,
                channel_params: params,
            })
        };
        let sb = ChannelParams::ScaleBias;
        push(
            format!("{p}inc0"),
            LayerKind::Conv,
            inputs,
            feat,
            None,
            false,
            FRAMES_PER_BLOCK,
            sb,
        );
        push(format!("{p}inc1"), LayerKind::Conv, feat, w0, None, true, 1, sb);
        push(format!("{p}down0"), LayerKind::StridedConv, w0, w1, None, true, 1, sb);
        let mut down0_last = format!("{p}down0");
        for i in 0..self.convs_per_scale {
            down0_last = format!("{p}down0_c{i}");
            push(down0_last.clone(), LayerKind::Conv, w1, w1, None, true, 1, sb);
        }
        push(format!("{p}down1"), LayerKind::StridedConv, w1, w2, None, true, 1, sb);
        for i in 0..self.convs_per_scale {
            push(format!("{p}down1_c{i}"), LayerKind::Conv, w2, w2, None, true, 1, sb);
        }
        for i in 0..self.convs_per_scale {
            push(format!("{p}up2_c{i}"), LayerKind::Conv, w2, w2, None, true, 1, sb);
        }
        push(
            format!("{p}up2"),
            LayerKind::UpsampleConv,
            w2,
            4 * w1,
            Some(down0_last),
            true,
            1,
            ChannelParams::None,
        );
        for i in 0..self.convs_per_scale {
            push(format!("{p}up1_c{i}"), LayerKind::Conv, w1, w1, None, true, 1, sb);
        }
        push(
            format!("{p}up1"),
            LayerKind::UpsampleConv,
            w1,
            4 * w0,
            Some(format!("{p}inc1")),
            true,
            1,
            ChannelParams::None,
        );
        push(format!("{p}out0"), LayerKind::Conv, w0, w0, None, true, 1, sb);
        push(
            format!("{p}out1"),
            LayerKind::OutputConv,
            w0,
            FRAME_CHANNELS,
            None,
            false,
            1,
            ChannelParams::None,
        );
        BlockSpec {
            name: name.to_string(),
            layers,
        }
    }
}
