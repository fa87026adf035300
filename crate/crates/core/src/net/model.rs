use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{ChannelParams, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Trainable tensors of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// out × (in / groups) × k × k
    pub weight: Tensor,
    pub scale: Option<Tensor>,
    pub bias: Option<Tensor>,
}

impl LayerParams {
    fn zeros(layer: &LayerSpec) -> Self {
        let o = layer.out_channels;
        let (scale, bias) = match layer.channel_params {
            ChannelParams::None => (None, None),
            ChannelParams::Bias => (None, Some(Tensor::zeros(vec![o]))),
            ChannelParams::ScaleBias => (Some(Tensor::full(vec![o], 1.0)), Some(Tensor::zeros(vec![o]))),
        };
        LayerParams {
            weight: Tensor::zeros(layer.weight_shape().to_vec()),
            scale,
            bias,
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        std::iter::once(("weight", &self.weight))
            .chain(self.scale.iter().map(|t| ("scale", t)))
            .chain(self.bias.iter().map(|t| ("bias", t)))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        std::iter::once(&mut self.weight)
            .chain(self.scale.iter_mut())
            .chain(self.bias.iter_mut())
    }

    fn check(&self, layer: &LayerSpec) -> Result<()> {
        let expected = LayerParams::zeros(layer);
        let shapes = |p: &LayerParams| p.tensors().map(|(k, t)| (k, t.shape().to_vec())).collect::<Vec<_>>();
        if shapes(self) != shapes(&expected) {
            return Err(Error::Spec(format!(
                "layer {:?}: parameters {:?} do not match spec {:?}",
                layer.name,
                shapes(self),
                shapes(&expected)
            )));
        }
        Ok(())
    }
}

/// A network: its spec plus one [`LayerParams`] per layer, in spec order.
pub const OUTPUT_INIT_SCALE: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    layers: Vec<LayerParams>,
}

impl Model {
    /// Fan-in scaled uniform initialisation from a seeded ChaCha8 stream.
    ///
    /// Layers followed by ReLU draw from `U(-√(6/fan_in), √(6/fan_in))`;
    /// upsampling layers use `√(3/fan_in)`. The last layer of each block is
    /// shrunk by [`OUTPUT_INIT_SCALE`] so every block starts close to the
    /// identity. Scales start at one, biases at zero.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outputs: Vec<&str> = spec
            .blocks
            .iter()
            .filter_map(|b| b.layers.last())
            .map(|l| l.name.as_str())
            .collect();
        let layers = spec
            .layers()
            .map(|layer| {
                let mut p = LayerParams::zeros(layer);
                let fan_in = (layer.in_channels / layer.groups) * layer.kernel * layer.kernel;
                let gain = if layer.has_activation() { 6.0 } else { 3.0 };
                let shrink = if outputs.contains(&layer.name.as_str()) {
                    OUTPUT_INIT_SCALE
                } else {
                    1.0
                };
                let bound = shrink * (gain / fan_in as f64).sqrt() as f32;
                for v in p.weight.data_mut() {
                    *v = rng.random_range(-bound..bound);
                }
                p
            })
            .collect();
        Ok(Model {
            spec: spec.clone(),
            layers,
        })
    }

    /// All weights and biases zero, scales one.
    pub fn zeroed(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Model {
            spec: spec.clone(),
            layers: spec.layers().map(LayerParams::zeros).collect(),
        })
    }

    pub fn from_layers(spec: &NetworkSpec, layers: Vec<LayerParams>) -> Result<Self> {
        spec.validate()?;
        let specs: Vec<_> = spec.layers().collect();
        if specs.len() != layers.len() {
            return Err(Error::Spec(format!(
                "spec has {} layers but {} parameter sets were given",
                specs.len(),
                layers.len()
            )));
        }
        for (l, p) in specs.iter().zip(&layers) {
            p.check(l)?;
        }
        Ok(Model {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.spec.layers().position(|l| l.name == name)
    }

    pub fn layer(&self, name: &str) -> Option<&LayerParams> {
        self.layer_index(name).map(|i| &self.layers[i])
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut LayerParams> {
        self.layer_index(name).map(move |i| &mut self.layers[i])
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.tensors().map(|(_, t)| t.len())).sum()
    }

    /// Every trainable tensor in canonical order (layer order, then weight,
    /// scale, bias).
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    /// `(layer.kind, tensor)` pairs in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.spec
            .layers()
            .zip(&self.layers)
            .flat_map(|(l, p)| p.tensors().map(move |(k, t)| (format!("{}.{k}", l.name), t)))
            .collect()
    }

    /// Rebuild from named tensors as produced by [`Model::named_tensors`].
    pub fn from_named_tensors(spec: &NetworkSpec, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        let mut layers = Vec::new();
        for layer in spec.layers() {
            let mut p = LayerParams::zeros(layer);
            let mut take = |kind: &str| {
                by_name
                    .remove(&format!("{}.{kind}", layer.name))
                    .ok_or_else(|| Error::Spec(format!("weights lack tensor {}.{kind}", layer.name)))
            };
            p.weight = take("weight")?;
            if p.scale.is_some() {
                p.scale = Some(take("scale")?);
            }
            if p.bias.is_some() {
                p.bias = Some(take("bias")?);
            }
            layers.push(p);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Spec(format!("weights contain unknown tensor {extra:?}")));
        }
        Model::from_layers(spec, layers)
    }

    /// Sum of absolute weights over prunable layers.
    pub fn prunable_l1(&self) -> f64 {
        self.spec
            .layers()
            .zip(&self.layers)
            .filter(|(l, _)| l.prunable)
            .map(|(_, p)| p.weight.l1_norm())
            .sum()
    }

    /// Fraction of prunable-layer weights that are exactly zero.
    pub fn prunable_zero_fraction(&self) -> f64 {
        let (zeros, total) = self
            .spec
            .layers()
            .zip(&self.layers)
            .filter(|(l, _)| l.prunable)
            .fold((0usize, 0usize), |(z, t), (_, p)| {
                (z + p.weight.count_zeros(), t + p.weight.len())
            });
        if total == 0 {
            0.0
        } else {
            zeros as f64 / total as f64
        }
    }
}
