//! Reverse-mode differentiation over a linear record of operations.
//!
//! Nodes are appended in execution order; [`Tape::backward`] walks them in
//! reverse exactly once. Only parameters registered with [`Tape::param`]
//! receive a gradient entry.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    Conv {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        geo: ConvGeometry,
    },
    ChannelAffine {
        input: NodeId,
        scale: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f32),
    Concat(Vec<NodeId>),
    PixelShuffle(NodeId, usize),
    ReflectPad(NodeId),
    Crop(NodeId),
    Charbonnier {
        a: NodeId,
        b: NodeId,
        eps: f32,
    },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every tape parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Result<&Tensor> {
        self.grads.get(&id).ok_or(Error::Detached)
    }

    pub fn take(&mut self, id: NodeId) -> Result<Tensor> {
        self.grads.remove(&id).ok_or(Error::Detached)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Param, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>, geo: ConvGeometry) -> Result<NodeId> {
        let out = kernels::conv2d_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)), geo)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                geo,
            },
            rg,
        ))
    }

    /// `x[n, c, ..] · scale[c] + bias[c]`.
    pub fn channel_affine(&mut self, input: NodeId, scale: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4()?;
        let (s, b) = (self.value(scale), self.value(bias));
        if s.shape() != [c] || b.shape() != [c] {
            return Err(Error::Shape(format!(
                "channel_affine: input {:?} needs scale and bias of shape [{c}], got {:?} and {:?}",
                x.shape(),
                s.shape(),
                b.shape()
            )));
        }
        let p = h * w;
        let mut out = x.data().to_vec();
        for bi in 0..n {
            for ci in 0..c {
                let (sv, bv) = (s.data()[ci], b.data()[ci]);
                for v in &mut out[(bi * c + ci) * p..][..p] {
                    *v = *v * sv + bv;
                }
            }
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.needs(&[input, scale, bias]);
        Ok(self.push(out, Op::ChannelAffine { input, scale, bias }, rg))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        )
        .expect("same shape");
        let rg = self.needs(&[input]);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_shape(y, "add")?;
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect(),
        )?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, input: NodeId, factor: f32) -> NodeId {
        let x = self.value(input);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * factor).collect()).expect("same shape");
        let rg = self.needs(&[input]);
        self.push(out, Op::Scale(input, factor), rg)
    }

    /// Concatenate N×Cᵢ×H×W tensors along the channel axis.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let [n, _, h, w] = self.value(*first).dims4()?;
        let mut total_c = 0;
        for id in inputs {
            let [ni, ci, hi, wi] = self.value(*id).dims4()?;
            if (ni, hi, wi) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat: {:?} incompatible with {:?}",
                    self.value(*first).shape(),
                    self.value(*id).shape()
                )));
            }
            total_c += ci;
        }
        let p = h * w;
        let mut out = Vec::with_capacity(n * total_c * p);
        for bi in 0..n {
            for id in inputs {
                let t = self.value(*id);
                let ci = t.shape()[1];
                out.extend_from_slice(&t.data()[bi * ci * p..(bi + 1) * ci * p]);
            }
        }
        let out = Tensor::new(vec![n, total_c, h, w], out)?;
        let rg = self.needs(inputs);
        Ok(self.push(out, Op::Concat(inputs.to_vec()), rg))
    }

    pub fn pixel_shuffle(&mut self, input: NodeId, r: usize) -> Result<NodeId> {
        let out = kernels::pixel_shuffle(self.value(input), r)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::PixelShuffle(input, r), rg))
    }

    pub fn reflect_pad(&mut self, input: NodeId, bottom: usize, right: usize) -> Result<NodeId> {
        let out = kernels::reflect_pad(self.value(input), bottom, right)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::ReflectPad(input), rg))
    }

    pub fn crop(&mut self, input: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let out = kernels::crop(self.value(input), h, w)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::Crop(input), rg))
    }

    /// Mean of `sqrt((a - b)² + eps²)` as a scalar node.
    pub fn charbonnier(&mut self, a: NodeId, b: NodeId, eps: f32) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_shape(y, "charbonnier")?;
        let value = crate::metrics::charbonnier_slices(x.data(), y.data(), eps as f64);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(value as f32), Op::Charbonnier { a, b, eps }, rg))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s: f32 = self.value(input).data().iter().sum();
        let rg = self.needs(&[input]);
        self.push(Tensor::scalar(s), Op::Sum(input), rg)
    }

    /// Gradients of the scalar `loss` with respect to every parameter on the
    /// tape. Parameters that do not influence `loss` get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let rg = |id: &NodeId| self.nodes[id.0].requires_grad;
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    geo,
                } => {
                    let cg = kernels::conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        bias.is_some(),
                        *geo,
                        &g,
                        rg(input),
                    )?;
                    if let Some(dx) = cg.input {
                        accumulate(&mut grads[input.0], dx);
                    }
                    if rg(weight) {
                        accumulate(&mut grads[weight.0], cg.weight);
                    }
                    if let (Some(b), Some(db)) = (bias, cg.bias) {
                        if rg(b) {
                            accumulate(&mut grads[b.0], db);
                        }
                    }
                }
                Op::ChannelAffine { input, scale, bias } => {
                    let x = self.value(*input);
                    let s = self.value(*scale);
                    let [n, c, h, w] = x.dims4()?;
                    let p = h * w;
                    let gd = g.data();
                    if rg(input) {
                        let mut dx = vec![0f32; gd.len()];
                        for bi in 0..n {
                            for ci in 0..c {
                                let sv = s.data()[ci];
                                let off = (bi * c + ci) * p;
                                for j in 0..p {
                                    dx[off + j] = gd[off + j] * sv;
                                }
                            }
                        }
                        accumulate(&mut grads[input.0], Tensor::new(x.shape().to_vec(), dx)?);
                    }
                    let mut ds = vec![0f32; c];
                    let mut db = vec![0f32; c];
                    for bi in 0..n {
                        for ci in 0..c {
                            let off = (bi * c + ci) * p;
                            for j in 0..p {
                                ds[ci] += gd[off + j] * x.data()[off + j];
                                db[ci] += gd[off + j];
                            }
                        }
                    }
                    if rg(scale) {
                        accumulate(&mut grads[scale.0], Tensor::new(vec![c], ds)?);
                    }
                    if rg(bias) {
                        accumulate(&mut grads[bias.0], Tensor::new(vec![c], db)?);
                    }
                }
                Op::Relu(input) => {
                    // Subgradient 0 at exactly zero.
                    let x = self.value(*input);
                    let dx = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[input.0], Tensor::new(x.shape().to_vec(), dx)?);
                }
                Op::Add(a, b) => {
                    if rg(b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if rg(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Scale(input, factor) => {
                    let dx = g.data().iter().map(|v| v * factor).collect();
                    accumulate(&mut grads[input.0], Tensor::new(g.shape().to_vec(), dx)?);
                }
                Op::Concat(inputs) => {
                    let [n, total_c, h, w] = g.dims4()?;
                    let p = h * w;
                    let mut c0 = 0;
                    for id in inputs {
                        let ci = self.value(*id).shape()[1];
                        if rg(id) {
                            let mut part = Vec::with_capacity(n * ci * p);
                            for bi in 0..n {
                                part.extend_from_slice(
                                    &g.data()[(bi * total_c + c0) * p..(bi * total_c + c0 + ci) * p],
                                );
                            }
                            accumulate(&mut grads[id.0], Tensor::new(vec![n, ci, h, w], part)?);
                        }
                        c0 += ci;
                    }
                }
                Op::PixelShuffle(input, r) => {
                    accumulate(&mut grads[input.0], kernels::pixel_unshuffle(&g, *r)?);
                }
                Op::ReflectPad(input) => {
                    let [_, _, h, w] = self.value(*input).dims4()?;
                    accumulate(&mut grads[input.0], kernels::reflect_pad_backward(&g, h, w)?);
                }
                Op::Crop(input) => {
                    let [_, _, h, w] = self.value(*input).dims4()?;
                    accumulate(&mut grads[input.0], kernels::crop_backward(&g, h, w)?);
                }
                Op::Charbonnier { a, b, eps } => {
                    let upstream = g.data()[0] as f64;
                    let (x, y) = (self.value(*a), self.value(*b));
                    let e2 = (*eps as f64) * (*eps as f64);
                    let inv_n = 1.0 / x.len() as f64;
                    let da: Vec<f32> = x
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&p, &q)| {
                            let d = p as f64 - q as f64;
                            (upstream * inv_n * d / (d * d + e2).sqrt()) as f32
                        })
                        .collect();
                    if rg(b) {
                        let db = da.iter().map(|v| -v).collect();
                        accumulate(&mut grads[b.0], Tensor::new(y.shape().to_vec(), db)?);
                    }
                    if rg(a) {
                        accumulate(&mut grads[a.0], Tensor::new(x.shape().to_vec(), da)?);
                    }
                }
                Op::Sum(input) => {
                    let x = self.value(*input);
                    accumulate(&mut grads[input.0], Tensor::full(x.shape().to_vec(), g.data()[0]));
                }
            }
        }

        let mut out = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Param) {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                out.insert(NodeId(idx), g);
            }
        }
        Ok(Gradients { grads: out })
    }
}
