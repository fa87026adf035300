//! Sparsity analysis, channel planning and structured pruning.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{LayerParams, Model, NetworkSpec};
use crate::tensor::Tensor;

/// Smallest width the planner reduces a layer to.
pub const MIN_CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: String,
    pub nonzero: usize,
    pub total: usize,
    pub ratio: f64,
}

impl LayerSparsity {
    pub fn new(layer: impl Into<String>, nonzero: usize, total: usize) -> Self {
        let ratio = if total == 0 { 0.0 } else { nonzero as f64 / total as f64 };
        LayerSparsity {
            layer: layer.into(),
            nonzero,
            total,
            ratio,
        }
    }
}

/// One entry per prunable layer, in spec order. A weight counts as nonzero
/// when `|w| > zero_tol`.
pub fn analyze_sparsity(model: &Model, zero_tol: f32) -> Result<Vec<LayerSparsity>> {
    if zero_tol.is_nan() || zero_tol < 0.0 {
        return Err(Error::InvalidArgument(format!("zero_tol must be >= 0, got {zero_tol}")));
    }
    Ok(model
        .spec()
        .layers()
        .zip(model.layers())
        .filter(|(l, _)| l.prunable)
        .map(|(l, p)| {
            let nz = p.weight.data().iter().filter(|v| v.abs() > zero_tol).count();
            LayerSparsity::new(l.name.clone(), nz, p.weight.len())
        })
        .collect())
}

/// A profile in which every prunable layer of `spec` has ratio `r`.
pub fn uniform_profile(spec: &NetworkSpec, r: f64) -> Vec<LayerSparsity> {
    spec.layers()
        .filter(|l| l.prunable)
        .map(|l| {
            let total = l.weight_count();
            let mut e = LayerSparsity::new(l.name.clone(), (r * total as f64).round() as usize, total);
            e.ratio = r;
            e
        })
        .collect()
}

pub fn profile_to_csv(profile: &[LayerSparsity]) -> String {
    let mut s = String::from("layer,nonzero,total,ratio\n");
    for e in profile {
        s.push_str(&format!("{},{},{},{}\n", e.layer, e.nonzero, e.total, e.ratio));
    }
    s
}

pub fn profile_from_csv(text: &str) -> Result<Vec<LayerSparsity>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "layer,nonzero,total,ratio" => {}
        other => return Err(Error::Config(format!("unexpected profile header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Config(format!("profile line {}: {line:?}", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            let e = LayerSparsity {
                layer: f[0].to_string(),
                nonzero: f[1].parse().map_err(|_| bad())?,
                total: f[2].parse().map_err(|_| bad())?,
                ratio: f[3].parse().map_err(|_| bad())?,
            };
            if !(0.0..=1.0).contains(&e.ratio) {
                return Err(bad());
            }
            Ok(e)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerPlan {
    pub name: String,
    /// Effective output channels before pruning.
    pub original: usize,
    pub target: usize,
    /// Sorted indices of the kept effective channels, once chosen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningPlan {
    /// Name of the spec the plan was made for.
    pub spec: String,
    pub predicted_params: usize,
    #[serde(rename = "layer")]
    pub layers: Vec<LayerPlan>,
}

/// Round to the power of two nearest in log space, ties down.
pub fn nearest_power_of_two(x: f64) -> usize {
    if x <= 1.0 {
        return 1;
    }
    let l = x.log2();
    let lo = l.floor();
    let p = if l - lo <= 0.5 { lo } else { lo + 1.0 };
    1usize << (p as u32)
}

/// Width for a layer of `original` channels at sparsity ratio `ratio`:
/// the log-nearest power of two of `ratio · original`, at least
/// [`MIN_CHANNELS`], and never above `original`.
pub fn reduce_channels(ratio: f64, original: usize) -> usize {
    let raw = ratio * original as f64;
    if raw >= original as f64 {
        return original;
    }
    nearest_power_of_two(raw).max(MIN_CHANNELS).min(original)
}

/// Largest power of two strictly below `c`.
fn one_step_below(c: usize) -> usize {
    if c <= 1 {
        return c;
    }
    1usize << (usize::BITS - 1 - (c - 1).leading_zeros())
}

/// Union-find over layer names joined by skip additions.
fn skip_groups(spec: &NetworkSpec) -> HashMap<String, String> {
    let mut parent: HashMap<String, String> = spec.layers().map(|l| (l.name.clone(), l.name.clone())).collect();
    fn root(parent: &HashMap<String, String>, mut n: String) -> String {
        while parent[&n] != n {
            n = parent[&n].clone();
        }
        n
    }
    for l in spec.layers() {
        if let Some(src) = &l.skip_from {
            let (a, b) = (root(&parent, l.name.clone()), root(&parent, src.clone()));
            if a != b {
                parent.insert(a, b);
            }
        }
    }
    spec.layers()
        .map(|l| (l.name.clone(), root(&parent, l.name.clone())))
        .collect()
}

/// Channel targets from a sparsity profile:
///
/// 1. `raw = ratio · original`, rounded to the nearest power of two in log
///    space (ties down) with a floor of [`MIN_CHANNELS`]; a result at or
///    above the original keeps the original.
/// 2. The first and last prunable layer of each block drop at most one
///    power-of-two step.
/// 3. Layers joined by a skip addition take the largest of their targets.
pub fn plan_channels(profile: &[LayerSparsity], spec: &NetworkSpec) -> Result<PruningPlan> {
    spec.validate()?;
    if profile.is_empty() {
        return Err(Error::Plan("empty sparsity profile".into()));
    }
    let ratios: HashMap<&str, f64> = profile.iter().map(|e| (e.layer.as_str(), e.ratio)).collect();
    for e in profile {
        match spec.layer(&e.layer) {
            Some(l) if l.prunable => {}
            Some(_) => return Err(Error::Plan(format!("layer {:?} is not prunable", e.layer))),
            None => return Err(Error::Plan(format!("unknown layer {:?} in profile", e.layer))),
        }
    }
    let mut targets: BTreeMap<String, usize> = BTreeMap::new();
    for block in &spec.blocks {
        let prunable: Vec<usize> = (0..block.layers.len()).filter(|&i| block.layers[i].prunable).collect();
        for (k, &i) in prunable.iter().enumerate() {
            let l = &block.layers[i];
            let r = *ratios
                .get(l.name.as_str())
                .ok_or_else(|| Error::Plan(format!("profile lacks layer {:?}", l.name)))?;
            let c = l.effective_out();
            let mut t = reduce_channels(r, c);
            if k == 0 || k + 1 == prunable.len() {
                t = t.max(one_step_below(c));
            }
            targets.insert(l.name.clone(), t);
        }
    }
    let groups = skip_groups(spec);
    let mut group_max: HashMap<&str, usize> = HashMap::new();
    for (name, t) in &targets {
        let g = group_max.entry(groups[name].as_str()).or_insert(0);
        *g = (*g).max(*t);
    }
    let layers = spec
        .layers()
        .filter(|l| l.prunable)
        .map(|l| LayerPlan {
            name: l.name.clone(),
            original: l.effective_out(),
            target: group_max[groups[&l.name].as_str()],
            kept: None,
        })
        .collect();
    let mut plan = PruningPlan {
        spec: spec.name.clone(),
        predicted_params: 0,
        layers,
    };
    plan.predicted_params = plan.pruned_spec(spec, &spec.name)?.count_params();
    Ok(plan)
}

impl PruningPlan {
    pub fn identity(spec: &NetworkSpec) -> Self {
        let layers = spec
            .layers()
            .filter(|l| l.prunable)
            .map(|l| LayerPlan {
                name: l.name.clone(),
                original: l.effective_out(),
                target: l.effective_out(),
                kept: None,
            })
            .collect();
        PruningPlan {
            spec: spec.name.clone(),
            predicted_params: spec.count_params(),
            layers,
        }
    }

    /// Recompute `predicted_params` after editing targets by hand.
    pub fn refresh_prediction(&mut self, spec: &NetworkSpec) -> Result<()> {
        self.predicted_params = self.pruned_spec(spec, &spec.name)?.count_params();
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.layers.iter().all(|l| l.target == l.original)
    }

    fn targets(&self) -> HashMap<&str, &LayerPlan> {
        self.layers.iter().map(|l| (l.name.as_str(), l)).collect()
    }

    /// Check the plan against `spec`.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let by_name = self.targets();
        if by_name.len() != self.layers.len() {
            return Err(Error::Plan("duplicate layer in plan".into()));
        }
        for lp in &self.layers {
            let l = spec
                .layer(&lp.name)
                .ok_or_else(|| Error::Plan(format!("plan names unknown layer {:?}", lp.name)))?;
            if !l.prunable {
                return Err(Error::Plan(format!("layer {:?} is not prunable", lp.name)));
            }
            if lp.original != l.effective_out() {
                return Err(Error::Plan(format!(
                    "layer {:?}: plan says {} channels, spec has {}",
                    lp.name,
                    lp.original,
                    l.effective_out()
                )));
            }
            if lp.target == 0 || lp.target > lp.original {
                return Err(Error::Plan(format!(
                    "layer {:?}: target {} outside 1..={}",
                    lp.name, lp.target, lp.original
                )));
            }
            if let Some(k) = &lp.kept {
                if k.len() != lp.target || k.windows(2).any(|w| w[0] >= w[1]) || k.iter().any(|&i| i >= lp.original) {
                    return Err(Error::Plan(format!(
                        "layer {:?}: kept indices must be {} sorted distinct values below {}",
                        lp.name, lp.target, lp.original
                    )));
                }
            }
        }
        for l in spec.layers().filter(|l| l.prunable) {
            if !by_name.contains_key(l.name.as_str()) {
                return Err(Error::Plan(format!("plan lacks prunable layer {:?}", l.name)));
            }
        }
        for l in spec.layers() {
            if let Some(src) = &l.skip_from {
                let (a, b) = (by_name.get(l.name.as_str()), by_name.get(src.as_str()));
                let same = match (a, b) {
                    (Some(a), Some(b)) => {
                        a.target == b.target && (a.kept.is_none() || b.kept.is_none() || a.kept == b.kept)
                    }
                    (None, None) => true,
                    (Some(p), None) | (None, Some(p)) => p.target == p.original,
                };
                if !same {
                    return Err(Error::Plan(format!(
                        "skip-connected layers {:?} and {src:?} must keep the same channels",
                        l.name
                    )));
                }
            }
        }
        for block in &spec.blocks {
            for (i, l) in block.layers.iter().enumerate().skip(1) {
                let producer = &block.layers[i - 1];
                let pruned = by_name
                    .get(producer.name.as_str())
                    .is_some_and(|p| p.target != p.original);
                if pruned && l.groups > 1 {
                    return Err(Error::Plan(format!(
                        "grouped layer {:?} cannot consume pruned channels of {:?}",
                        l.name, producer.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// The spec with every planned width applied.
    pub fn pruned_spec(&self, spec: &NetworkSpec, name: &str) -> Result<NetworkSpec> {
        self.validate(spec)?;
        let by_name = self.targets();
        let mut out = spec.clone();
        out.name = name.to_string();
        for block in &mut out.blocks {
            let mut prev: Option<usize> = None;
            for l in &mut block.layers {
                if let Some(c) = prev {
                    l.in_channels = c;
                }
                if let Some(p) = by_name.get(l.name.as_str()) {
                    l.out_channels = p.target * l.filters_per_channel();
                }
                prev = Some(l.effective_out());
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Plan(format!("parse error: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plans always serialise")
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
}

/// L1 norm of the filters feeding each effective output channel.
pub fn channel_l1(layer: &crate::net::LayerSpec, params: &LayerParams) -> Vec<f64> {
    let per = layer.filters_per_channel();
    let filter_len = params.weight.len() / layer.out_channels;
    let w = params.weight.data();
    (0..layer.effective_out())
        .map(|c| {
            w[c * per * filter_len..(c + 1) * per * filter_len]
                .iter()
                .map(|v| v.abs() as f64)
                .sum()
        })
        .collect()
}

/// Fill in kept channels: per skip group, the `target` channels with the
/// largest summed filter L1 norm, ties to the lower index. Layers that
/// already carry kept sets keep them.
pub fn select_channels(model: &Model, plan: &PruningPlan) -> Result<PruningPlan> {
    let spec = model.spec();
    plan.validate(spec)?;
    let groups = skip_groups(spec);
    let mut scores: HashMap<String, Vec<f64>> = HashMap::new();
    for (l, p) in spec.layers().zip(model.layers()) {
        if !l.prunable {
            continue;
        }
        let s = channel_l1(l, p);
        let g = scores
            .entry(groups[&l.name].clone())
            .or_insert_with(|| vec![0.0; s.len()]);
        for (a, b) in g.iter_mut().zip(&s) {
            *a += b;
        }
    }
    let given: HashMap<String, Vec<usize>> = plan
        .layers
        .iter()
        .filter_map(|l| l.kept.clone().map(|k| (groups[&l.name].clone(), k)))
        .collect();
    let mut out = plan.clone();
    for lp in &mut out.layers {
        let g = &groups[&lp.name];
        let kept = match given.get(g) {
            Some(k) => k.clone(),
            None => {
                let s = &scores[g];
                let mut order: Vec<usize> = (0..s.len()).collect();
                order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
                let mut k = order[..lp.target].to_vec();
                k.sort_unstable();
                k
            }
        };
        lp.kept = Some(kept);
    }
    out.validate(spec)?;
    Ok(out)
}

fn gather_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let row = t.len() / t.shape()[0];
    let mut data = Vec::with_capacity(rows.len() * row);
    for &r in rows {
        data.extend_from_slice(&t.data()[r * row..(r + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(shape, data).expect("row gather keeps shapes consistent")
}

/// Slice input channels (dimension 1) of an O×I×k×k weight.
fn gather_inputs(t: &Tensor, cols: &[usize]) -> Tensor {
    let s = t.shape();
    let (o, i, kk) = (s[0], s[1], s[2] * s[3]);
    let mut data = Vec::with_capacity(o * cols.len() * kk);
    for f in 0..o {
        for &c in cols {
            let start = (f * i + c) * kk;
            data.extend_from_slice(&t.data()[start..start + kk]);
        }
    }
    Tensor::new(vec![o, cols.len(), s[2], s[3]], data).expect("column gather keeps shapes consistent")
}

/// Structured pruning: keep the planned channels of every prunable layer and
/// the matching input slices of their consumers. Returns the pruned model
/// and the plan with its kept sets filled in.
pub fn apply_plan(model: &Model, plan: &PruningPlan, name: &str) -> Result<(Model, PruningPlan)> {
    let spec = model.spec();
    let plan = select_channels(model, plan)?;
    let new_spec = plan.pruned_spec(spec, name)?;
    if new_spec.count_params() != plan.predicted_params {
        return Err(Error::Plan(format!(
            "plan predicts {} parameters but its widths give {}",
            plan.predicted_params,
            new_spec.count_params()
        )));
    }
    let kept: HashMap<&str, &[usize]> = plan
        .layers
        .iter()
        .map(|l| (l.name.as_str(), l.kept.as_deref().expect("selected")))
        .collect();
    let mut layers = Vec::with_capacity(model.layers().len());
    let mut offset = 0;
    for block in &spec.blocks {
        let mut inputs: Option<Vec<usize>> = None;
        for (i, l) in block.layers.iter().enumerate() {
            let p = &model.layers()[offset + i];
            let mut q = p.clone();
            if let Some(cols) = &inputs {
                q.weight = gather_inputs(&q.weight, cols);
            }
            let out_keep: Option<Vec<usize>> = kept.get(l.name.as_str()).map(|k| {
                let per = l.filters_per_channel();
                k.iter().flat_map(|&c| c * per..(c + 1) * per).collect()
            });
            if let Some(rows) = &out_keep {
                q.weight = gather_rows(&q.weight, rows);
                q.scale = q.scale.as_ref().map(|t| gather_rows(t, rows));
                q.bias = q.bias.as_ref().map(|t| gather_rows(t, rows));
            }
            inputs = kept
                .get(l.name.as_str())
                .filter(|k| k.len() != l.effective_out())
                .map(|k| k.to_vec());
            layers.push(q);
        }
        offset += block.layers.len();
    }
    let pruned = Model::from_layers(&new_spec, layers)?;
    Ok((pruned, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::EncoderDecoderLayout;

    #[test]
    fn log_space_rounding() {
        assert_eq!(nearest_power_of_two(16.0), 16);
        assert_eq!(nearest_power_of_two(19.2), 16);
        assert_eq!(nearest_power_of_two(23.0), 32);
        assert_eq!(nearest_power_of_two(2f64.powf(4.5)), 16);
        assert_eq!(one_step_below(32), 16);
        assert_eq!(reduce_channels(0.25, 64), 16);
        assert_eq!(reduce_channels(0.3, 64), 16);
        assert_eq!(reduce_channels(0.0, 64), MIN_CHANNELS);
        assert_eq!(reduce_channels(0.9, 3), 3);
        assert_eq!(reduce_channels(1.0, 24), 24);
        assert_eq!(one_step_below(30), 16);
    }

    #[test]
    fn ratio_cases() {
        let spec = EncoderDecoderLayout::mini(16, false).build("mini");
        let mk = |r: f64| {
            let mut p = uniform_profile(&spec, 1.0);
            for e in &mut p {
                if e.layer == "s1.down0_c0" {
                    e.ratio = r;
                }
            }
            plan_channels(&p, &spec).unwrap()
        };
        let target = |plan: &PruningPlan| plan.layers.iter().find(|l| l.name == "s1.down0_c0").unwrap().target;
        // down0_c0 feeds a skip group with up2, whose ratio stays 1.
        assert_eq!(target(&mk(0.25)), 32);
        let mut p = uniform_profile(&spec, 0.25);
        for e in &mut p {
            if e.layer.ends_with("up2") {
                e.ratio = 0.25;
            }
        }
        let plan = plan_channels(&p, &spec).unwrap();
        assert_eq!(target(&plan), 8);
        let inc = plan.layers.iter().find(|l| l.name == "s1.inc1").unwrap();
        assert_eq!(inc.target, 8);
    }

    #[test]
    fn dense_profile_is_identity() {
        let spec = EncoderDecoderLayout::mini(16, false).build("mini");
        let plan = plan_channels(&uniform_profile(&spec, 1.0), &spec).unwrap();
        assert!(plan.is_identity());
        assert_eq!(plan.predicted_params, spec.count_params());
    }

    #[test]
    fn profile_csv_round_trip_and_errors() {
        let p = vec![LayerSparsity::new("a", 120, 480), LayerSparsity::new("b", 0, 9)];
        assert_eq!(p[0].ratio, 0.25);
        assert_eq!(profile_from_csv(&profile_to_csv(&p)).unwrap(), p);
        assert!(profile_from_csv("x,y\n").is_err());
        let spec = EncoderDecoderLayout::mini(8, false).build("mini");
        assert!(plan_channels(&[], &spec).is_err());
        assert!(plan_channels(&[LayerSparsity::new("nope", 1, 1)], &spec).is_err());
    }
}
