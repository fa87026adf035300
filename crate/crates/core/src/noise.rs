//! Multi-component sensor noise synthesis.
//!
//! A corruption draw is described by [`NoiseParams`]. [`corrupt_clip`] applies
//! the components in a fixed order: heteroscedastic, per-frame banding,
//! clip-constant banding, periodic, quantisation, then a clamp to `[0, 1]`.
//! Randomness comes from one ChaCha8 seed: stream 0 feeds the clip-level
//! draws and stream `t + 1` feeds frame `t`.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clip::{Clip, Frame};
use crate::error::{Error, Result};

/// Highest representable spatial frequency in cycles per pixel.
pub const NYQUIST: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// One offset per row.
    Horizontal,
    /// One offset per column.
    Vertical,
}

/// One sinusoidal interference component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Periodic {
    pub fx: f32,
    pub fy: f32,
    pub phase: f32,
}

impl Periodic {
    fn validate(&self) -> Result<()> {
        let ok = |f: f32| (0.0..=NYQUIST).contains(&f);
        if !ok(self.fx) || !ok(self.fy) || self.fx.max(self.fy) <= 0.0 || !self.phase.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "periodic frequency ({}, {}) must have components in [0, {NYQUIST}] and not both zero",
                self.fx, self.fy
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Shot-noise variance per unit signal.
    pub sigma_s: f32,
    /// Read-noise standard deviation.
    pub sigma_r: f32,
    /// Quantisation step.
    pub lambda_q: f32,
    /// Per-frame banding standard deviation.
    pub sigma_b: f32,
    /// Clip-constant banding standard deviation.
    pub sigma_bt: f32,
    /// Amplitudes of the three periodic components.
    pub sigma_p: [f32; 3],
    pub banding_orientation: Orientation,
    pub periodic: [Periodic; 3],
    /// Give each colour channel its own random phase offset.
    #[serde(default)]
    pub periodic_per_channel: bool,
}

impl NoiseParams {
    /// All intensities zero: the identity corruption.
    pub fn zero() -> Self {
        let p = Periodic {
            fx: 0.25,
            fy: 0.0,
            phase: 0.0,
        };
        NoiseParams {
            sigma_s: 0.0,
            sigma_r: 0.0,
            lambda_q: 0.0,
            sigma_b: 0.0,
            sigma_bt: 0.0,
            sigma_p: [0.0; 3],
            banding_orientation: Orientation::Horizontal,
            periodic: [p; 3],
            periodic_per_channel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("sigma_s", self.sigma_s),
            ("sigma_r", self.sigma_r),
            ("lambda_q", self.lambda_q),
            ("sigma_b", self.sigma_b),
            ("sigma_bt", self.sigma_bt),
            ("sigma_p1", self.sigma_p[0]),
            ("sigma_p2", self.sigma_p[1]),
            ("sigma_p3", self.sigma_p[2]),
        ];
        for (name, v) in scalars {
            non_negative(name, v)?;
        }
        self.periodic.iter().try_for_each(Periodic::validate)
    }

    /// Per-channel noise standard deviation expected at each pixel of
    /// `frame`, used as the explicit noise-map input of networks that take
    /// one.
    pub fn level_map(&self, frame: &Frame) -> Frame {
        let constant = self.sigma_r.powi(2) as f64
            + self.sigma_b.powi(2) as f64
            + self.sigma_bt.powi(2) as f64
            + (self.lambda_q as f64).powi(2) / 12.0
            + self.sigma_p.iter().map(|a| (*a as f64).powi(2) / 2.0).sum::<f64>();
        let mut out = frame.clone();
        for v in out.data_mut() {
            *v = (self.sigma_s as f64 * v.clamp(0.0, 1.0) as f64 + constant).sqrt() as f32;
        }
        out
    }
}

fn non_negative(name: &str, v: f32) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be a finite value >= 0, got {v}"
        )))
    }
}

/// Sampling interval `[min, max]` of one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 2]", into = "[f32; 2]")]
pub struct Interval {
    pub min: f32,
    pub max: f32,
}

impl Interval {
    pub const fn new(min: f32, max: f32) -> Self {
        Interval { min, max }
    }

    pub const fn point(v: f32) -> Self {
        Interval { min: v, max: v }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min >= 0.0 && self.min <= self.max) {
            return Err(Error::Config(format!(
                "range {name} = [{}, {}] must satisfy 0 <= min <= max",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f32 {
        if self.min == self.max {
            self.min
        } else {
            (self.min as f64 + (self.max - self.min) as f64 * rng.random::<f64>()) as f32
        }
    }
}

impl From<[f32; 2]> for Interval {
    fn from([min, max]: [f32; 2]) -> Self {
        Interval { min, max }
    }
}

impl From<Interval> for [f32; 2] {
    fn from(i: Interval) -> Self {
        [i.min, i.max]
    }
}

/// Sampling ranges for [`sample_params`]. The defaults are placeholders for
/// desk-scale experiments, not measured sensor values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRanges {
    pub sigma_s: Interval,
    pub sigma_r: Interval,
    pub lambda_q: Interval,
    /// If present, the quantisation step is picked uniformly from this list
    /// instead of `lambda_q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_q_choices: Option<Vec<f32>>,
    pub sigma_b: Interval,
    pub sigma_bt: Interval,
    pub sigma_p1: Interval,
    pub sigma_p2: Interval,
    pub sigma_p3: Interval,
    /// Range of each periodic frequency component in cycles per pixel.
    pub periodic_freq: Interval,
    #[serde(default)]
    pub periodic_per_channel: bool,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            sigma_s: Interval::new(0.0, 0.04),
            sigma_r: Interval::new(0.0, 0.06),
            lambda_q: Interval::new(0.0, 1.0 / 64.0),
            lambda_q_choices: Some(vec![0.0, 1.0 / 255.0, 1.0 / 64.0]),
            sigma_b: Interval::new(0.0, 0.02),
            sigma_bt: Interval::new(0.0, 0.02),
            sigma_p1: Interval::new(0.0, 0.02),
            sigma_p2: Interval::new(0.0, 0.02),
            sigma_p3: Interval::new(0.0, 0.02),
            periodic_freq: Interval::new(1.0 / 64.0, NYQUIST),
            periodic_per_channel: false,
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("sigma_s", self.sigma_s),
            ("sigma_r", self.sigma_r),
            ("lambda_q", self.lambda_q),
            ("sigma_b", self.sigma_b),
            ("sigma_bt", self.sigma_bt),
            ("sigma_p1", self.sigma_p1),
            ("sigma_p2", self.sigma_p2),
            ("sigma_p3", self.sigma_p3),
            ("periodic_freq", self.periodic_freq),
        ];
        for (name, r) in named {
            r.validate(name)?;
        }
        if self.periodic_freq.min <= 0.0 || self.periodic_freq.max > NYQUIST {
            return Err(Error::Config(format!(
                "periodic_freq must lie in (0, {NYQUIST}], got [{}, {}]",
                self.periodic_freq.min, self.periodic_freq.max
            )));
        }
        if let Some(choices) = &self.lambda_q_choices {
            if choices.is_empty() || choices.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config(
                    "lambda_q_choices must be a non-empty list of values >= 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Ranges that always produce `params`.
    pub fn fixed(params: &NoiseParams) -> Self {
        ParamRanges {
            sigma_s: Interval::point(params.sigma_s),
            sigma_r: Interval::point(params.sigma_r),
            lambda_q: Interval::point(params.lambda_q),
            lambda_q_choices: None,
            sigma_b: Interval::point(params.sigma_b),
            sigma_bt: Interval::point(params.sigma_bt),
            sigma_p1: Interval::point(params.sigma_p[0]),
            sigma_p2: Interval::point(params.sigma_p[1]),
            sigma_p3: Interval::point(params.sigma_p[2]),
            periodic_freq: Interval::new(1.0 / 64.0, NYQUIST),
            periodic_per_channel: params.periodic_per_channel,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let r: ParamRanges = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("ranges always serialise")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Draw one parameter set. Scalars are uniform in their intervals; the
/// banding orientation is a fair coin; periodic frequencies are uniform in
/// `periodic_freq` and phases uniform in `[0, 2π)`.
pub fn sample_params(ranges: &ParamRanges, rng: &mut impl Rng) -> Result<NoiseParams> {
    ranges.validate()?;
    let sigma_s = ranges.sigma_s.sample(rng);
    let sigma_r = ranges.sigma_r.sample(rng);
    let lambda_q = match &ranges.lambda_q_choices {
        Some(c) => c[rng.random_range(0..c.len())],
        None => ranges.lambda_q.sample(rng),
    };
    let sigma_b = ranges.sigma_b.sample(rng);
    let sigma_bt = ranges.sigma_bt.sample(rng);
    let sigma_p = [
        ranges.sigma_p1.sample(rng),
        ranges.sigma_p2.sample(rng),
        ranges.sigma_p3.sample(rng),
    ];
    let banding_orientation = if rng.random::<bool>() {
        Orientation::Horizontal
    } else {
        Orientation::Vertical
    };
    let mut component = || Periodic {
        fx: ranges.periodic_freq.sample(rng),
        fy: ranges.periodic_freq.sample(rng),
        phase: (2.0 * PI * rng.random::<f64>()) as f32,
    };
    let periodic = [component(), component(), component()];
    Ok(NoiseParams {
        sigma_s,
        sigma_r,
        lambda_q,
        sigma_b,
        sigma_bt,
        sigma_p,
        banding_orientation,
        periodic,
        periodic_per_channel: ranges.periodic_per_channel,
    })
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Add zero-mean Gaussian noise of variance `sigma_s·x + sigma_r²` at each
/// pixel `x`. Not clamped.
pub fn add_heteroscedastic(frame: &mut Frame, sigma_s: f32, sigma_r: f32, rng: &mut impl Rng) -> Result<()> {
    non_negative("sigma_s", sigma_s)?;
    non_negative("sigma_r", sigma_r)?;
    if sigma_s == 0.0 && sigma_r == 0.0 {
        return Ok(());
    }
    let read = (sigma_r as f64).powi(2);
    for v in frame.data_mut() {
        let var = sigma_s as f64 * (*v as f64).max(0.0) + read;
        *v = (*v as f64 + var.sqrt() * gaussian(rng)) as f32;
    }
    Ok(())
}

/// Add `Uniform(-lambda_q/2, lambda_q/2)` noise per pixel.
pub fn add_quantization(frame: &mut Frame, lambda_q: f32, rng: &mut impl Rng) -> Result<()> {
    non_negative("lambda_q", lambda_q)?;
    if lambda_q == 0.0 {
        return Ok(());
    }
    let q = lambda_q as f64;
    for v in frame.data_mut() {
        *v = (*v as f64 + q * (rng.random::<f64>() - 0.5)) as f32;
    }
    Ok(())
}

/// An `h×w` offset pattern with one `N(0, sigma²)` value per row
/// (horizontal) or per column (vertical).
pub fn make_banding(h: usize, w: usize, sigma: f32, orientation: Orientation, rng: &mut impl Rng) -> Result<Vec<f32>> {
    non_negative("banding sigma", sigma)?;
    if sigma == 0.0 {
        return Ok(vec![0.0; h * w]);
    }
    let n = match orientation {
        Orientation::Horizontal => h,
        Orientation::Vertical => w,
    };
    let offsets: Vec<f32> = (0..n).map(|_| (sigma as f64 * gaussian(rng)) as f32).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(match orientation {
                Orientation::Horizontal => offsets[y],
                Orientation::Vertical => offsets[x],
            });
        }
    }
    Ok(out)
}

fn add_pattern(frame: &mut Frame, pattern: &[f32]) {
    let c = frame.channels();
    for ch in 0..c {
        for (v, p) in frame.plane_mut(ch).iter_mut().zip(pattern) {
            *v += p;
        }
    }
}

/// The summed periodic pattern `Σ aᵢ·sin(2π(fxᵢ·x + fyᵢ·y) + φᵢ)` for each
/// channel of a `c×h×w` frame. With `per_channel`, each channel's phases are
/// shifted by a uniform offset drawn from `rng`.
pub fn periodic_pattern(
    dims: (usize, usize, usize),
    amplitudes: [f32; 3],
    components: &[Periodic; 3],
    per_channel: bool,
    rng: &mut impl Rng,
) -> Result<Frame> {
    let (c, h, w) = dims;
    for (i, a) in amplitudes.iter().enumerate() {
        non_negative(&format!("sigma_p{}", i + 1), *a)?;
    }
    components.iter().try_for_each(Periodic::validate)?;
    let mut out = Frame::filled(c, h, w, 0.0);
    if amplitudes.iter().all(|a| *a == 0.0) {
        return Ok(out);
    }
    for ch in 0..c {
        let shifts: [f64; 3] = if per_channel {
            std::array::from_fn(|_| 2.0 * PI * rng.random::<f64>())
        } else {
            [0.0; 3]
        };
        let plane = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0f64;
                for ((a, p), shift) in amplitudes.iter().zip(components).zip(shifts) {
                    if *a != 0.0 {
                        let arg = 2.0 * PI * (p.fx as f64 * x as f64 + p.fy as f64 * y as f64) + p.phase as f64 + shift;
                        s += *a as f64 * arg.sin();
                    }
                }
                plane[y * w + x] = s as f32;
            }
        }
    }
    Ok(out)
}

/// Add the periodic pattern of [`periodic_pattern`] to `frame`.
pub fn add_periodic(
    frame: &mut Frame,
    amplitudes: [f32; 3],
    components: &[Periodic; 3],
    per_channel: bool,
    rng: &mut impl Rng,
) -> Result<()> {
    let pattern = periodic_pattern(frame.dims(), amplitudes, components, per_channel, rng)?;
    for (v, p) in frame.data_mut().iter_mut().zip(pattern.data()) {
        *v += p;
    }
    Ok(())
}

/// Generator for clip-level draws (`stream == 0`) or frame `t`
/// (`stream == t + 1`).
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Combine a base seed with counters into a new seed (SplitMix64 finaliser
/// applied per part).
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, p| mix(acc ^ mix(*p)))
}

/// Corrupt every frame of `clip` with one parameter set. Clip-constant
/// banding and the periodic pattern are drawn once; shot/read noise,
/// per-frame banding and quantisation are fresh per frame.
pub fn corrupt_clip(clip: &Clip, params: &NoiseParams, seed: u64) -> Result<Clip> {
    params.validate()?;
    let (c, h, w) = (clip.channels(), clip.height(), clip.width());
    let mut clip_rng = substream(seed, 0);
    let temporal = make_banding(h, w, params.sigma_bt, params.banding_orientation, &mut clip_rng)?;
    let periodic = periodic_pattern(
        (c, h, w),
        params.sigma_p,
        &params.periodic,
        params.periodic_per_channel,
        &mut clip_rng,
    )?;
    let mut out = Vec::with_capacity(clip.num_frames());
    for t in 0..clip.num_frames() {
        let mut rng = substream(seed, t as u64 + 1);
        let mut f = clip.frame(t);
        add_heteroscedastic(&mut f, params.sigma_s, params.sigma_r, &mut rng)?;
        if params.sigma_b > 0.0 {
            let band = make_banding(h, w, params.sigma_b, params.banding_orientation, &mut rng)?;
            add_pattern(&mut f, &band);
        }
        if params.sigma_bt > 0.0 {
            add_pattern(&mut f, &temporal);
        }
        if params.sigma_p.iter().any(|a| *a > 0.0) {
            for (v, p) in f.data_mut().iter_mut().zip(periodic.data()) {
                *v += p;
            }
        }
        add_quantization(&mut f, params.lambda_q, &mut rng)?;
        f.clamp01();
        out.push(f);
    }
    Clip::from_frames(&out)
}

/// Additive white Gaussian noise of standard deviation `sigma_255 / 255`,
/// fresh per frame, clamped to `[0, 1]`.
pub fn add_awgn(clip: &Clip, sigma_255: f32, seed: u64) -> Result<Clip> {
    non_negative("sigma", sigma_255)?;
    let sigma = sigma_255 as f64 / 255.0;
    let mut out = clip.clone();
    for t in 0..clip.num_frames() {
        let mut rng = substream(seed, t as u64 + 1);
        for v in out.frame_data_mut(t) {
            *v = ((*v as f64 + sigma * gaussian(&mut rng)) as f32).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// How training clips are corrupted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Corruption {
    /// Fresh multi-component parameters per clip, drawn from the ranges.
    Physics(ParamRanges),
    /// Gaussian noise with standard deviation `sigma / 255`.
    Awgn { sigma: f32 },
}

impl Default for Corruption {
    fn default() -> Self {
        Corruption::Physics(ParamRanges::default())
    }
}

impl Corruption {
    pub fn validate(&self) -> Result<()> {
        match self {
            Corruption::Physics(ranges) => ranges.validate(),
            Corruption::Awgn { sigma } if sigma.is_finite() && *sigma >= 0.0 => Ok(()),
            Corruption::Awgn { sigma } => Err(Error::Config(format!("awgn sigma must be >= 0, got {sigma}"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Corruption = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("corruptions always serialise")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Corrupt `clip` and return it with the matching noise-level map of
    /// its center frame.
    pub fn apply(&self, clip: &Clip, seed: u64) -> Result<(Clip, Frame)> {
        match self {
            Corruption::Physics(ranges) => {
                let mut rng = substream(seed, u64::MAX);
                let params = sample_params(ranges, &mut rng)?;
                let noisy = corrupt_clip(clip, &params, seed)?;
                let map = params.level_map(&noisy.center());
                Ok((noisy, map))
            }
            Corruption::Awgn { sigma } => {
                let noisy = add_awgn(clip, *sigma, seed)?;
                let (c, h, w) = (clip.channels(), clip.height(), clip.width());
                Ok((noisy, Frame::filled(c, h, w, sigma / 255.0)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corruption_toml_round_trips() {
        for c in [Corruption::default(), Corruption::Awgn { sigma: 25.0 }] {
            assert_eq!(Corruption::from_toml(&c.to_toml()).unwrap(), c);
        }
        assert!(Corruption::from_toml("kind = \"awgn\"\nsigma = -1.0").is_err());
        assert!(Corruption::from_toml("kind = \"physics\"\nsigma_x = [0.0, 1.0]").is_err());
    }

    fn gray(t: usize, h: usize, w: usize, v: f32) -> Clip {
        Clip::from_frames(&vec![Frame::filled(3, h, w, v); t]).unwrap()
    }

    fn variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
        let n = v.clone().count() as f64;
        let mean = v.clone().sum::<f64>() / n;
        v.map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn degenerate_ranges_give_exact_values() {
        let mut p = NoiseParams::zero();
        p.sigma_s = 0.01;
        p.sigma_r = 0.02;
        p.lambda_q = 0.003;
        p.sigma_b = 0.004;
        p.sigma_bt = 0.005;
        p.sigma_p = [0.006, 0.007, 0.008];
        let r = ParamRanges::fixed(&p);
        let got = sample_params(&r, &mut substream(1, 0)).unwrap();
        assert_eq!(got.sigma_s, 0.01);
        assert_eq!(got.sigma_r, 0.02);
        assert_eq!(got.lambda_q, 0.003);
        assert_eq!(got.sigma_b, 0.004);
        assert_eq!(got.sigma_bt, 0.005);
        assert_eq!(got.sigma_p, [0.006, 0.007, 0.008]);
    }

    #[test]
    fn sampling_is_seeded() {
        let r = ParamRanges::default();
        let a = sample_params(&r, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_params(&r, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn uniform_mean_of_sigma_s() {
        let r = ParamRanges {
            sigma_s: Interval::new(0.0, 0.1),
            ..ParamRanges::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_params(&r, &mut rng).unwrap().sigma_s as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.05).abs() < 0.001, "{mean}");
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let r = ParamRanges {
            sigma_r: Interval::new(0.1, 0.05),
            ..ParamRanges::default()
        };
        assert!(r.validate().is_err());
        let r = ParamRanges {
            sigma_b: Interval::new(-0.1, 0.05),
            ..ParamRanges::default()
        };
        assert!(sample_params(&r, &mut substream(0, 0)).is_err());
        let r = ParamRanges {
            periodic_freq: Interval::new(0.1, 0.6),
            ..ParamRanges::default()
        };
        assert!(r.validate().is_err());
    }

    #[test]
    fn ranges_toml_round_trip_and_strict_keys() {
        let r = ParamRanges::default();
        assert_eq!(ParamRanges::from_toml(&r.to_toml()).unwrap(), r);
        let typo = r.to_toml().replace("sigma_bt", "sigma_tb");
        assert!(ParamRanges::from_toml(&typo).is_err());
    }

    #[test]
    fn heteroscedastic_variance_is_affine_in_signal() {
        let mut rng = substream(3, 1);
        for (x, want) in [(0.5f32, 0.01 * 0.5 + 0.0004), (0.0, 0.0004)] {
            let mut f = Frame::filled(1, 1000, 1000, x);
            add_heteroscedastic(&mut f, 0.01, 0.02, &mut rng).unwrap();
            let var = variance(f.data().iter().map(|v| *v as f64));
            assert!((var / want - 1.0).abs() < 0.02, "x={x}: {var} vs {want}");
        }
        let mut f = Frame::filled(1, 4, 4, 0.3);
        add_heteroscedastic(&mut f, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(f, Frame::filled(1, 4, 4, 0.3));
        assert!(add_heteroscedastic(&mut f, -0.1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn quantization_variance_and_support() {
        let mut rng = substream(4, 1);
        let mut f = Frame::filled(1, 1000, 1000, 0.5);
        add_quantization(&mut f, 0.1, &mut rng).unwrap();
        let d = f.data().iter().map(|v| *v as f64 - 0.5);
        let var = variance(d.clone());
        assert!((var / (0.01 / 12.0) - 1.0).abs() < 0.02, "{var}");
        assert!(d.map(f64::abs).fold(0.0, f64::max) <= 0.05 + 1e-7);
        let mut g = Frame::filled(1, 4, 4, 0.5);
        add_quantization(&mut g, 0.0, &mut rng).unwrap();
        assert_eq!(g, Frame::filled(1, 4, 4, 0.5));
    }

    #[test]
    fn banding_rows_are_constant() {
        let mut rng = substream(5, 1);
        assert!(make_banding(8, 8, 0.0, Orientation::Horizontal, &mut rng)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let (h, w) = (4096, 3);
        let p = make_banding(h, w, 0.05, Orientation::Horizontal, &mut rng).unwrap();
        for row in p.chunks(w) {
            assert!(row.iter().all(|v| *v == row[0]));
        }
        let var = variance(p.chunks(w).map(|r| r[0] as f64));
        assert!((var / 0.0025 - 1.0).abs() < 0.05, "{var}");
        let v = make_banding(3, 5, 0.05, Orientation::Vertical, &mut rng).unwrap();
        for y in 1..3 {
            assert_eq!(v[y * 5..y * 5 + 5], v[..5]);
        }
    }

    #[test]
    fn periodic_rejects_bad_frequency() {
        let mut f = Frame::filled(1, 8, 8, 0.0);
        let mut comps = NoiseParams::zero().periodic;
        comps[1].fx = 0.7;
        assert!(add_periodic(&mut f, [0.1, 0.0, 0.0], &comps, false, &mut substream(0, 0)).is_err());
        comps[1] = Periodic {
            fx: 0.0,
            fy: 0.0,
            phase: 0.0,
        };
        assert!(add_periodic(&mut f, [0.1, 0.0, 0.0], &comps, false, &mut substream(0, 0)).is_err());
    }

    #[test]
    fn periodic_pattern_has_zero_mean_over_whole_periods() {
        let comps = [
            Periodic {
                fx: 0.125,
                fy: 0.0,
                phase: 0.3,
            },
            Periodic {
                fx: 0.25,
                fy: 0.5,
                phase: 1.1,
            },
            Periodic {
                fx: 0.0625,
                fy: 0.125,
                phase: 2.0,
            },
        ];
        let p = periodic_pattern((3, 16, 16), [0.1, 0.05, 0.02], &comps, true, &mut substream(1, 0)).unwrap();
        for c in 0..3 {
            let mean = p.plane(c).iter().map(|v| *v as f64).sum::<f64>() / 256.0;
            assert!(mean.abs() < 1e-6, "{mean}");
        }
    }

    #[test]
    fn zero_parameters_leave_clip_unchanged() {
        let clip = gray(5, 6, 7, 0.4);
        assert_eq!(corrupt_clip(&clip, &NoiseParams::zero(), 9).unwrap(), clip);
    }

    #[test]
    fn temporal_banding_is_constant_across_frames() {
        let clip = gray(5, 16, 16, 0.5);
        let mut p = NoiseParams::zero();
        p.sigma_bt = 0.05;
        let noisy = corrupt_clip(&clip, &p, 11).unwrap();
        for t in 1..5 {
            assert_eq!(noisy.frame_data(t), noisy.frame_data(0));
        }
        assert_ne!(noisy, clip);
        p.sigma_bt = 0.0;
        p.sigma_b = 0.05;
        let noisy = corrupt_clip(&clip, &p, 11).unwrap();
        assert_ne!(noisy.frame_data(1), noisy.frame_data(0));
    }

    #[test]
    fn corruption_is_seeded_and_clamped() {
        let clip = gray(5, 12, 12, 0.9);
        let p = sample_params(&ParamRanges::default(), &mut substream(2, 0)).unwrap();
        let a = corrupt_clip(&clip, &p, 3).unwrap();
        assert_eq!(a, corrupt_clip(&clip, &p, 3).unwrap());
        assert_ne!(a, corrupt_clip(&clip, &p, 4).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn awgn_level_and_map() {
        let clip = gray(5, 64, 64, 0.5);
        let (noisy, map) = Corruption::Awgn { sigma: 25.0 }.apply(&clip, 1).unwrap();
        let var = variance(noisy.data().iter().map(|v| *v as f64));
        let want = (25.0f64 / 255.0).powi(2);
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
        assert!(map.data().iter().all(|v| *v == 25.0 / 255.0));
    }

    #[test]
    fn mix_seed_separates_counters() {
        assert_ne!(mix_seed(1, &[0, 1]), mix_seed(1, &[1, 0]));
        assert_eq!(mix_seed(7, &[3]), mix_seed(7, &[3]));
    }
}
