//! Reconstruction losses and image quality metrics.

use serde::{Deserialize, Serialize};

use crate::clip::{Clip, Frame};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Accumulates the excess over `eps` so identical inputs give exactly `eps`.
pub(crate) fn charbonnier_slices(a: &[f32], b: &[f32], eps: f64) -> f64 {
    let e2 = eps * eps;
    let excess: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            (d * d + e2).sqrt() - eps
        })
        .sum();
    eps + excess / a.len() as f64
}

/// Mean of `sqrt((x - y)² + eps²)`.
pub fn charbonnier(x: &Tensor, y: &Tensor, eps: f64) -> Result<f64> {
    x.same_shape(y, "charbonnier")?;
    Ok(charbonnier_slices(x.data(), y.data(), eps))
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    s / a.len() as f64
}

fn psnr_from_mse(m: f64) -> f64 {
    if m == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(x: &Frame, y: &Frame) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!("psnr: {:?} vs {:?}", x.dims(), y.dims())));
    }
    Ok(psnr_from_mse(mse(x.data(), y.data())))
}

/// PSNR over every sample of two clips.
pub fn psnr_clip(x: &Clip, y: &Clip) -> Result<f64> {
    let dx = (x.num_frames(), x.channels(), x.height(), x.width());
    let dy = (y.num_frames(), y.channels(), y.height(), y.width());
    if dx != dy {
        return Err(Error::Shape(format!("psnr: {dx:?} vs {dy:?}")));
    }
    Ok(psnr_from_mse(mse(x.data(), y.data())))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0f64; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable "valid" Gaussian filter of an h×w plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity: 11×11 Gaussian window (σ = 1.5), valid
/// positions only, computed per channel and averaged.
pub fn ssim(x: &Frame, y: &Frame) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!("ssim: {:?} vs {:?}", x.dims(), y.dims())));
    }
    let (c, h, w) = x.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs frames of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let a: Vec<f64> = x.plane(ch).iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = y.plane(ch).iter().map(|&v| v as f64).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
        let mu_a = filter_valid(&a, h, w, &g);
        let mu_b = filter_valid(&b, h, w, &g);
        let e_aa = filter_valid(&aa, h, w, &g);
        let e_bb = filter_valid(&bb, h, w, &g);
        let e_ab = filter_valid(&ab, h, w, &g);
        let mut s = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            s += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += s / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// PSNR and SSIM of a reconstruction against its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub frames: Vec<FrameMetrics>,
}

impl MetricReport {
    pub fn for_frames(x: &Frame, y: &Frame) -> Result<Self> {
        let p = psnr(x, y)?;
        let s = ssim(x, y)?;
        Ok(MetricReport {
            psnr_db: p,
            ssim: s,
            frames: vec![FrameMetrics {
                index: 0,
                psnr_db: p,
                ssim: s,
            }],
        })
    }

    /// Clip PSNR over all samples, SSIM averaged over frames.
    pub fn for_clips(x: &Clip, y: &Clip) -> Result<Self> {
        let psnr_db = psnr_clip(x, y)?;
        let frames = (0..x.num_frames())
            .map(|t| {
                let (a, b) = (x.frame(t), y.frame(t));
                Ok(FrameMetrics {
                    index: t,
                    psnr_db: psnr(&a, &b)?,
                    ssim: ssim(&a, &b)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ssim = frames.iter().map(|f| f.ssim).sum::<f64>() / frames.len() as f64;
        Ok(MetricReport { psnr_db, ssim, frames })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,psnr_db,ssim\n");
        for f in &self.frames {
            s.push_str(&format!("{},{},{}\n", f.index, f.psnr_db, f.ssim));
        }
        s
    }
}
