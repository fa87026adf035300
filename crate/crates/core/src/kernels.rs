//! Raw compute kernels behind the tape operations.
//!
//! Every output element of [`conv2d_forward`] is accumulated from zero over
//! the flattened `(channel, ky, kx)` index in increasing order, and the bias
//! is added last. A direct nested loop with the same order reproduces the
//! result bit for bit.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MR: usize = 4;
const NR: usize = 8;
/// Upper bound on the im2col scratch size in floats.
const COL_BUDGET: usize = 1 << 18;

/// `c = a · b` with `a: m×k`, `b: k×n`, all row-major. Each output is a
/// sequential sum over `k` starting from zero, so every code path gives the
/// same bits.
pub fn gemm(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { gemm_avx2(m, n, k, a, b, c) };
        return;
    }
    gemm_body::<NR>(m, n, k, a, b, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    use std::arch::x86_64::*;
    const W: usize = 16;
    let mut apack = vec![0f32; k * MR];
    let mut i0 = 0;
    while i0 + MR <= m {
        for kk in 0..k {
            for r in 0..MR {
                apack[kk * MR + r] = a[(i0 + r) * k + kk];
            }
        }
        let mut j0 = 0;
        while j0 + W <= n {
            let mut acc = [_mm256_setzero_ps(); 2 * MR];
            let ap = apack.as_ptr();
            let bp = b.as_ptr().add(j0);
            for kk in 0..k {
                // SAFETY: kk < k and j0 + W <= n keep both loads inside `b`;
                // the apack reads stay below k·MR.
                let b0 = _mm256_loadu_ps(bp.add(kk * n));
                let b1 = _mm256_loadu_ps(bp.add(kk * n + 8));
                for r in 0..MR {
                    let av = _mm256_set1_ps(*ap.add(kk * MR + r));
                    acc[2 * r] = _mm256_add_ps(acc[2 * r], _mm256_mul_ps(av, b0));
                    acc[2 * r + 1] = _mm256_add_ps(acc[2 * r + 1], _mm256_mul_ps(av, b1));
                }
            }
            for r in 0..MR {
                let dst = c.as_mut_ptr().add((i0 + r) * n + j0);
                _mm256_storeu_ps(dst, acc[2 * r]);
                _mm256_storeu_ps(dst.add(8), acc[2 * r + 1]);
            }
            j0 += W;
        }
        for j in j0..n {
            for r in 0..MR {
                let mut s = 0f32;
                for kk in 0..k {
                    s += apack[kk * MR + r] * b[kk * n + j];
                }
                c[(i0 + r) * n + j] = s;
            }
        }
        i0 += MR;
    }
    if i0 < m {
        // zero rows pad the tail to a full block without touching real rows
        let rows = m - i0;
        let mut pa = vec![0f32; MR * k];
        pa[..rows * k].copy_from_slice(&a[i0 * k..m * k]);
        let mut pc = vec![0f32; MR * n];
        gemm_avx2(MR, n, k, &pa, b, &mut pc);
        c[i0 * n..m * n].copy_from_slice(&pc[..rows * n]);
    }
}

#[inline(always)]
fn gemm_body<const W: usize>(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    let b = &b[..k * n];
    let mut apack = vec![0f32; k * MR];
    let mut i0 = 0;
    while i0 + MR <= m {
        for kk in 0..k {
            for r in 0..MR {
                apack[kk * MR + r] = a[(i0 + r) * k + kk];
            }
        }
        let mut j0 = 0;
        while j0 + W <= n {
            let mut acc = [[0f32; W]; MR];
            for (ap, brow) in apack.chunks_exact(MR).zip(b[j0..].chunks(n)) {
                let brow: &[f32; W] = brow[..W].try_into().unwrap();
                for r in 0..MR {
                    for cc in 0..W {
                        acc[r][cc] += ap[r] * brow[cc];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i0 + r) * n + j0..(i0 + r) * n + j0 + W].copy_from_slice(row);
            }
            j0 += W;
        }
        for j in j0..n {
            for r in 0..MR {
                let mut s = 0f32;
                for kk in 0..k {
                    s += apack[kk * MR + r] * b[kk * n + j];
                }
                c[(i0 + r) * n + j] = s;
            }
        }
        i0 += MR;
    }
    for i in i0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        crow.fill(0.0);
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c = a · bᵀ` with `a: m×k`, `b: n×k`, both row-major. Each output is
/// the sum of eight interleaved partial sums (lane `l` takes `kk ≡ l mod 8`),
/// combined pairwise; the vector and portable paths agree bit for bit.
pub fn gemm_nt(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { gemm_nt_avx2(m, n, k, a, b, c) };
        return;
    }
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = dot_lanes(&a[i * k..(i + 1) * k], &b[j * k..(j + 1) * k]);
        }
    }
}

fn reduce_lanes(l: [f32; 8]) -> f32 {
    ((l[0] + l[4]) + (l[2] + l[6])) + ((l[1] + l[5]) + (l[3] + l[7]))
}

fn dot_lanes(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0f32; 8];
    let full = a.len() / 8 * 8;
    for (ca, cb) in a[..full].chunks_exact(8).zip(b[..full].chunks_exact(8)) {
        for l in 0..8 {
            lanes[l] += ca[l] * cb[l];
        }
    }
    for (l, (x, y)) in a[full..].iter().zip(&b[full..]).enumerate() {
        lanes[l] += x * y;
    }
    reduce_lanes(lanes)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_nt_avx2(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    use std::arch::x86_64::*;
    let full = k / 8 * 8;
    let mut i = 0;
    while i + 4 <= m {
        let mut j = 0;
        while j + 2 <= n {
            let mut acc = [[_mm256_setzero_ps(); 2]; 4];
            let (ap, bp) = (a.as_ptr().add(i * k), b.as_ptr().add(j * k));
            let mut kk = 0;
            while kk < full {
                // SAFETY: kk + 8 <= k for every row read.
                let b0 = _mm256_loadu_ps(bp.add(kk));
                let b1 = _mm256_loadu_ps(bp.add(k + kk));
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = _mm256_loadu_ps(ap.add(r * k + kk));
                    row[0] = _mm256_add_ps(row[0], _mm256_mul_ps(av, b0));
                    row[1] = _mm256_add_ps(row[1], _mm256_mul_ps(av, b1));
                }
                kk += 8;
            }
            for (r, row) in acc.iter().enumerate() {
                for (q, v) in row.iter().enumerate() {
                    let mut lanes = [0f32; 8];
                    _mm256_storeu_ps(lanes.as_mut_ptr(), *v);
                    let (ar, br) = (&a[(i + r) * k..(i + r + 1) * k], &b[(j + q) * k..(j + q + 1) * k]);
                    for (l, (x, y)) in ar[full..].iter().zip(&br[full..]).enumerate() {
                        lanes[l] += x * y;
                    }
                    c[(i + r) * n + j + q] = reduce_lanes(lanes);
                }
            }
            j += 2;
        }
        for jj in j..n {
            for r in 0..4 {
                c[(i + r) * n + jj] = dot_lanes(&a[(i + r) * k..(i + r + 1) * k], &b[jj * k..(jj + 1) * k]);
            }
        }
        i += 4;
    }
    if i < m {
        let rows = m - i;
        let mut pa = vec![0f32; 4 * k];
        pa[..rows * k].copy_from_slice(&a[i * k..m * k]);
        let mut pc = vec![0f32; 4 * n];
        gemm_nt_avx2(4, n, k, &pa, b, &mut pc);
        c[i * n..m * n].copy_from_slice(&pc[..rows * n]);
    }
}

fn transpose(rows: usize, cols: usize, src: &[f32], dst: &mut [f32]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Stride, zero padding and group count of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvGeometry {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    ho: usize,
    wo: usize,
    cg: usize,
    og: usize,
}

impl ConvDims {
    fn kg(&self) -> usize {
        self.cg * self.k * self.k
    }

    fn chunk(&self) -> usize {
        let p = self.ho * self.wo;
        let c = (COL_BUDGET / self.kg().max(1)).max(256);
        let c = c - c % NR;
        c.min(p).max(1)
    }
}

fn conv_dims(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geo: ConvGeometry) -> Result<ConvDims> {
    let [n, c, h, w] = input.dims4()?;
    let [o, cg, k, k2] = weight.dims4().map_err(|_| {
        Error::Shape(format!(
            "conv2d weight must be rank 4 (O×I×k×k), got {:?}",
            weight.shape()
        ))
    })?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "conv2d kernel must be square, weight has shape {:?}",
            weight.shape()
        )));
    }
    if geo.stride == 0 || geo.groups == 0 {
        return Err(Error::InvalidArgument(
            "conv2d stride and groups must be positive".into(),
        ));
    }
    if c % geo.groups != 0 || o % geo.groups != 0 || cg * geo.groups != c {
        return Err(Error::Shape(format!(
            "conv2d input {:?} has {c} channels but weight {:?} expects {} ({} groups of {cg})",
            input.shape(),
            weight.shape(),
            cg * geo.groups,
            geo.groups
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::Shape(format!(
                "conv2d bias {:?} does not match weight {:?} output count {o}",
                b.shape(),
                weight.shape()
            )));
        }
    }
    if h + 2 * geo.padding < k || w + 2 * geo.padding < k {
        return Err(Error::Shape(format!(
            "conv2d input {:?} smaller than kernel {k} with padding {}",
            input.shape(),
            geo.padding
        )));
    }
    let ho = (h + 2 * geo.padding - k) / geo.stride + 1;
    let wo = (w + 2 * geo.padding - k) / geo.stride + 1;
    Ok(ConvDims {
        n,
        c,
        h,
        w,
        o,
        k,
        ho,
        wo,
        cg,
        og: o / geo.groups,
    })
}

/// Fill `col[kidx * pc + j]` with the input sample under kernel tap `kidx`
/// for output pixel `p0 + j`.
#[allow(clippy::too_many_arguments)]
fn im2col(plane0: &[f32], d: &ConvDims, geo: ConvGeometry, p0: usize, pc: usize, col: &mut [f32]) {
    let (h, w, k) = (d.h, d.w, d.k);
    let pad = geo.padding as isize;
    for c in 0..d.cg {
        let plane = &plane0[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * pc..][..pc];
                let mut oy = p0 / d.wo;
                let mut ox = p0 % d.wo;
                let mut j = 0;
                while j < pc {
                    let run = (d.wo - ox).min(pc - j);
                    let iy = (oy * geo.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        row[j..j + run].fill(0.0);
                    } else {
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut row[j..j + run];
                        if geo.stride == 1 {
                            // valid t satisfy 0 <= ox + t + kx - pad < w
                            let base = (ox + kx) as isize - pad;
                            let lo = (-base).clamp(0, run as isize) as usize;
                            let hi = (w as isize - base).clamp(lo as isize, run as isize) as usize;
                            dst[..lo].fill(0.0);
                            dst[hi..].fill(0.0);
                            if hi > lo {
                                let s0 = (base + lo as isize) as usize;
                                dst[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                            }
                        } else {
                            for (t, v) in dst.iter_mut().enumerate() {
                                let ix = ((ox + t) * geo.stride + kx) as isize - pad;
                                *v = if ix >= 0 && ix < w as isize {
                                    src[ix as usize]
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                    j += run;
                    ox = 0;
                    oy += 1;
                }
            }
        }
    }
}

/// Scatter-add a column buffer back onto an input plane group.
fn col2im(col: &[f32], d: &ConvDims, geo: ConvGeometry, p0: usize, pc: usize, plane0: &mut [f32]) {
    let (h, w, k) = (d.h, d.w, d.k);
    let pad = geo.padding as isize;
    for c in 0..d.cg {
        let plane = &mut plane0[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * pc..][..pc];
                let mut oy = p0 / d.wo;
                let mut ox = p0 % d.wo;
                let mut j = 0;
                while j < pc {
                    let run = (d.wo - ox).min(pc - j);
                    let iy = (oy * geo.stride + ky) as isize - pad;
                    if iy >= 0 && iy < h as isize {
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[j..j + run];
                        if geo.stride == 1 {
                            let base = (ox + kx) as isize - pad;
                            let lo = (-base).clamp(0, run as isize) as usize;
                            let hi = (w as isize - base).clamp(lo as isize, run as isize) as usize;
                            if hi > lo {
                                let d0 = (base + lo as isize) as usize;
                                for (d, v) in dst[d0..d0 + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                    *d += v;
                                }
                            }
                        } else {
                            for (t, v) in src.iter().enumerate() {
                                let ix = ((ox + t) * geo.stride + kx) as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    dst[ix as usize] += v;
                                }
                            }
                        }
                    }
                    j += run;
                    ox = 0;
                    oy += 1;
                }
            }
        }
    }
}

/// Cross-correlation of an N×C×H×W input with an O×(C/groups)×k×k weight.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geo: ConvGeometry) -> Result<Tensor> {
    let d = conv_dims(input, weight, bias, geo)?;
    let kg = d.kg();
    let p_total = d.ho * d.wo;
    let chunk = d.chunk();
    let mut col = vec![0f32; kg * chunk];
    let mut tmp = vec![0f32; d.og * chunk];
    let mut out = vec![0f32; d.n * d.o * p_total];
    let x = input.data();
    let wt = weight.data();
    for n in 0..d.n {
        for g in 0..geo.groups {
            let plane0 = &x[(n * d.c + g * d.cg) * d.h * d.w..][..d.cg * d.h * d.w];
            let wg = &wt[g * d.og * kg..(g + 1) * d.og * kg];
            let mut p0 = 0;
            while p0 < p_total {
                let pc = chunk.min(p_total - p0);
                im2col(plane0, &d, geo, p0, pc, &mut col[..kg * pc]);
                gemm(d.og, pc, kg, wg, &col[..kg * pc], &mut tmp[..d.og * pc]);
                for oi in 0..d.og {
                    let o = g * d.og + oi;
                    out[(n * d.o + o) * p_total + p0..][..pc].copy_from_slice(&tmp[oi * pc..(oi + 1) * pc]);
                }
                p0 += pc;
            }
        }
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                for v in &mut out[(n * d.o + o) * p_total..][..p_total] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(vec![d.n, d.o, d.ho, d.wo], out)
}

/// Gradients of a convolution. `need_input` skips the input gradient when the
/// input is data rather than a differentiable node.
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    geo: ConvGeometry,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let d = conv_dims(input, weight, None, geo)?;
    if grad_out.shape() != [d.n, d.o, d.ho, d.wo] {
        return Err(Error::Shape(format!(
            "conv2d gradient {:?} does not match output {:?}",
            grad_out.shape(),
            [d.n, d.o, d.ho, d.wo]
        )));
    }
    let kg = d.kg();
    let p_total = d.ho * d.wo;
    let chunk = d.chunk();
    let x = input.data();
    let gy = grad_out.data();
    let wt = weight.data();

    let mut dw = vec![0f32; weight.len()];
    let mut dx = if need_input {
        Some(vec![0f32; input.len()])
    } else {
        None
    };
    let mut col = vec![0f32; kg * chunk];
    let mut gy_chunk = vec![0f32; d.og * chunk];
    let mut tmp_dw = vec![0f32; d.og * kg];
    let mut w_t: Vec<Vec<f32>> = Vec::new();
    if need_input {
        for g in 0..geo.groups {
            let mut t = vec![0f32; d.og * kg];
            transpose(d.og, kg, &wt[g * d.og * kg..(g + 1) * d.og * kg], &mut t);
            w_t.push(t);
        }
    }

    for n in 0..d.n {
        for g in 0..geo.groups {
            let plane_off = (n * d.c + g * d.cg) * d.h * d.w;
            let plane_len = d.cg * d.h * d.w;
            let mut p0 = 0;
            while p0 < p_total {
                let pc = chunk.min(p_total - p0);
                for oi in 0..d.og {
                    let o = g * d.og + oi;
                    gy_chunk[oi * pc..(oi + 1) * pc].copy_from_slice(&gy[(n * d.o + o) * p_total + p0..][..pc]);
                }
                im2col(
                    &x[plane_off..plane_off + plane_len],
                    &d,
                    geo,
                    p0,
                    pc,
                    &mut col[..kg * pc],
                );
                gemm_nt(d.og, kg, pc, &gy_chunk[..d.og * pc], &col[..kg * pc], &mut tmp_dw);
                for (acc, &v) in dw[g * d.og * kg..(g + 1) * d.og * kg].iter_mut().zip(&tmp_dw) {
                    *acc += v;
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(kg, pc, d.og, &w_t[g], &gy_chunk[..d.og * pc], &mut col[..kg * pc]);
                    col2im(
                        &col[..kg * pc],
                        &d,
                        geo,
                        p0,
                        pc,
                        &mut dx[plane_off..plane_off + plane_len],
                    );
                }
                p0 += pc;
            }
        }
    }

    let bias = if has_bias {
        let mut db = vec![0f32; d.o];
        for n in 0..d.n {
            for (o, acc) in db.iter_mut().enumerate() {
                for &v in &gy[(n * d.o + o) * p_total..][..p_total] {
                    *acc += v;
                }
            }
        }
        Some(Tensor::new(vec![d.o], db)?)
    } else {
        None
    };
    Ok(ConvGrads {
        input: dx.map(|v| Tensor::new(input.shape().to_vec(), v)).transpose()?,
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias,
    })
}

/// N×(C·r²)×H×W → N×C×(rH)×(rW).
pub fn pixel_shuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let [n, cr, h, w] = input.dims4()?;
    if r == 0 || cr % (r * r) != 0 {
        return Err(Error::Shape(format!(
            "pixel_shuffle: {cr} channels not divisible by r² = {}",
            r * r
        )));
    }
    let c = cr / (r * r);
    let src = input.data();
    let mut out = vec![0f32; src.len()];
    let (oh, ow) = (h * r, w * r);
    for b in 0..n {
        for co in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let ci = co * r * r + i * r + j;
                    let plane = &src[(b * cr + ci) * h * w..][..h * w];
                    for y in 0..h {
                        let dst_row = &mut out[((b * c + co) * oh + r * y + i) * ow..][..ow];
                        for x in 0..w {
                            dst_row[r * x + j] = plane[y * w + x];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`]: N×C×(rH)×(rW) → N×(C·r²)×H×W.
pub fn pixel_unshuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let [n, c, oh, ow] = input.dims4()?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::Shape(format!(
            "pixel_unshuffle: spatial size {oh}×{ow} not divisible by {r}"
        )));
    }
    let (h, w) = (oh / r, ow / r);
    let cr = c * r * r;
    let src = input.data();
    let mut out = vec![0f32; src.len()];
    for b in 0..n {
        for co in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let ci = co * r * r + i * r + j;
                    let plane = &mut out[(b * cr + ci) * h * w..][..h * w];
                    for y in 0..h {
                        let src_row = &src[((b * c + co) * oh + r * y + i) * ow..][..ow];
                        for x in 0..w {
                            plane[y * w + x] = src_row[r * x + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, cr, h, w], out)
}

fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        2 * (len - 1) - i
    }
}

/// Extend the bottom and right edges by mirror reflection (edge sample not
/// repeated).
pub(crate) fn reflect_pad(input: &Tensor, pad_bottom: usize, pad_right: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4()?;
    if pad_bottom >= h || pad_right >= w {
        return Err(Error::Shape(format!(
            "reflect padding ({pad_bottom}, {pad_right}) needs more than that many rows and columns, input is {h}×{w}"
        )));
    }
    let (ph, pw) = (h + pad_bottom, w + pad_right);
    let src = input.data();
    let mut out = vec![0f32; n * c * ph * pw];
    for p in 0..n * c {
        for y in 0..ph {
            let sy = reflect(y, h);
            for x in 0..pw {
                out[(p * ph + y) * pw + x] = src[(p * h + sy) * w + reflect(x, w)];
            }
        }
    }
    Tensor::new(vec![n, c, ph, pw], out)
}

pub(crate) fn reflect_pad_backward(grad: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [n, c, ph, pw] = grad.dims4()?;
    let g = grad.data();
    let mut out = vec![0f32; n * c * h * w];
    for p in 0..n * c {
        for y in 0..ph {
            let sy = reflect(y, h);
            for x in 0..pw {
                out[(p * h + sy) * w + reflect(x, w)] += g[(p * ph + y) * pw + x];
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Keep the top-left `h`×`w` window.
pub(crate) fn crop(input: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [n, c, ih, iw] = input.dims4()?;
    if h > ih || w > iw {
        return Err(Error::Shape(format!("crop to {h}×{w} larger than input {ih}×{iw}")));
    }
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * h * w);
    for p in 0..n * c {
        for y in 0..h {
            out.extend_from_slice(&src[(p * ih + y) * iw..][..w]);
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

pub(crate) fn crop_backward(grad: &Tensor, ih: usize, iw: usize) -> Result<Tensor> {
    let [n, c, h, w] = grad.dims4()?;
    let g = grad.data();
    let mut out = vec![0f32; n * c * ih * iw];
    for p in 0..n * c {
        for y in 0..h {
            out[(p * ih + y) * iw..][..w].copy_from_slice(&g[(p * h + y) * w..][..w]);
        }
    }
    Tensor::new(vec![n, c, ih, iw], out)
}
