//! File formats and dataset ingestion.
//!
//! * `PDVD` clips: magic, u32 version (1), u32 T, H, W, C, then `T·C·H·W`
//!   little-endian f32 values in `[0, 1]`, frame-major, then channel, then
//!   row-major.
//! * `PDWT` weights: magic, u32 version (1), u32 tensor count, then per
//!   tensor a u16 name length, UTF-8 name, u8 rank, u32 dims and
//!   little-endian f32 data.
//! * Datasets: a directory of clip folders holding numbered 8-bit RGB PNG
//!   frames, and/or `.pdvd` files.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clip::{Clip, Frame, CLIP_FRAMES};
use crate::error::{Error, FormatError, Result};
use crate::net::{Model, NetworkSpec};
use crate::tensor::Tensor;

pub const CLIP_MAGIC: [u8; 4] = *b"PDVD";
pub const WEIGHTS_MAGIC: [u8; 4] = *b"PDWT";
pub const FORMAT_VERSION: u32 = 1;
const CLIP_HEADER: usize = 24;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - (self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let m: [u8; 4] = self.take(4)?.try_into().unwrap();
        if m != expected {
            return Err(FormatError::BadMagic { expected, found: m });
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(v));
        }
        Ok(())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn encode_clip(clip: &Clip) -> Vec<u8> {
    let mut out = Vec::with_capacity(CLIP_HEADER + clip.data().len() * 4);
    out.extend_from_slice(&CLIP_MAGIC);
    for v in [
        FORMAT_VERSION,
        clip.num_frames() as u32,
        clip.height() as u32,
        clip.width() as u32,
        clip.channels() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in clip.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode a clip. A payload shorter than the header promises is
/// [`FormatError::Truncated`]; one that is longer, or a header with a zero
/// dimension, is [`FormatError::HeaderMismatch`].
pub fn decode_clip(bytes: &[u8]) -> Result<Clip, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(CLIP_MAGIC)?;
    let (t, h, w, c) = (
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
    );
    let n = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .filter(|&n| n > 0)
        .ok_or_else(|| FormatError::HeaderMismatch(format!("invalid dimensions T={t} H={h} W={w} C={c}")))?;
    if r.remaining() / 4 > n || (r.remaining() >= n * 4 && r.remaining() != n * 4) {
        return Err(FormatError::HeaderMismatch(format!(
            "header declares {n} values ({t}×{c}×{h}×{w}) but the payload holds {} bytes",
            r.remaining()
        )));
    }
    let data = r.f32s(n)?;
    if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(FormatError::ValueOutOfRange { index, value });
    }
    Ok(Clip::new(t, c, h, w, data).expect("dimensions checked"))
}

pub fn write_clip(path: impl AsRef<Path>, clip: &Clip) -> Result<()> {
    if let Some((index, &value)) = clip.data().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(FormatError::ValueOutOfRange { index, value }.into());
    }
    let path = path.as_ref();
    std::fs::write(path, encode_clip(clip)).map_err(|e| Error::io(path, e))
}

pub fn read_clip(path: impl AsRef<Path>) -> Result<Clip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_clip(&bytes)?)
}

pub fn encode_tensors(tensors: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(WEIGHTS_MAGIC)?;
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FormatError::BadName)?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| FormatError::HeaderMismatch(format!("tensor {name:?} dimensions {shape:?} overflow")))?;
        let data = r.f32s(n)?;
        out.push((name, Tensor::new(shape, data).expect("length matches shape")));
    }
    if r.remaining() != 0 {
        return Err(FormatError::HeaderMismatch(format!(
            "{} trailing bytes after {count} tensors",
            r.remaining()
        )));
    }
    Ok(out)
}

pub fn write_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensors(&model.named_tensors())).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Model::from_named_tensors(spec, decode_tensors(&bytes)?)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut f = Frame::filled(3, h, w, 0.0);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            f.plane_mut(c)[y as usize * w + x as usize] = p[c] as f32 / 255.0;
        }
    }
    Ok(f)
}

/// Write a 3-channel frame as an 8-bit RGB PNG (values rounded and clamped).
pub fn write_png(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = frame.dims();
    if c != 3 {
        return Err(Error::InvalidArgument(format!("PNG output needs 3 channels, got {c}")));
    }
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb(std::array::from_fn(|ch| {
            (frame.plane(ch)[i].clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Write each frame of `clip` as `<dir>/<index:05>.png`.
pub fn write_frame_folder(dir: impl AsRef<Path>, clip: &Clip) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..clip.num_frames() {
        write_png(dir.join(format!("{t:05}.png")), &clip.frame(t))?;
    }
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

/// Read a folder of numbered PNG frames. Numbers must be gapless.
pub fn read_frame_folder(dir: impl AsRef<Path>) -> Result<Clip> {
    let dir = dir.as_ref();
    let mut numbered: Vec<(u64, PathBuf)> = Vec::new();
    for p in sorted_entries(dir)? {
        if p.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
            != Some("png")
        {
            continue;
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let digits: String = stem.chars().filter(|c| c.is_ascii_digit()).collect();
        let n = digits
            .parse::<u64>()
            .map_err(|_| Error::Dataset(format!("frame {} has no frame number", p.display())))?;
        numbered.push((n, p));
    }
    numbered.sort();
    if numbered.is_empty() {
        return Err(Error::Dataset(format!("{} holds no PNG frames", dir.display())));
    }
    for (k, pair) in numbered.windows(2).enumerate() {
        if pair[1].0 != pair[0].0 + 1 {
            return Err(Error::Dataset(format!(
                "{}: frame numbering jumps from {} to {} (after frame {k})",
                dir.display(),
                pair[0].0,
                pair[1].0
            )));
        }
    }
    let frames = numbered.iter().map(|(_, p)| read_png(p)).collect::<Result<Vec<_>>>()?;
    let (c, h, w) = frames[0].dims();
    for ((_, p), f) in numbered.iter().zip(&frames) {
        if f.dims() != (c, h, w) {
            return Err(Error::Dataset(format!(
                "{} is {}×{} but earlier frames are {h}×{w}",
                p.display(),
                f.height(),
                f.width()
            )));
        }
    }
    Clip::from_frames(&frames)
}

/// Every source clip in `dir`: each subfolder of PNG frames and each
/// `.pdvd` file, keyed by name, in sorted order.
pub fn read_clip_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, Clip)>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for p in sorted_entries(dir)? {
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("").to_string();
        if p.is_dir() {
            out.push((name, read_frame_folder(&p)?));
        } else if p.extension().and_then(|e| e.to_str()) == Some("pdvd") {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
            out.push((stem, read_clip(&p)?));
        }
    }
    Ok(out)
}

/// Five-frame training windows from a dataset directory: every temporal
/// window of consecutive frames, cropped to `patch×patch` at offsets that
/// are multiples of `stride`, in an order shuffled by `seed`. Clips with
/// fewer than five frames are skipped with a warning.
pub fn load_dataset(dir: impl AsRef<Path>, patch: usize, stride: usize, seed: u64) -> Result<Vec<(String, Clip)>> {
    if patch == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch size and stride must be positive".into()));
    }
    let mut out = Vec::new();
    for (name, clip) in read_clip_dir(dir)? {
        if clip.num_frames() < CLIP_FRAMES {
            log::warn!(
                "skipping clip {name:?}: {} frames, need {CLIP_FRAMES}",
                clip.num_frames()
            );
            continue;
        }
        let (h, w) = (clip.height(), clip.width());
        if h < patch || w < patch {
            log::warn!("skipping clip {name:?}: {h}×{w} is smaller than the {patch}×{patch} patch");
            continue;
        }
        for t in 0..=clip.num_frames() - CLIP_FRAMES {
            let window = clip.window(t, CLIP_FRAMES)?;
            for y in (0..=h - patch).step_by(stride) {
                for x in (0..=w - patch).step_by(stride) {
                    out.push((format!("{name}/t{t}/y{y}x{x}"), window.crop(y, x, patch, patch)?));
                }
            }
        }
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out)
}

/// Path of the precomputed output for clip `id` under `dir`: slashes in the
/// id become subdirectories, and the file is a one-frame `.pdvd`.
pub fn teacher_output_path(dir: impl AsRef<Path>, id: &str) -> PathBuf {
    let mut p = dir.as_ref().to_path_buf();
    for part in id.split('/') {
        p.push(part);
    }
    p.set_extension("pdvd");
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Clip {
        let data: Vec<f32> = (0..2 * 3 * 4 * 5).map(|i| (i as f32 * 0.37).fract()).collect();
        Clip::new(2, 3, 4, 5, data).unwrap()
    }

    #[test]
    fn clip_round_trip_is_bit_exact() {
        let c = fixture();
        let bytes = encode_clip(&c);
        assert_eq!(&bytes[..4], b"PDVD");
        let back = decode_clip(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_clip(&back), bytes);
    }

    #[test]
    fn clip_errors_are_distinct() {
        let bytes = encode_clip(&fixture());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_clip(&bad), Err(FormatError::BadMagic { .. })));
        assert!(matches!(
            decode_clip(&bytes[..bytes.len() - 6]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(decode_clip(&bytes[..10]), Err(FormatError::Truncated { .. })));
        let mut fewer = bytes.clone();
        fewer[8..12].copy_from_slice(&1u32.to_le_bytes());
        assert!(matches!(decode_clip(&fewer), Err(FormatError::HeaderMismatch(_))));
        let mut version = bytes.clone();
        version[4] = 9;
        assert_eq!(decode_clip(&version), Err(FormatError::UnsupportedVersion(9)));
        let mut range = bytes.clone();
        range[CLIP_HEADER..CLIP_HEADER + 4].copy_from_slice(&1.5f32.to_le_bytes());
        assert_eq!(
            decode_clip(&range),
            Err(FormatError::ValueOutOfRange { index: 0, value: 1.5 })
        );
    }

    #[test]
    fn tensor_round_trip_and_errors() {
        let a = Tensor::from_fn(vec![2, 3], |i| i as f32 - 2.5);
        let b = Tensor::scalar(7.0);
        let bytes = encode_tensors(&[("a.weight".into(), &a), ("b".into(), &b)]);
        let back = decode_tensors(&bytes).unwrap();
        assert_eq!(back, vec![("a.weight".to_string(), a), ("b".to_string(), b)]);
        assert!(matches!(
            decode_tensors(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_tensors(&extra), Err(FormatError::HeaderMismatch(_))));
        assert!(matches!(
            decode_tensors(b"PDVD\x01\0\0\0"),
            Err(FormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn teacher_paths_nest_ids() {
        let p = teacher_output_path("/tmp/t", "seq/t0/y0x8");
        assert_eq!(p, PathBuf::from("/tmp/t/seq/t0/y0x8.pdvd"));
    }
}
