//! Planar frames and clips of video data in `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A single C×H×W image, channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(Error::Shape(format!(
                "frame {channels}×{height}×{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Frame {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Frame {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.height * self.width;
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.channels, self.height, self.width], self.data.clone())
            .expect("frame dims are consistent")
    }

    /// Interpret a 1×C×H×W tensor as a frame.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [n, c, h, w] = t.dims4()?;
        if n != 1 {
            return Err(Error::Shape(format!(
                "expected a single frame, tensor has batch size {n}"
            )));
        }
        Frame::new(c, h, w, t.data().to_vec())
    }

    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Frame> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::Shape(format!(
                "crop {h}×{w} at ({y}, {x}) exceeds frame {}×{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for row in y..y + h {
                data.extend_from_slice(&plane[row * self.width + x..row * self.width + x + w]);
            }
        }
        Frame::new(self.channels, h, w, data)
    }
}

/// Stack same-sized frames into an N×C×H×W tensor.
pub fn stack_frames<'a>(frames: impl IntoIterator<Item = &'a Frame>) -> Result<Tensor> {
    let mut dims = None;
    let mut data = Vec::new();
    let mut n = 0;
    for f in frames {
        match dims {
            None => dims = Some(f.dims()),
            Some(d) if d != f.dims() => {
                return Err(Error::Shape(format!(
                    "cannot stack frames of dims {d:?} and {:?}",
                    f.dims()
                )))
            }
            _ => {}
        }
        data.extend_from_slice(f.data());
        n += 1;
    }
    let (c, h, w) = dims.ok_or_else(|| Error::InvalidArgument("no frames to stack".into()))?;
    Tensor::new(vec![n, c, h, w], data)
}

/// Split an N×C×H×W tensor into frames.
pub fn unstack_frames(t: &Tensor) -> Result<Vec<Frame>> {
    let [n, c, h, w] = t.dims4()?;
    let p = c * h * w;
    (0..n)
        .map(|i| Frame::new(c, h, w, t.data()[i * p..(i + 1) * p].to_vec()))
        .collect()
}

/// Number of frames a denoiser input window spans.
pub const CLIP_FRAMES: usize = 5;

/// T frames of identical dimensions, stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Clip {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if frames * channels * height * width != data.len() {
            return Err(Error::Shape(format!(
                "clip {frames}×{channels}×{height}×{width} needs {} values, got {}",
                frames * channels * height * width,
                data.len()
            )));
        }
        Ok(Clip {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_frames(frames: &[Frame]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("clip needs at least one frame".into()))?;
        let (c, h, w) = first.dims();
        let mut data = Vec::with_capacity(frames.len() * c * h * w);
        for f in frames {
            if f.dims() != (c, h, w) {
                return Err(Error::Shape(format!(
                    "clip frames disagree: {:?} vs {:?}",
                    first.dims(),
                    f.dims()
                )));
            }
            data.extend_from_slice(f.data());
        }
        Clip::new(frames.len(), c, h, w, data)
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> Frame {
        let n = self.frame_len();
        Frame::new(
            self.channels,
            self.height,
            self.width,
            self.data[t * n..(t + 1) * n].to_vec(),
        )
        .expect("clip dims are consistent")
    }

    pub fn frame_data(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_data_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> Vec<Frame> {
        (0..self.frames).map(|t| self.frame(t)).collect()
    }

    pub fn center(&self) -> Frame {
        self.frame(self.frames / 2)
    }

    /// Frames `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Clip> {
        if start + len > self.frames {
            return Err(Error::Shape(format!(
                "window {start}..{} exceeds {} frames",
                start + len,
                self.frames
            )));
        }
        let n = self.frame_len();
        Clip::new(
            len,
            self.channels,
            self.height,
            self.width,
            self.data[start * n..(start + len) * n].to_vec(),
        )
    }

    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Clip> {
        let frames = (0..self.frames)
            .map(|t| self.frame(t).crop(y, x, h, w))
            .collect::<Result<Vec<_>>>()?;
        Clip::from_frames(&frames)
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}
