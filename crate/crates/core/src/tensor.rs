//! Latent tensor containers.
//!
//! A [`LatentFrame`] is a dense `C×H×W` array of `f32`, row-major with the
//! channel outermost. A [`LatentVideo`] is an ordered list of frames that all
//! share one shape.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.c, self.h, self.w)
    }
}

pub(crate) fn ensure_same(a: Dims, b: Dims, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::dims(format!("{what}: {a} vs {b}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrame {
    dims: Dims,
    data: Vec<f32>,
}

impl LatentFrame {
    pub fn from_vec(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dims(format!(
                "frame {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.dims.h + i) * self.dims.w + j
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[self.index(c, i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map evaluated in `f64` and rounded once.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(f64::from(v)) as f32).collect(),
        }
    }

    /// Elementwise `f(self, other)`, computed in `f64` and rounded once.
    pub fn zip_map(&self, other: &LatentFrame, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        ensure_same(self.dims, other.dims, "frame operands")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(f64::from(a), f64::from(b)) as f32)
            .collect();
        Ok(Self {
            dims: self.dims,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &LatentFrame) -> Result<f32> {
        ensure_same(self.dims, other.dims, "frame comparison")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn mean_squared_diff(&self, other: &LatentFrame) -> Result<f64> {
        ensure_same(self.dims, other.dims, "frame comparison")?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    dims: Dims,
    frames: Vec<LatentFrame>,
}

impl LatentVideo {
    pub fn new(frames: Vec<LatentFrame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::dims("video needs at least one frame"))?;
        let dims = first.dims();
        for (m, f) in frames.iter().enumerate() {
            ensure_same(dims, f.dims(), &format!("frame {m}"))?;
        }
        Ok(Self { dims, frames })
    }

    /// Builds a video from a flat frame-major buffer.
    pub fn from_flat(num_frames: usize, dims: Dims, data: &[f32]) -> Result<Self> {
        if num_frames == 0 {
            return Err(Error::dims("video needs at least one frame"));
        }
        if data.len() != num_frames * dims.len() {
            return Err(Error::dims(format!(
                "video of {num_frames}×{dims} needs {} values, got {}",
                num_frames * dims.len(),
                data.len()
            )));
        }
        let frames = data
            .chunks_exact(dims.len().max(1))
            .map(|c| LatentFrame {
                dims,
                data: c.to_vec(),
            })
            .collect();
        Ok(Self { dims, frames })
    }

    pub fn repeat(frame: &LatentFrame, num_frames: usize) -> Result<Self> {
        Self::new(vec![frame.clone(); num_frames])
    }

    pub fn zeros(num_frames: usize, dims: Dims) -> Result<Self> {
        Self::repeat(&LatentFrame::zeros(dims), num_frames)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[LatentFrame] {
        &self.frames
    }

    pub fn frame(&self, m: usize) -> &LatentFrame {
        &self.frames[m]
    }

    /// Replaces frame `m`; the new frame must have the video's dims.
    pub fn set_frame(&mut self, m: usize, frame: LatentFrame) -> Result<()> {
        ensure_same(self.dims, frame.dims(), "replacement frame")?;
        let n = self.frames.len();
        let slot = self
            .frames
            .get_mut(m)
            .ok_or_else(|| Error::dims(format!("frame index {m} out of range for {n} frames")))?;
        *slot = frame;
        Ok(())
    }

    pub(crate) fn frames_mut(&mut self) -> &mut [LatentFrame] {
        &mut self.frames
    }

    pub fn into_frames(self) -> Vec<LatentFrame> {
        self.frames
    }

    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.frames.len() * self.dims.len());
        for f in &self.frames {
            out.extend_from_slice(f.data());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(LatentFrame::is_finite)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            frames: self.frames.iter().map(|fr| fr.map(&f)).collect(),
        }
    }

    pub fn zip_map(&self, other: &LatentVideo, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.zip_map(b, &f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims: self.dims,
            frames,
        })
    }

    pub fn max_abs_diff(&self, other: &LatentVideo) -> Result<f32> {
        self.ensure_same_shape(other)?;
        self.frames
            .iter()
            .zip(&other.frames)
            .try_fold(0.0f32, |acc, (a, b)| Ok(acc.max(a.max_abs_diff(b)?)))
    }

    pub fn ensure_same_shape(&self, other: &LatentVideo) -> Result<()> {
        ensure_same(self.dims, other.dims, "video operands")?;
        if self.num_frames() != other.num_frames() {
            return Err(Error::dims(format!(
                "video operands: {} vs {} frames",
                self.num_frames(),
                other.num_frames()
            )));
        }
        Ok(())
    }

    /// Bitwise equality, distinguishing `0.0`/`-0.0` and NaN payloads.
    pub fn bit_eq(&self, other: &LatentVideo) -> bool {
        self.dims == other.dims
            && self.frames.len() == other.frames.len()
            && self
                .frames
                .iter()
                .zip(&other.frames)
                .all(|(a, b)| frame_bit_eq(a, b))
    }
}

pub fn frame_bit_eq(a: &LatentFrame, b: &LatentFrame) -> bool {
    a.dims == b.dims
        && a.data
            .iter()
            .zip(&b.data)
            .all(|(x, y)| x.to_bits() == y.to_bits())
}
