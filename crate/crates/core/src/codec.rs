//! The encoder/decoder boundary between RGB rasters and latent frames.
//!
//! Both codecs are lossless: identity copies the planar raster, patchify is a
//! space-to-depth rearrangement. Either may be followed by a per-channel
//! affine map, restricted to power-of-two scales with zero offset so that
//! `decode(encode(x))` reproduces `x` bit for bit.

use crate::error::{Error, Result};
use crate::tensor::{Dims, LatentFrame};

/// Planar RGB image, values nominally in `[-1, 1]`, laid out `3×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Raster {
    pub const CHANNELS: usize = 3;

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::dims(format!(
                "raster {height}×{width} needs {} values, got {}",
                Self::CHANNELS * height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; Self::CHANNELS * height * width],
        }
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

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub scale: f32,
    pub offset: f32,
}

impl Affine {
    pub const UNIT: Affine = Affine {
        scale: 1.0,
        offset: 0.0,
    };

    fn validate(&self) -> Result<()> {
        let s = self.scale.abs();
        let power_of_two = s.is_normal() && s.to_bits() & 0x007F_FFFF == 0;
        if !power_of_two {
            return Err(Error::config(format!(
                "affine scale {} must be a power of two for an exact roundtrip",
                self.scale
            )));
        }
        if self.offset != 0.0 {
            return Err(Error::config(format!(
                "affine offset {} must be zero for an exact roundtrip",
                self.offset
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecKind {
    Identity,
    Patchify { factor: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    kind: CodecKind,
    /// Per latent channel; empty means unit.
    affine: Vec<Affine>,
}

impl Codec {
    pub fn identity() -> Self {
        Self {
            kind: CodecKind::Identity,
            affine: Vec::new(),
        }
    }

    pub fn patchify(factor: usize) -> Result<Self> {
        Self::new(CodecKind::Patchify { factor }, Vec::new())
    }

    pub fn new(kind: CodecKind, affine: Vec<Affine>) -> Result<Self> {
        if let CodecKind::Patchify { factor } = kind {
            if factor == 0 {
                return Err(Error::config("patchify factor must be at least 1"));
            }
        }
        let codec = Self { kind, affine };
        if !codec.affine.is_empty() && codec.affine.len() != codec.latent_channels() {
            return Err(Error::config(format!(
                "codec needs {} affine entries, got {}",
                codec.latent_channels(),
                codec.affine.len()
            )));
        }
        for a in &codec.affine {
            a.validate()?;
        }
        Ok(codec)
    }

    pub fn kind(&self) -> CodecKind {
        self.kind
    }

    fn factor(&self) -> usize {
        match self.kind {
            CodecKind::Identity => 1,
            CodecKind::Patchify { factor } => factor,
        }
    }

    pub fn latent_channels(&self) -> usize {
        Raster::CHANNELS * self.factor() * self.factor()
    }

    /// Latent dims for an image of the given size.
    pub fn latent_dims(&self, height: usize, width: usize) -> Result<Dims> {
        let f = self.factor();
        if !height.is_multiple_of(f) || !width.is_multiple_of(f) {
            return Err(Error::dims(format!(
                "image {height}×{width} not divisible by patch factor {f}"
            )));
        }
        Ok(Dims::new(self.latent_channels(), height / f, width / f))
    }

    fn affine_for(&self, channel: usize) -> Affine {
        self.affine.get(channel).copied().unwrap_or(Affine::UNIT)
    }

    pub fn encode(&self, image: &Raster) -> Result<LatentFrame> {
        let dims = self.latent_dims(image.height, image.width)?;
        let f = self.factor();
        let mut data = Vec::with_capacity(dims.len());
        for lc in 0..dims.c {
            let (c, di, dj) = (lc / (f * f), (lc / f) % f, lc % f);
            let a = self.affine_for(lc);
            for i in 0..dims.h {
                for j in 0..dims.w {
                    data.push(image.get(c, i * f + di, j * f + dj) * a.scale + a.offset);
                }
            }
        }
        LatentFrame::from_vec(dims, data)
    }

    pub fn decode(&self, latent: &LatentFrame) -> Result<Raster> {
        let dims = latent.dims();
        if dims.c != self.latent_channels() {
            return Err(Error::dims(format!(
                "codec expects {} latent channels, got {}",
                self.latent_channels(),
                dims.c
            )));
        }
        let f = self.factor();
        let (height, width) = (dims.h * f, dims.w * f);
        let mut data = vec![0.0f32; Raster::CHANNELS * height * width];
        for lc in 0..dims.c {
            let (c, di, dj) = (lc / (f * f), (lc / f) % f, lc % f);
            let a = self.affine_for(lc);
            for i in 0..dims.h {
                for j in 0..dims.w {
                    let v = (latent.get(lc, i, j) - a.offset) / a.scale;
                    data[(c * height + i * f + di) * width + j * f + dj] = v;
                }
            }
        }
        Raster::from_vec(height, width, data)
    }
}
