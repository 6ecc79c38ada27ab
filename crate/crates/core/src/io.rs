//! File formats: binary PPM (P6) rasters and LTN latent videos.
//!
//! LTN layout, all integers little-endian:
//!
//! ```text
//! "LTN1" | version u16 = 1 | M u32 | C u32 | H u32 | W u32 | M·C·H·W × f32
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::codec::Raster;
use crate::error::{Error, Result};
use crate::tensor::{Dims, LatentVideo};

pub const LTN_MAGIC: &[u8; 4] = b"LTN1";
pub const LTN_VERSION: u16 = 1;
pub const LTN_HEADER_LEN: usize = 22;

/// Upper bound on element count accepted from untrusted headers.
const MAX_ELEMENTS: u64 = 1 << 30;

pub fn pixel_to_unit(v: u8) -> f32 {
    (f64::from(v) / 127.5 - 1.0) as f32
}

pub fn unit_to_pixel(x: f32) -> u8 {
    let v = ((f64::from(x) + 1.0) * 127.5).round();
    if v.is_nan() {
        return 0;
    }
    v.clamp(0.0, 255.0) as u8
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    /// Reads a token terminated by exactly one whitespace byte.
    fn token(&mut self, what: &str) -> Result<&[u8]> {
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::parse(start as u64, format!("expected {what}")));
        }
        if self.pos >= self.bytes.len() {
            return Err(Error::parse(
                self.pos as u64,
                format!("unexpected end of header after {what}"),
            ));
        }
        let tok = &self.bytes[start..self.pos];
        self.pos += 1;
        Ok(tok)
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        let tok = self.token(what)?;
        std::str::from_utf8(tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(start as u64, format!("invalid {what}")))
    }
}

pub fn parse_ppm(bytes: &[u8]) -> Result<Raster> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    let magic = cur.token("magic")?;
    if magic != b"P6" {
        return Err(Error::parse(
            0,
            format!(
                "bad magic {:?}, expected P6",
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(
            maxval_at as u64,
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .filter(|&v| v as u64 <= MAX_ELEMENTS)
        .ok_or_else(|| Error::parse(0, format!("image {width}×{height} too large")))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(Error::parse(
            bytes.len() as u64,
            format!(
                "truncated payload: expected {expected} bytes, got {}",
                payload.len()
            ),
        ));
    }
    let plane = width * height;
    let mut data = vec![0.0f32; expected];
    for (px, rgb) in payload[..expected].chunks_exact(3).enumerate() {
        for (c, &v) in rgb.iter().enumerate() {
            data[c * plane + px] = pixel_to_unit(v);
        }
    }
    Raster::from_vec(height, width, data)
}

pub fn encode_ppm(raster: &Raster) -> Vec<u8> {
    let (h, w) = (raster.height(), raster.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = w * h;
    let data = raster.data();
    out.reserve(3 * plane);
    for px in 0..plane {
        for c in 0..3 {
            out.push(unit_to_pixel(data[c * plane + px]));
        }
    }
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Raster> {
    parse_ppm(&fs::read(path)?)
}

pub fn write_ppm(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ppm(raster))
}

pub fn encode_ltn(video: &LatentVideo) -> Result<Vec<u8>> {
    let dims = video.dims();
    let mut out = Vec::with_capacity(LTN_HEADER_LEN + 4 * video.num_frames() * dims.len());
    out.extend_from_slice(LTN_MAGIC);
    out.extend_from_slice(&LTN_VERSION.to_le_bytes());
    for d in [video.num_frames(), dims.c, dims.h, dims.w] {
        let d = u32::try_from(d).map_err(|_| Error::dims(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for frame in video.frames() {
        for v in frame.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn parse_ltn(bytes: &[u8]) -> Result<LatentVideo> {
    if bytes.len() < LTN_HEADER_LEN {
        return Err(Error::parse(
            bytes.len() as u64,
            format!(
                "truncated header: expected {LTN_HEADER_LEN} bytes, got {}",
                bytes.len()
            ),
        ));
    }
    if &bytes[..4] != LTN_MAGIC {
        return Err(Error::parse(0, "bad magic, expected LTN1"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != LTN_VERSION {
        return Err(Error::parse(
            4,
            format!("unsupported LTN version {version}"),
        ));
    }
    let [m, c, h, w] = [6, 10, 14, 18].map(|at| u64::from(le_u32(bytes, at)));
    let count = [m, c, h, w]
        .into_iter()
        .try_fold(1u64, |acc, d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::parse(6, format!("dims {m}×{c}×{h}×{w} overflow")))?;
    if count == 0 {
        return Err(Error::parse(6, "zero-sized dimension"));
    }
    let expected = count * 4;
    let actual = (bytes.len() - LTN_HEADER_LEN) as u64;
    if actual != expected {
        return Err(Error::parse(
            LTN_HEADER_LEN as u64,
            format!("payload size mismatch: expected {expected} bytes, got {actual}"),
        ));
    }
    let data: Vec<f32> = bytes[LTN_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    LatentVideo::from_flat(
        m as usize,
        Dims::new(c as usize, h as usize, w as usize),
        &data,
    )
}

pub fn read_ltn(path: impl AsRef<Path>) -> Result<LatentVideo> {
    parse_ltn(&fs::read(path)?)
}

pub fn write_ltn(video: &LatentVideo, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ltn(video)?)
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
