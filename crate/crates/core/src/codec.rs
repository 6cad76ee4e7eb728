//! The GSF container: a 16-byte header followed by eight IEEE 754
//! half-precision values per splat.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "GS2F"
//!      4     2  version (u16 LE, = 1)
//!      6     2  width   (u16 LE)
//!      8     2  height  (u16 LE)
//!     10     4  count   (u32 LE)
//!     14     2  flags   (u16 LE; bit 0 = colors clamped on export)
//!     16  16·n  per splat: mu.x mu.y l11 l21 l22 r g b, each f16 LE
//! ```
//!
//! The factor values are stored pre-activation and colors raw.

use half::f16;
use thiserror::Error;

use crate::error::Error;
use crate::model::{Gaussian2D, ImageBuffer, SplatSet, PARAMS_PER_GAUSSIAN};
use crate::render::render_tiled;

pub const MAGIC: [u8; 4] = *b"GS2F";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 16;
pub const BYTES_PER_GAUSSIAN: usize = PARAMS_PER_GAUSSIAN * 2;
pub const FLAG_COLORS_CLAMPED: u16 = 1;

const PARAM_NAMES: [&str; PARAMS_PER_GAUSSIAN] = ["mu.x", "mu.y", "l11", "l21", "l22", "r", "g", "b"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("BadMagic: expected \"GS2F\", found {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("UnsupportedVersion: {0}")]
    UnsupportedVersion(u16),
    #[error("TruncatedHeader: {0} bytes, need 16")]
    TruncatedHeader(usize),
    #[error("TruncatedPayload: expected {expected} payload bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("SizeMismatch: expected {expected} bytes in total, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("ReservedFlags: 0x{0:04x}")]
    ReservedFlags(u16),
    #[error("ZeroDimension: {width}x{height}")]
    ZeroDimension { width: u16, height: u16 },
    #[error("NonFiniteParameter: gaussian {index} {param}")]
    NonFiniteParameter { index: usize, param: &'static str },
    #[error("OutOfRange: gaussian {index} {param} = {value} exceeds half precision")]
    OutOfRange { index: usize, param: &'static str, value: f64 },
    #[error("TooLarge: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Model(#[from] Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EncodeOptions {
    /// Clamp colors to `[0, 1]` before storage and set flag bit 0.
    pub clamp_colors: bool,
}

/// Parsed fixed header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GsfHeader {
    pub version: u16,
    pub width: u16,
    pub height: u16,
    pub count: u32,
    pub flags: u16,
}

impl GsfHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < HEADER_BYTES {
            return Err(CodecError::TruncatedHeader(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CodecError::BadMagic(magic));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let header = Self {
            version: u16_at(4),
            width: u16_at(6),
            height: u16_at(8),
            count: u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")),
            flags: u16_at(14),
        };
        if header.version != VERSION {
            return Err(CodecError::UnsupportedVersion(header.version));
        }
        if header.flags & !FLAG_COLORS_CLAMPED != 0 {
            return Err(CodecError::ReservedFlags(header.flags));
        }
        if header.width == 0 || header.height == 0 {
            return Err(CodecError::ZeroDimension {
                width: header.width,
                height: header.height,
            });
        }
        Ok(header)
    }

    pub fn payload_bytes(&self) -> usize {
        self.count as usize * BYTES_PER_GAUSSIAN
    }

    pub fn file_bytes(&self) -> usize {
        HEADER_BYTES + self.payload_bytes()
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
    }
}

/// Encodes the alive splats of `set`.
pub fn encode_gsf(set: &SplatSet) -> Result<Vec<u8>, CodecError> {
    encode_gsf_with(set, EncodeOptions::default())
}

pub fn encode_gsf_with(set: &SplatSet, options: EncodeOptions) -> Result<Vec<u8>, CodecError> {
    set.validate()?;
    let too_large = |what: &str, v: usize| CodecError::TooLarge(format!("{what} {v}"));
    let width = u16::try_from(set.width).map_err(|_| too_large("width", set.width as usize))?;
    let height = u16::try_from(set.height).map_err(|_| too_large("height", set.height as usize))?;
    let alive = set.alive_count();
    let count = u32::try_from(alive).map_err(|_| too_large("count", alive))?;
    let header = GsfHeader {
        version: VERSION,
        width,
        height,
        count,
        flags: if options.clamp_colors { FLAG_COLORS_CLAMPED } else { 0 },
    };
    let mut out = Vec::with_capacity(header.file_bytes());
    header.write(&mut out);
    for (index, i) in set.alive_indices().enumerate() {
        let mut g = set.gaussians[i];
        if options.clamp_colors {
            g.color = g.color.map(|c| c.clamp(0.0, 1.0));
        }
        for (value, param) in g.to_params().into_iter().zip(PARAM_NAMES) {
            let h = f16::from_f64(value);
            if !h.is_finite() {
                return Err(CodecError::OutOfRange { index, param, value });
            }
            out.extend_from_slice(&h.to_le_bytes());
        }
    }
    debug_assert_eq!(out.len(), header.file_bytes());
    Ok(out)
}

/// Parses a GSF byte string into a set with every splat alive.
pub fn decode_gsf(bytes: &[u8]) -> Result<SplatSet, CodecError> {
    let header = GsfHeader::parse(bytes)?;
    let payload = &bytes[HEADER_BYTES..];
    let expected = header.payload_bytes();
    if payload.len() < expected {
        return Err(CodecError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(CodecError::SizeMismatch {
            expected: header.file_bytes(),
            actual: bytes.len(),
        });
    }
    let mut gaussians = Vec::with_capacity(header.count as usize);
    for (index, chunk) in payload.chunks_exact(BYTES_PER_GAUSSIAN).enumerate() {
        let mut p = [0.0f64; PARAMS_PER_GAUSSIAN];
        for (k, pair) in chunk.chunks_exact(2).enumerate() {
            let h = f16::from_le_bytes([pair[0], pair[1]]);
            if !h.is_finite() {
                return Err(CodecError::NonFiniteParameter {
                    index,
                    param: PARAM_NAMES[k],
                });
            }
            p[k] = h.to_f64();
        }
        gaussians.push(Gaussian2D::from_params(&p));
    }
    Ok(SplatSet::new(header.width as u32, header.height as u32, gaussians))
}

/// Decodes and renders, clamping the result to `[0, 1]`.
pub fn decode_to_image(bytes: &[u8], tile_size: u32) -> Result<ImageBuffer, CodecError> {
    let set = decode_gsf(bytes)?;
    Ok(render_tiled(&set, tile_size)?.clamped())
}
