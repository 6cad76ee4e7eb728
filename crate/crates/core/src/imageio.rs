//! 8-bit RGB PNG and binary PPM (P6) input/output.
//!
//! Inputs are detected by content, outputs by file extension (`.ppm`
//! writes P6, anything else PNG). Grayscale, alpha and 16-bit inputs are
//! rejected rather than converted.

use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use thiserror::Error;

use crate::model::ImageBuffer;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed image: {0}")]
    Format(String),
    #[error("unsupported image: {0}")]
    Unsupported(String),
}

type Result<T> = std::result::Result<T, ImageIoError>;

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    decode_image(&std::fs::read(path)?)
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P3") {
        Err(ImageIoError::Unsupported("only binary RGB PPM (P6) is accepted".into()))
    } else {
        Err(ImageIoError::Format("neither PNG nor PPM".into()))
    }
}

fn from_bytes(width: u32, height: u32, rgb: &[u8]) -> ImageBuffer {
    ImageBuffer {
        width,
        height,
        data: rgb.iter().map(|&b| b as f32 / 255.0).collect(),
    }
}

/// Clamps to `[0, 1]` and quantizes to 8 bits with rounding.
pub fn to_rgb8(img: &ImageBuffer) -> Vec<u8> {
    img.data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    // palette images expand to RGB; everything else is left as stored
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImageIoError::Format(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageIoError::Format(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb {
        return Err(ImageIoError::Unsupported(format!(
            "PNG color type {:?}, need RGB",
            info.color_type
        )));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImageIoError::Unsupported(format!(
            "PNG bit depth {:?}, need 8",
            info.bit_depth
        )));
    }
    let rows = &buf[..info.buffer_size()];
    let stride = info.width as usize * 3;
    let rgb: Vec<u8> = rows
        .chunks(info.line_size)
        .take(info.height as usize)
        .flat_map(|line| line[..stride].iter().copied())
        .collect();
    Ok(from_bytes(info.width, info.height, &rgb))
}

fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut cur = Cursor::new(bytes);
    let mut fields = Vec::new();
    // magic, width, height, maxval; '#' comments allowed between tokens
    while fields.len() < 4 {
        let mut tok = Vec::new();
        loop {
            let mut b = [0u8];
            if cur.read(&mut b)? == 0 {
                return Err(ImageIoError::Format("truncated PPM header".into()));
            }
            match b[0] {
                b'#' if tok.is_empty() => {
                    let mut skip = Vec::new();
                    cur.read_until(b'\n', &mut skip)?;
                }
                c if c.is_ascii_whitespace() => {
                    if !tok.is_empty() {
                        break;
                    }
                }
                c => tok.push(c),
            }
        }
        fields.push(String::from_utf8_lossy(&tok).into_owned());
    }
    let num = |s: &str| -> Result<u32> {
        s.parse()
            .map_err(|_| ImageIoError::Format(format!("bad PPM header field `{s}`")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(ImageIoError::Unsupported(format!("PPM maxval {maxval}, need 255")));
    }
    if w == 0 || h == 0 {
        return Err(ImageIoError::Format("zero-sized PPM".into()));
    }
    let start = cur.position() as usize;
    let need = w as usize * h as usize * 3;
    let body = &bytes[start..];
    if body.len() < need {
        return Err(ImageIoError::Format(format!(
            "PPM body has {} bytes, need {need}",
            body.len()
        )));
    }
    Ok(from_bytes(w, h, &body[..need]))
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(to_rgb8(img));
    out
}

pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| ImageIoError::Format(e.to_string()))?;
        writer
            .write_image_data(&to_rgb8(img))
            .map_err(|e| ImageIoError::Format(e.to_string()))?;
    }
    Ok(out)
}

/// Encodes for `path`: PPM when the extension is `.ppm`, PNG otherwise.
pub fn encode_for_path(img: &ImageBuffer, path: &Path) -> Result<Vec<u8>> {
    let is_ppm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        Ok(encode_ppm(img))
    } else {
        encode_png(img)
    }
}
