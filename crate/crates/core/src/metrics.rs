//! Quality and compression measurement.

use serde::{Deserialize, Serialize};

use crate::codec::{HEADER_BYTES, BYTES_PER_GAUSSIAN};
use crate::error::{Error, Result};
use crate::model::ImageBuffer;

/// Mean squared error over all samples after clamping both images to `[0, 1]`.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_dims(b) || a.data.len() != b.data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = x.clamp(0.0, 1.0) as f64 - y.clamp(0.0, 1.0) as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// PSNR at peak 1.0 in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Formats a PSNR, spelling the identical-image sentinel as `inf`.
pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{db:.4}")
    }
}

/// Raw 24-bit RGB bytes over float16 splat payload bytes.
pub fn compression_ratio(width: u32, height: u32, n_gaussians: usize) -> f64 {
    let raw = width as f64 * height as f64 * 3.0;
    raw / (n_gaussians as f64 * BYTES_PER_GAUSSIAN as f64)
}

/// Same as [`compression_ratio`] but counting the container header.
pub fn compression_ratio_with_header(width: u32, height: u32, n_gaussians: usize) -> f64 {
    let raw = width as f64 * height as f64 * 3.0;
    raw / (HEADER_BYTES + n_gaussians * BYTES_PER_GAUSSIAN) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityReport {
    pub mse: f64,
    /// `None` encodes the identical-image sentinel in JSON.
    pub psnr_db: Option<f64>,
    pub compression_ratio: f64,
    pub compression_ratio_with_header: f64,
    pub n_gaussians: usize,
    pub bytes_payload: usize,
    pub bytes_total: usize,
}

impl QualityReport {
    pub fn measure(reconstruction: &ImageBuffer, target: &ImageBuffer, n_gaussians: usize) -> Result<Self> {
        let mse = mse(reconstruction, target)?;
        let db = psnr_from_mse(mse);
        let (w, h) = (target.width, target.height);
        Ok(Self {
            mse,
            psnr_db: db.is_finite().then_some(db),
            compression_ratio: compression_ratio(w, h, n_gaussians),
            compression_ratio_with_header: compression_ratio_with_header(w, h, n_gaussians),
            n_gaussians,
            bytes_payload: n_gaussians * BYTES_PER_GAUSSIAN,
            bytes_total: HEADER_BYTES + n_gaussians * BYTES_PER_GAUSSIAN,
        })
    }
}
