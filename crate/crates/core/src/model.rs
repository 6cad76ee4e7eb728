//! Splat and image data types.
//!
//! A [`Gaussian2D`] lives in normalized image coordinates: its mean is in
//! `[0, 1]^2` and its covariance is expressed in the same units. The
//! covariance is stored as three unconstrained numbers `(l11, l21, l22)`
//! forming the lower-triangular factor
//!
//! ```text
//! L = [[softplus(l11), 0], [l21, softplus(l22)]],   Σ = L·Lᵀ
//! ```
//!
//! so any finite parameter vector maps to a symmetric positive definite
//! covariance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scalar parameters per splat: mean (2), factor (3), color (3).
pub const PARAMS_PER_GAUSSIAN: usize = 8;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp_m1()).ln()
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub mu: [f64; 2],
    /// Pre-activation factor parameters `(l11, l21, l22)`.
    pub chol: [f64; 3],
    pub color: [f64; 3],
}

impl Gaussian2D {
    /// Builds a splat, rejecting non-finite parameters.
    pub fn new(mu: [f64; 2], chol: [f64; 3], color: [f64; 3]) -> Result<Self> {
        let g = Self { mu, chol, color };
        if g.is_finite() {
            Ok(g)
        } else {
            Err(Error::NonFinite(0))
        }
    }

    /// Axis-aligned splat with standard deviations
    /// `sigma` given in normalized units per axis.
    pub fn from_sigma(mu: [f64; 2], sigma: [f64; 2], color: [f64; 3]) -> Self {
        Self {
            mu,
            chol: [softplus_inv(sigma[0]), 0.0, softplus_inv(sigma[1])],
            color,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|v| v.is_finite())
    }

    /// Activated factor entries `(a, b, d)` with `L = [[a, 0], [b, d]]`.
    pub fn factor(&self) -> [f64; 3] {
        [softplus(self.chol[0]), self.chol[1], softplus(self.chol[2])]
    }

    /// Covariance `Σ = L·Lᵀ` as a row-major 2×2 matrix.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [a, b, d] = self.factor();
        [[a * a, a * b], [a * b, b * b + d * d]]
    }

    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        [
            self.mu[0],
            self.mu[1],
            self.chol[0],
            self.chol[1],
            self.chol[2],
            self.color[0],
            self.color[1],
            self.color[2],
        ]
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self {
            mu: [p[0], p[1]],
            chol: [p[2], p[3], p[4]],
            color: [p[5], p[6], p[7]],
        }
    }
}

/// Covariance of a splat; free-function form of [`Gaussian2D::covariance`].
pub fn covariance_of(g: &Gaussian2D) -> [[f64; 2]; 2] {
    g.covariance()
}

/// The fitted representation of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplatSet {
    pub width: u32,
    pub height: u32,
    pub gaussians: Vec<Gaussian2D>,
    /// Pruned splats are masked here until [`SplatSet::compact`].
    pub alive: Vec<bool>,
}

impl SplatSet {
    pub fn new(width: u32, height: u32, gaussians: Vec<Gaussian2D>) -> Self {
        let alive = vec![true; gaussians.len()];
        Self {
            width,
            height,
            gaussians,
            alive,
        }
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self::new(width, height, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    /// Indices of alive splats in ascending order.
    pub fn alive_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.alive
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
    }

    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::DimensionMismatch(format!(
                "image dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if self.alive.len() != self.gaussians.len() {
            return Err(Error::DimensionMismatch(format!(
                "alive mask has {} entries for {} gaussians",
                self.alive.len(),
                self.gaussians.len()
            )));
        }
        match self.gaussians.iter().position(|g| !g.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    /// Drops masked splats, keeping survivors in their original order.
    pub fn compact(&self) -> SplatSet {
        let gaussians = self
            .alive_indices()
            .map(|i| self.gaussians[i])
            .collect::<Vec<_>>();
        SplatSet::new(self.width, self.height, gaussians)
    }
}

/// Free-function form of [`SplatSet::validate`].
pub fn validate(set: &SplatSet) -> Result<()> {
    set.validate()
}

/// Free-function form of [`SplatSet::compact`].
pub fn compact(set: &SplatSet) -> SplatSet {
    set.compact()
}

/// Dense row-major `height × width × 3` image in linear floats.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * 3],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let mut img = Self::zeros(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        let img = Self {
            width,
            height,
            data,
        };
        img.validate()?;
        Ok(img)
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.width as usize * self.height as usize * 3;
        if self.width == 0 || self.height == 0 || self.data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} image needs {} samples, has {}",
                self.width,
                self.height,
                expected,
                self.data.len()
            )));
        }
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i / 3)),
            None => Ok(()),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamped(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// 2×2 box downsampling; odd trailing rows/columns are dropped.
    pub fn downsample2x(&self) -> ImageBuffer {
        let (w, h) = ((self.width / 2).max(1), (self.height / 2).max(1));
        ImageBuffer::from_fn(w, h, |x, y| {
            let mut acc = [0.0f32; 3];
            let mut n = 0.0f32;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (sx, sy) = (2 * x + dx, 2 * y + dy);
                if sx < self.width && sy < self.height {
                    let p = self.pixel(sx, sy);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                    n += 1.0;
                }
            }
            acc.map(|v| v / n)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Eigenvalues of a symmetric 2×2 matrix, larger first.
    fn eigen_sym2(m: [[f64; 2]; 2]) -> (f64, f64) {
        let half_tr = 0.5 * (m[0][0] + m[1][1]);
        let gap = (0.25 * (m[0][0] - m[1][1]).powi(2) + m[0][1] * m[1][0]).sqrt();
        let hi = half_tr + gap;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        // det / hi avoids cancellation in half_tr - gap
        (hi, det / hi)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn factor_diagonal_is_positive(
            l11 in -30.0f64..30.0,
            l21 in -10.0f64..10.0,
            l22 in -30.0f64..30.0,
        ) {
            let g = Gaussian2D { mu: [0.5, 0.5], chol: [l11, l21, l22], color: [0.0; 3] };
            let [a, _, d] = g.factor();
            // det Σ = (a·d)²
            prop_assert!(a > 0.0 && d > 0.0 && (a * d) * (a * d) > 0.0);
        }

        #[test]
        fn covariance_is_positive_definite(
            l11 in -8.0f64..8.0,
            l21 in -5.0f64..5.0,
            l22 in -8.0f64..8.0,
        ) {
            let g = Gaussian2D { mu: [0.5, 0.5], chol: [l11, l21, l22], color: [0.0; 3] };
            let m = g.covariance();
            prop_assert_eq!(m[0][1], m[1][0]);
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            prop_assert!(det > 0.0);
            prop_assert!(m[0][0] + m[1][1] > 0.0);
            let (hi, lo) = eigen_sym2(m);
            prop_assert!(lo > 0.0 && hi >= lo, "eigenvalues {} {}", hi, lo);
        }
    }

    fn splat(mu: [f64; 2]) -> Gaussian2D {
        Gaussian2D {
            mu,
            chol: [0.0, 0.1, -1.0],
            color: [0.2, 0.3, 0.4],
        }
    }

    #[test]
    fn empty_set_is_valid() {
        assert_eq!(SplatSet::empty(8, 8).validate(), Ok(()));
    }

    #[test]
    fn nan_mean_reports_index() {
        let mut gs = vec![splat([0.5, 0.5]); 5];
        gs[3].mu = [f64::NAN, 0.5];
        let set = SplatSet::new(8, 8, gs);
        assert_eq!(set.validate(), Err(Error::NonFinite(3)));
        assert!(Gaussian2D::new([f64::NAN, 0.5], [0.0; 3], [0.0; 3]).is_err());
        assert!(Gaussian2D::new([0.5, 0.5], [0.0, f64::INFINITY, 0.0], [0.0; 3]).is_err());
    }

    #[test]
    fn mask_length_mismatch() {
        let mut set = SplatSet::new(8, 8, vec![splat([0.5, 0.5]); 2]);
        set.alive.push(true);
        assert!(matches!(set.validate(), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn unit_factor_gives_identity() {
        let a = softplus_inv(1.0);
        let g = Gaussian2D {
            mu: [0.5, 0.5],
            chol: [a, 0.0, a],
            color: [0.0; 3],
        };
        let s = covariance_of(&g);
        for (i, row) in s.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
        let a = softplus_inv(0.3);
        let g = Gaussian2D { chol: [a, 0.0, a], ..g };
        let s = g.covariance();
        assert!((s[0][0] - 0.09).abs() < 1e-12 && (s[1][1] - 0.09).abs() < 1e-12);
        assert_eq!(s[0][1], 0.0);
    }

    #[test]
    fn softplus_roundtrip() {
        for y in [1e-6, 0.003, 0.025, 0.5, 1.0, 7.0, 40.0] {
            let x = softplus_inv(y);
            assert!((softplus(x) - y).abs() <= 1e-12 * y.max(1.0), "{y}");
        }
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn compact_preserves_order() {
        let gs = vec![splat([0.1, 0.1]), splat([0.2, 0.2]), splat([0.3, 0.3])];
        let mut set = SplatSet::new(8, 8, gs.clone());
        assert_eq!(set.compact(), set);
        set.alive = vec![true, false, true];
        let c = set.compact();
        assert_eq!(c.gaussians, vec![gs[0], gs[2]]);
        assert_eq!(c.alive, vec![true, true]);
        set.alive = vec![false; 3];
        assert!(set.compact().is_empty());
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = ImageBuffer::from_fn(4, 2, |x, _| [x as f32, 0.0, 1.0]);
        let d = img.downsample2x();
        assert_eq!((d.width, d.height), (2, 1));
        assert_eq!(d.pixel(0, 0), [0.5, 0.0, 1.0]);
        assert_eq!(d.pixel(1, 0), [2.5, 0.0, 1.0]);
    }
}
