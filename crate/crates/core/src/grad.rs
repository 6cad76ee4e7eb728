//! Fitting objective and its analytic gradient.
//!
//! The objective is
//!
//! ```text
//! MSE(render(set), target) + λ · (1 / n_alive) · Σ_alive ‖c_i‖₁
//! ```
//!
//! where `render` is the tiled, box-truncated forward pass accumulated in
//! double precision (before any storage rounding) and the MSE averages
//! over all `H·W·3` samples. The backward pass differentiates exactly this
//! truncated function.
//!
//! Per pixel, with `z = L⁻¹(p − μ)` and `w = exp(−½|z|²)`, the chain rule
//! reduces to two offset gradients `g_x = ∂ℓ/∂(p−μ)_x`, `g_y = ∂ℓ/∂(p−μ)_y`:
//!
//! ```text
//! ∂ℓ/∂μ = −(g_x, g_y)   ∂ℓ/∂a = −z₁ g_x   ∂ℓ/∂b = −z₁ g_y   ∂ℓ/∂d = −z₂ g_y
//! ```
//!
//! for `L = [[a, 0], [b, d]]`; softplus is applied on `a` and `d` afterwards.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{sigmoid, ImageBuffer, SplatSet};
use crate::render::{activate, rasterize_tile, tiles_for, DEFAULT_TILE_SIZE};

/// Per-splat partial derivatives of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_mu: Vec<[f64; 2]>,
    /// With respect to the pre-activation `(l11, l21, l22)`.
    pub d_chol: Vec<[f64; 3]>,
    pub d_color: Vec<[f64; 3]>,
}

impl GradientSet {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mu: vec![[0.0; 2]; n],
            d_chol: vec![[0.0; 3]; n],
            d_color: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_mu.is_empty()
    }

    /// Gradient of splat `i` in the flat parameter order of
    /// [`crate::model::Gaussian2D::to_params`].
    pub fn params(&self, i: usize) -> [f64; 8] {
        let (m, l, c) = (self.d_mu[i], self.d_chol[i], self.d_color[i]);
        [m[0], m[1], l[0], l[1], l[2], c[0], c[1], c[2]]
    }
}

/// Loss weights and the tiling the objective is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub l1_weight: f64,
    pub tile_size: u32,
}

impl Objective {
    pub fn new(l1_weight: f64, tile_size: u32) -> Self {
        Self {
            l1_weight,
            tile_size,
        }
    }

    pub fn loss(&self, set: &SplatSet, target: &ImageBuffer) -> Result<f64> {
        Ok(self.evaluate(set, target, false)?.0)
    }

    pub fn backward(&self, set: &SplatSet, target: &ImageBuffer) -> Result<(f64, GradientSet)> {
        let (loss, grads) = self.evaluate(set, target, true)?;
        Ok((loss, grads.expect("requested")))
    }

    fn evaluate(
        &self,
        set: &SplatSet,
        target: &ImageBuffer,
        want_grad: bool,
    ) -> Result<(f64, Option<GradientSet>)> {
        if !set_matches(set, target) {
            return Err(Error::DimensionMismatch(format!(
                "splat set is {}x{}, target is {}x{}",
                set.width, set.height, target.width, target.height
            )));
        }
        if !(self.l1_weight >= 0.0) {
            return Err(Error::InvalidConfig(format!("l1 weight {}", self.l1_weight)));
        }
        let splats = activate(set)?;
        let (w, h) = (set.width, set.height);
        let grid = tiles_for(&splats, w, h, self.tile_size);
        let samples = (target.pixel_count() * 3) as f64;
        let scale = 2.0 / samples;

        let partials: Vec<TilePartial> = grid
            .tiles
            .par_iter()
            .zip(grid.bins.par_iter())
            .map(|(rect, bin)| {
                let mut vals = vec![0.0; rect.area() * 3];
                let mut weights = Vec::new();
                rasterize_tile(
                    rect,
                    bin,
                    &splats,
                    w,
                    h,
                    &mut vals,
                    want_grad.then_some(&mut weights),
                );
                // residuals overwrite the rendered values
                let mut sq = Compensated::default();
                let mut k = 0;
                for y in rect.y0..rect.y1 {
                    let row = (y as usize * w as usize + rect.x0 as usize) * 3;
                    for t in &target.data[row..row + rect.width() as usize * 3] {
                        let r = vals[k] - *t as f64;
                        sq.add(r * r);
                        vals[k] = r * scale;
                        k += 1;
                    }
                }
                let grads = if want_grad {
                    tile_gradients(rect, bin, &splats, w, h, &vals, &weights)
                } else {
                    Vec::new()
                };
                TilePartial { sq: sq.sum(), grads }
            })
            .collect();

        let mut sq_total = Compensated::default();
        for p in &partials {
            sq_total.add(p.sq);
        }
        let sq_total = sq_total.sum();
        let mse = sq_total / samples;

        let n_alive = set.alive_count();
        let l1_norm: f64 = set
            .alive_indices()
            .map(|i| set.gaussians[i].color.iter().map(|c| c.abs()).sum::<f64>())
            .sum();
        let l1_scale = if n_alive > 0 {
            self.l1_weight / n_alive as f64
        } else {
            0.0
        };
        let loss = mse + l1_scale * l1_norm;

        if !want_grad {
            return Ok((loss, None));
        }

        let mut acc = vec![[0.0f64; 8]; set.len()];
        for (bin, partial) in grid.bins.iter().zip(&partials) {
            for (&i, g) in bin.iter().zip(&partial.grads) {
                for (a, v) in acc[i].iter_mut().zip(g) {
                    *a += v;
                }
            }
        }

        let mut grads = GradientSet::zeros(set.len());
        for i in set.alive_indices() {
            let s = &acc[i];
            let g = &set.gaussians[i];
            grads.d_mu[i] = [-s[0], -s[1]];
            grads.d_chol[i] = [-s[2] * sigmoid(g.chol[0]), -s[3], -s[4] * sigmoid(g.chol[2])];
            for c in 0..3 {
                grads.d_color[i][c] = s[5 + c] + l1_scale * sign(g.color[c]);
            }
        }
        Ok((loss, Some(grads)))
    }
}

impl Default for Objective {
    fn default() -> Self {
        Self::new(0.0, DEFAULT_TILE_SIZE)
    }
}

struct TilePartial {
    sq: f64,
    /// Per bin entry: Σg_x, Σg_y, Σz₁g_x, Σz₁g_y, Σz₂g_y, Σ∂ℓ/∂v·w (rgb).
    grads: Vec<[f64; 8]>,
}

/// Per-splat gradient sums over one tile.
///
/// With `q = |z|²` and `dq = ∂ℓ/∂q`, the position terms are
/// `g_x = 2dq(z₁ − b z₂/d)/a` and `g_y = 2dq z₂/d`. Along a row `z` is
/// affine in the column offset `k`, so each row only needs the moments
/// `Σ dq·kᵖ` for `p = 0, 1, 2`.
fn tile_gradients(
    rect: &crate::render::PixelRect,
    bin: &[usize],
    splats: &[Option<crate::render::ActiveSplat>],
    width: u32,
    height: u32,
    residual: &[f64],
    weights: &[f64],
) -> Vec<[f64; 8]> {
    let area = rect.area();
    let tw = rect.width() as usize;
    bin.iter()
        .enumerate()
        .map(|(j, &i)| {
            let s = splats[i].as_ref().expect("binned splats are alive");
            let ws = &weights[j * area..(j + 1) * area];
            let span = s.row_span(rect.x0, width, height);
            let mut color = [0.0f64; 3];
            // Σdq·z₁, Σdq·z₂, Σdq·z₁², Σdq·z₁z₂, Σdq·z₂²
            let mut m = [0.0f64; 5];
            for (row, y) in (rect.y0..rect.y1).enumerate() {
                let base = row * tw;
                let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for k in 0..tw {
                    let wt = ws[base + k];
                    let r = &residual[3 * (base + k)..3 * (base + k) + 3];
                    color[0] += r[0] * wt;
                    color[1] += r[1] * wt;
                    color[2] += r[2] * wt;
                    let dq = wt * (r[0] * s.color[0] + r[1] * s.color[1] + r[2] * s.color[2]);
                    let kf = k as f64;
                    s0 += dq;
                    s1 += dq * kf;
                    s2 += dq * kf * kf;
                }
                let l = span.at(y);
                m[0] += l.u1 * s1 + l.v1 * s0;
                m[1] += l.u2 * s1 + l.v2 * s0;
                m[2] += l.u1 * l.u1 * s2 + 2.0 * l.u1 * l.v1 * s1 + l.v1 * l.v1 * s0;
                m[3] += l.u1 * l.u2 * s2 + (l.u1 * l.v2 + l.v1 * l.u2) * s1 + l.v1 * l.v2 * s0;
                m[4] += l.u2 * l.u2 * s2 + 2.0 * l.u2 * l.v2 * s1 + l.v2 * l.v2 * s0;
            }
            // dq carried the ∂ℓ/∂w factor; ∂w/∂q = -w/2 and g = 2·dq·(...)
            let m = m.map(|v| -v);
            let c = s.b * s.inv_d;
            [
                s.inv_a * (m[0] - c * m[1]),
                s.inv_d * m[1],
                s.inv_a * (m[2] - c * m[3]),
                s.inv_d * m[3],
                s.inv_d * m[4],
                color[0],
                color[1],
                color[2],
            ]
        })
        .collect()
}

/// Neumaier summation.
#[derive(Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn sum(&self) -> f64 {
        self.sum + self.carry
    }
}

fn set_matches(set: &SplatSet, target: &ImageBuffer) -> bool {
    set.width == target.width
        && set.height == target.height
        && target.data.len() == target.pixel_count() * 3
}

/// Subgradient of |x| with `sign(0) = 0`.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Objective value on the default tiling.
pub fn loss(set: &SplatSet, target: &ImageBuffer, l1_weight: f64) -> Result<f64> {
    Objective::new(l1_weight, DEFAULT_TILE_SIZE).loss(set, target)
}

/// Objective value and gradient on the default tiling.
pub fn backward(set: &SplatSet, target: &ImageBuffer, l1_weight: f64) -> Result<(f64, GradientSet)> {
    Objective::new(l1_weight, DEFAULT_TILE_SIZE).backward(set, target)
}
