//! Forward evaluation of the splat mixture.
//!
//! Each pixel center `p = ((x + 0.5) / W, (y + 0.5) / H)` receives
//! `Σ_i c_i · exp(-½ (p - μ_i)ᵀ Σ_i⁻¹ (p - μ_i))` over alive splats.
//!
//! The tiled path first bins every splat into the tiles touched by its
//! 4σ axis-aligned box, then evaluates each tile against its bin only.
//! A splat therefore contributes to every pixel of every tile its box
//! touches, and to nothing else. Pixels outside the box are at Mahalanobis
//! distance above 4, so each dropped term is below `e^{-8}·|c|`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ImageBuffer, SplatSet};

pub const DEFAULT_TILE_SIZE: u32 = 16;

/// Bounding-box half-width in standard deviations.
pub const CUTOFF_SIGMAS: f64 = 4.0;

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() as usize * self.height() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// A splat with its activated factor, ready for per-pixel evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ActiveSplat {
    pub mu: [f64; 2],
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub inv_a: f64,
    pub inv_d: f64,
    pub color: [f64; 3],
}

impl ActiveSplat {
    /// Weight `exp(-½|z|²)` with `z = L⁻¹ (p - μ)`.
    #[inline(always)]
    pub fn eval(&self, px: f64, py: f64) -> f64 {
        let z1 = (px - self.mu[0]) * self.inv_a;
        let z2 = (py - self.mu[1] - self.b * z1) * self.inv_d;
        (-0.5 * (z1 * z1 + z2 * z2)).exp()
    }

    /// The cutoff box in continuous pixel coordinates, as the set of pixels
    /// whose cells overlap it. Empty when the box lies off-frame.
    pub fn pixel_box(&self, width: u32, height: u32) -> PixelRect {
        let (w, h) = (width as f64, height as f64);
        let sx = CUTOFF_SIGMAS * self.a * w;
        let sy = CUTOFF_SIGMAS * (self.b * self.b + self.d * self.d).sqrt() * h;
        let (cx, cy) = (self.mu[0] * w, self.mu[1] * h);
        let clip = |lo: f64, hi: f64, n: f64| -> (u32, u32) {
            if !(lo < n && hi > 0.0) {
                return (0, 0);
            }
            let a = lo.floor().max(0.0);
            let b = hi.ceil().min(n);
            (a as u32, b as u32)
        };
        let (x0, x1) = clip(cx - sx, cx + sx, w);
        let (y0, y1) = clip(cy - sy, cy + sy, h);
        if x0 >= x1 || y0 >= y1 {
            PixelRect { x0: 0, y0: 0, x1: 0, y1: 0 }
        } else {
            PixelRect { x0, y0, x1, y1 }
        }
    }
}

/// Activates every alive splat; dead slots are `None`.
pub(crate) fn activate(set: &SplatSet) -> Result<Vec<Option<ActiveSplat>>> {
    set.validate()?;
    set.gaussians
        .iter()
        .zip(&set.alive)
        .enumerate()
        .map(|(i, (g, &alive))| {
            if !alive {
                return Ok(None);
            }
            let [a, b, d] = g.factor();
            let (inv_a, inv_d) = (1.0 / a, 1.0 / d);
            if !(a > 0.0 && d > 0.0 && inv_a.is_finite() && inv_d.is_finite()) {
                return Err(Error::SingularCovariance(i));
            }
            Ok(Some(ActiveSplat {
                mu: g.mu,
                a,
                b,
                d,
                inv_a,
                inv_d,
                color: g.color,
            }))
        })
        .collect()
}

/// Tile partition of the frame plus per-tile splat bins.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    /// Row-major tile rectangles.
    pub tiles: Vec<PixelRect>,
    /// Ascending splat indices per tile.
    pub bins: Vec<Vec<usize>>,
}

impl TileGrid {
    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    fn partition(width: u32, height: u32, tile_size: u32) -> Self {
        let ts = tile_size.max(1);
        let tiles_x = width.div_ceil(ts);
        let tiles_y = height.div_ceil(ts);
        let mut tiles = Vec::with_capacity((tiles_x * tiles_y) as usize);
        for ty in 0..tiles_y {
            for tx in 0..tiles_x {
                tiles.push(PixelRect {
                    x0: tx * ts,
                    y0: ty * ts,
                    x1: ((tx + 1) * ts).min(width),
                    y1: ((ty + 1) * ts).min(height),
                });
            }
        }
        let bins = vec![Vec::new(); tiles.len()];
        Self {
            tile_size: ts,
            tiles_x,
            tiles_y,
            tiles,
            bins,
        }
    }

    fn bin(&mut self, splats: &[Option<ActiveSplat>], width: u32, height: u32) {
        let ts = self.tile_size;
        for (i, s) in splats.iter().enumerate() {
            let Some(s) = s else { continue };
            let r = s.pixel_box(width, height);
            if r.is_empty() {
                continue;
            }
            for ty in r.y0 / ts..=(r.y1 - 1) / ts {
                for tx in r.x0 / ts..=(r.x1 - 1) / ts {
                    self.bins[(ty * self.tiles_x + tx) as usize].push(i);
                }
            }
        }
    }
}

/// Partitions the frame into tiles and bins every alive splat by its cutoff box.
pub fn build_tiles(set: &SplatSet, tile_size: u32) -> Result<TileGrid> {
    let splats = activate(set)?;
    Ok(tiles_for(&splats, set.width, set.height, tile_size))
}

pub(crate) fn tiles_for(
    splats: &[Option<ActiveSplat>],
    width: u32,
    height: u32,
    tile_size: u32,
) -> TileGrid {
    let mut grid = TileGrid::partition(width, height, tile_size);
    grid.bin(splats, width, height);
    grid
}

/// Pixel-center coordinate in normalized units.
#[inline(always)]
pub(crate) fn center(i: u32, extent: u32) -> f64 {
    (i as f64 + 0.5) / extent as f64
}

/// Reference evaluation: every alive splat at every pixel, index order.
pub fn render_naive(set: &SplatSet) -> Result<ImageBuffer> {
    let splats: Vec<ActiveSplat> = activate(set)?.into_iter().flatten().collect();
    let (w, h) = (set.width, set.height);
    Ok(ImageBuffer::from_fn(w, h, |x, y| {
        let (px, py) = (center(x, w), center(y, h));
        let mut acc = [0.0f64; 3];
        for s in &splats {
            let wt = s.eval(px, py);
            for c in 0..3 {
                acc[c] += s.color[c] * wt;
            }
        }
        acc.map(|v| v as f32)
    }))
}

/// Whitened offset along one pixel row: `z₁ = u₁·k + v₁`, `z₂ = u₂·k + v₂`
/// for the `k`-th pixel right of the row start.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowLine {
    pub u1: f64,
    pub v1: f64,
    pub u2: f64,
    pub v2: f64,
    /// `|u|²` and `exp(-|u|²)`, shared by every row of a span.
    qa: f64,
    step: f64,
}

/// Row lines of one splat for rows starting at a fixed column.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowSpan {
    line: RowLine,
    mu_y: f64,
    b: f64,
    inv_d: f64,
    height: u32,
}

impl RowSpan {
    pub fn at(&self, y: u32) -> RowLine {
        let dy = center(y, self.height) - self.mu_y;
        RowLine {
            v2: (dy - self.b * self.line.v1) * self.inv_d,
            ..self.line
        }
    }
}

impl ActiveSplat {
    pub fn row_span(&self, x0: u32, width: u32, height: u32) -> RowSpan {
        let u1 = self.inv_a / width as f64;
        let u2 = -self.b * u1 * self.inv_d;
        let qa = u1 * u1 + u2 * u2;
        RowSpan {
            line: RowLine {
                u1,
                v1: (center(x0, width) - self.mu[0]) * self.inv_a,
                u2,
                v2: 0.0,
                qa,
                step: (-qa).exp(),
            },
            mu_y: self.mu[1],
            b: self.b,
            inv_d: self.inv_d,
            height,
        }
    }
}

/// Fills `out[k] = exp(-½ q(k))` for a row of `out.len()` pixels.
///
/// `q` is quadratic in `k`, so successive weight ratios form a geometric
/// sequence. The walk starts at the pixel nearest the vertex and moves
/// outward, where weights only shrink and underflow cleanly to zero.
pub(crate) fn row_weights(line: &RowLine, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    let qa = line.qa;
    let vertex = -(line.u1 * line.v1 + line.u2 * line.v2) / qa;
    let k0 = if vertex.is_finite() {
        vertex.round().clamp(0.0, (n - 1) as f64) as usize
    } else {
        0
    };
    let kf = k0 as f64;
    let (z1, z2) = (line.u1 * kf + line.v1, line.u2 * kf + line.v2);
    // q(k0 ± 1) - q(k0) = qa ± 2 u·z
    let slope = 2.0 * (line.u1 * z1 + line.u2 * z2);
    out[k0] = (-0.5 * (z1 * z1 + z2 * z2)).exp();
    let mut fwd = 0.0;
    if k0 + 1 < n {
        fwd = (-0.5 * (qa + slope)).exp();
        let mut ratio = fwd;
        for k in k0 + 1..n {
            out[k] = out[k - 1] * ratio;
            ratio *= line.step;
        }
    }
    if k0 > 0 {
        // forward and backward ratios at k0 multiply to exp(-qa)
        let mut ratio = if fwd > 0.0 && fwd.is_finite() {
            line.step / fwd
        } else {
            (-0.5 * (qa - slope)).exp()
        };
        for k in (0..k0).rev() {
            out[k] = out[k + 1] * ratio;
            ratio *= line.step;
        }
    }
}

/// Accumulates one tile into `out` (tile-local, row-major RGB, f64).
/// When `weights` is given, per-splat weights are cached bin-major.
pub(crate) fn rasterize_tile(
    rect: &PixelRect,
    bin: &[usize],
    splats: &[Option<ActiveSplat>],
    width: u32,
    height: u32,
    out: &mut [f64],
    mut weights: Option<&mut Vec<f64>>,
) {
    out.fill(0.0);
    let tw = rect.width() as usize;
    let area = rect.area();
    let mut scratch = Vec::new();
    if let Some(ws) = weights.as_deref_mut() {
        ws.clear();
        ws.resize(bin.len() * area, 0.0);
    } else {
        scratch.resize(area, 0.0);
    }
    for (j, &i) in bin.iter().enumerate() {
        let s = splats[i].as_ref().expect("binned splats are alive");
        let ws: &mut [f64] = match weights.as_deref_mut() {
            Some(ws) => &mut ws[j * area..(j + 1) * area],
            None => &mut scratch,
        };
        let span = s.row_span(rect.x0, width, height);
        for (row, y) in (rect.y0..rect.y1).enumerate() {
            row_weights(&span.at(y), &mut ws[row * tw..(row + 1) * tw]);
        }
        for (px, &wt) in out.chunks_exact_mut(3).zip(ws.iter()) {
            px[0] += s.color[0] * wt;
            px[1] += s.color[1] * wt;
            px[2] += s.color[2] * wt;
        }
    }
}

fn render_with(splats: &[Option<ActiveSplat>], width: u32, height: u32, tile_size: u32) -> ImageBuffer {
    let grid = tiles_for(splats, width, height, tile_size);
    let tiles: Vec<Vec<f64>> = grid
        .tiles
        .par_iter()
        .zip(grid.bins.par_iter())
        .map(|(rect, bin)| {
            let mut buf = vec![0.0; rect.area() * 3];
            rasterize_tile(rect, bin, splats, width, height, &mut buf, None);
            buf
        })
        .collect();
    let mut img = ImageBuffer::zeros(width, height);
    for (rect, buf) in grid.tiles.iter().zip(&tiles) {
        let tw = rect.width() as usize * 3;
        for (row, y) in (rect.y0..rect.y1).enumerate() {
            let start = (y as usize * width as usize + rect.x0 as usize) * 3;
            for (dst, src) in img.data[start..start + tw]
                .iter_mut()
                .zip(&buf[row * tw..(row + 1) * tw])
            {
                *dst = *src as f32;
            }
        }
    }
    img
}

/// Tile-parallel render. Output does not depend on the worker count.
pub fn render_tiled(set: &SplatSet, tile_size: u32) -> Result<ImageBuffer> {
    let splats = activate(set)?;
    Ok(render_with(&splats, set.width, set.height, tile_size))
}

/// [`render_tiled`] with the default tile size.
pub fn render(set: &SplatSet) -> Result<ImageBuffer> {
    render_tiled(set, DEFAULT_TILE_SIZE)
}

/// Renders many same-sized sets concurrently.
pub fn render_batch(sets: &[SplatSet], tile_size: u32) -> Result<Vec<ImageBuffer>> {
    if let Some(first) = sets.first() {
        if sets
            .iter()
            .any(|s| s.width != first.width || s.height != first.height)
        {
            return Err(Error::MixedDimensions);
        }
    }
    sets.par_iter().map(|s| render_tiled(s, tile_size)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{softplus_inv, Gaussian2D};

    fn iso(mu: [f64; 2], sigma: f64, color: [f64; 3]) -> Gaussian2D {
        Gaussian2D::from_sigma(mu, [sigma, sigma], color)
    }

    #[test]
    fn empty_set_renders_black() {
        let set = SplatSet::empty(8, 8);
        assert!(render_naive(&set).unwrap().data.iter().all(|&v| v == 0.0));
        assert!(render_tiled(&set, 16).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_pixel_gets_full_weight() {
        // pixel (3, 5) center on an 8x8 frame
        let mu = [3.5 / 8.0, 5.5 / 8.0];
        let set = SplatSet::new(8, 8, vec![iso(mu, 0.1, [1.0, 0.0, 0.0])]);
        let img = render_naive(&set).unwrap();
        assert_eq!(img.pixel(3, 5), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn mahalanobis_two_gives_e_minus_two() {
        // sigma of one pixel, pixel two to the right: q = 4, weight e^-2
        let mu = [3.5 / 16.0, 3.5 / 16.0];
        let set = SplatSet::new(16, 16, vec![iso(mu, 1.0 / 16.0, [0.5, 1.0, 2.0])]);
        let img = render_naive(&set).unwrap();
        let e2 = (-2.0f64).exp();
        let p = img.pixel(5, 3);
        for (c, want) in [0.5, 1.0, 2.0].iter().enumerate() {
            assert!((p[c] as f64 - want * e2).abs() < 1e-6);
        }
        assert!((e2 - 0.1353).abs() < 1e-4);
    }

    #[test]
    fn tile_partition_224() {
        let grid = build_tiles(&SplatSet::empty(224, 224), 16).unwrap();
        assert_eq!(grid.tile_count(), 196);
        let grid = build_tiles(&SplatSet::empty(33, 17), 16).unwrap();
        assert_eq!((grid.tiles_x, grid.tiles_y), (3, 2));
        let covered: usize = grid.tiles.iter().map(|t| t.area()).sum();
        assert_eq!(covered, 33 * 17);
    }

    #[test]
    fn huge_splat_lands_everywhere() {
        let set = SplatSet::new(64, 64, vec![iso([0.5, 0.5], 2.0, [1.0; 3])]);
        let grid = build_tiles(&set, 16).unwrap();
        assert!(grid.bins.iter().all(|b| b == &vec![0]));
    }

    #[test]
    fn tiny_splat_lands_once() {
        let set = SplatSet::new(64, 64, vec![iso([40.0 / 64.0, 24.0 / 64.0], 0.2 / 64.0, [1.0; 3])]);
        let grid = build_tiles(&set, 16).unwrap();
        let hits: Vec<usize> = (0..grid.tile_count()).filter(|&t| !grid.bins[t].is_empty()).collect();
        assert_eq!(hits, vec![4 + 2]);
    }

    #[test]
    fn off_frame_splat_is_not_binned() {
        let set = SplatSet::new(32, 32, vec![iso([3.0, -2.0], 0.01, [1.0; 3])]);
        let grid = build_tiles(&set, 16).unwrap();
        assert!(grid.bins.iter().all(|b| b.is_empty()));
    }

    #[test]
    fn singular_factor_is_reported() {
        let mut g = iso([0.5, 0.5], 0.1, [1.0; 3]);
        g.chol[2] = -1000.0;
        let set = SplatSet::new(8, 8, vec![iso([0.5, 0.5], 0.1, [1.0; 3]), g]);
        assert_eq!(render_naive(&set), Err(Error::SingularCovariance(1)));
        assert_eq!(render_tiled(&set, 4), Err(Error::SingularCovariance(1)));
    }

    #[test]
    fn central_splat_matches_naive() {
        for size in [32u32, 64, 224] {
            let sigma = 1.0 / 8.0;
            let set = SplatSet::new(size, size, vec![iso([0.5, 0.5], sigma, [1.0, 0.5, 0.25])]);
            let a = render_tiled(&set, 16).unwrap();
            let b = render_naive(&set).unwrap();
            let dev = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            // single splat, |c| <= 1: the truncation bound is e^-8
            let bound = (-0.5 * CUTOFF_SIGMAS * CUTOFF_SIGMAS).exp();
            assert!(dev as f64 <= bound + 1e-7, "{size}: {dev}");
            assert!(dev < 1e-3, "{size}: {dev}");
        }
    }

    #[test]
    fn dead_splats_do_not_render() {
        let mut set = SplatSet::new(
            16,
            16,
            vec![
                iso([0.2, 0.3], 0.1, [1.0, 0.0, 0.0]),
                iso([0.6, 0.6], 0.2, [0.0, 1.0, 0.0]),
                iso([0.8, 0.1], 0.05, [0.0, 0.0, 1.0]),
            ],
        );
        set.alive[1] = false;
        assert_eq!(render_tiled(&set, 4).unwrap(), render_tiled(&set.compact(), 4).unwrap());
        assert_eq!(render_naive(&set).unwrap(), render_naive(&set.compact()).unwrap());
    }

    #[test]
    fn mixed_batch_rejected() {
        let sets = vec![SplatSet::empty(8, 8), SplatSet::empty(8, 9)];
        assert_eq!(render_batch(&sets, 16), Err(Error::MixedDimensions));
        assert!(render_batch(&[], 16).unwrap().is_empty());
    }

    #[test]
    fn row_recurrence_matches_direct_exp() {
        let gs = [
            Gaussian2D { mu: [0.31, 0.62], chol: [-3.0, 0.02, -2.5], color: [1.0; 3] },
            Gaussian2D { mu: [1.7, -0.4], chol: [-4.5, -0.01, -4.0], color: [1.0; 3] },
            Gaussian2D { mu: [0.5, 0.5], chol: [2.0, 0.5, 1.0], color: [1.0; 3] },
            Gaussian2D { mu: [0.05, 0.9], chol: [-8.0, 0.0, -8.0], color: [1.0; 3] },
        ];
        let (w, h) = (64u32, 48u32);
        for g in gs {
            let s = activate(&SplatSet::new(w, h, vec![g])).unwrap()[0].unwrap();
            for y in (0..h).step_by(5) {
                for x0 in [0u32, 13, 40] {
                    let mut out = vec![0.0; 24.min((w - x0) as usize)];
                    row_weights(&s.row_span(x0, w, h).at(y), &mut out);
                    for (k, got) in out.iter().enumerate() {
                        let want = s.eval(center(x0 + k as u32, w), center(y, h));
                        assert!((got - want).abs() <= 1e-13 * want.max(1e-300), "{got} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_softplus_scale() {
        let s = softplus_inv(0.5);
        let g = Gaussian2D {
            mu: [0.5, 0.5],
            chol: [s, 0.0, s],
            color: [1.0; 3],
        };
        let c = g.covariance();
        assert!((c[0][0] - 0.25).abs() < 1e-12);
    }
}
