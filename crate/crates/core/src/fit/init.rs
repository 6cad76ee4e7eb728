//! Splat initialization strategies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Gaussian2D, ImageBuffer, SplatSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    #[default]
    Structured,
    Random,
}

impl std::str::FromStr for InitStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structured" => Ok(Self::Structured),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown init strategy `{other}`")),
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Structured => "structured",
            Self::Random => "random",
        })
    }
}

/// Row/column layout of the initialization grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
}

impl GridLayout {
    /// `rows = round(sqrt(n·H/W))`, `cols = ceil(n / rows)`: cells stay close
    /// to square in pixels.
    pub fn for_count(n: usize, width: u32, height: u32) -> Self {
        let n = n.max(1);
        let rows = ((n as f64 * height as f64 / width as f64).sqrt().round() as usize).max(1);
        let cols = n.div_ceil(rows);
        Self { rows, cols }
    }

    pub fn cell_size_px(&self, width: u32, height: u32) -> (f64, f64) {
        (width as f64 / self.cols as f64, height as f64 / self.rows as f64)
    }

    /// Radius in pixels of the largest circle inside one cell.
    pub fn inscribed_radius_px(&self, width: u32, height: u32) -> f64 {
        let (cw, ch) = self.cell_size_px(width, height);
        cw.min(ch) / 2.0
    }
}

/// Per-axis normalized standard deviation for a pixel-space circle.
fn circle_sigma(radius_px: f64, width: u32, height: u32) -> [f64; 2] {
    [radius_px / width as f64, radius_px / height as f64]
}

/// Grid-placed splats with inscribed-circle covariance and cell-mean color.
///
/// The first `num_gaussians` cells of the grid are used in row-major order.
/// `sigma_scale` multiplies the inscribed radius (1.0 puts the 1σ contour
/// on the circle).
pub fn init_structured_scaled(target: &ImageBuffer, num_gaussians: usize, sigma_scale: f64) -> SplatSet {
    let (w, h) = (target.width, target.height);
    let n = num_gaussians.max(1);
    let grid = GridLayout::for_count(n, w, h);
    let sigma = circle_sigma(grid.inscribed_radius_px(w, h) * sigma_scale, w, h);

    let mut sums = vec![[0.0f64; 3]; n];
    let mut counts = vec![0usize; n];
    let col_of: Vec<usize> = (0..w)
        .map(|x| (((x as f64 + 0.5) * grid.cols as f64 / w as f64) as usize).min(grid.cols - 1))
        .collect();
    for y in 0..h {
        let row = (((y as f64 + 0.5) * grid.rows as f64 / h as f64) as usize).min(grid.rows - 1);
        for x in 0..w {
            let cell = row * grid.cols + col_of[x as usize];
            if cell >= n {
                continue;
            }
            let p = target.pixel(x, y);
            for c in 0..3 {
                sums[cell][c] += p[c] as f64;
            }
            counts[cell] += 1;
        }
    }

    let gaussians = (0..n)
        .map(|cell| {
            let (row, col) = (cell / grid.cols, cell % grid.cols);
            let mu = [
                (col as f64 + 0.5) / grid.cols as f64,
                (row as f64 + 0.5) / grid.rows as f64,
            ];
            let color = if counts[cell] > 0 {
                sums[cell].map(|s| s / counts[cell] as f64)
            } else {
                // cell narrower than a pixel: take the pixel under its center
                let x = ((mu[0] * w as f64) as u32).min(w - 1);
                let y = ((mu[1] * h as f64) as u32).min(h - 1);
                target.pixel(x, y).map(|v| v as f64)
            };
            Gaussian2D::from_sigma(mu, sigma, color)
        })
        .collect();
    SplatSet::new(w, h, gaussians)
}

pub fn init_structured(target: &ImageBuffer, num_gaussians: usize) -> SplatSet {
    init_structured_scaled(target, num_gaussians, 1.0)
}

/// Uniform positions, colors in `[0, 1]`, and σ drawn uniformly from
/// `[0.25, 1.0]` times the structured inscribed radius. Deterministic in `seed`.
pub fn init_random(target: &ImageBuffer, num_gaussians: usize, seed: u64) -> SplatSet {
    let (w, h) = (target.width, target.height);
    let n = num_gaussians.max(1);
    let radius = GridLayout::for_count(n, w, h).inscribed_radius_px(w, h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|_| {
            let mu = [rng.gen::<f64>(), rng.gen::<f64>()];
            let scale = rng.gen_range(0.25..=1.0);
            let color = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            Gaussian2D::from_sigma(mu, circle_sigma(radius * scale, w, h), color)
        })
        .collect();
    SplatSet::new(w, h, gaussians)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softplus;

    #[test]
    fn single_splat_on_gray() {
        let img = ImageBuffer::filled(10, 6, [0.5; 3]);
        let set = init_structured(&img, 1);
        let g = set.gaussians[0];
        assert_eq!(g.mu, [0.5, 0.5]);
        assert_eq!(g.color, [0.5; 3]);
        // radius is half the short side, 3 px
        assert!((softplus(g.chol[0]) * 10.0 - 3.0).abs() < 1e-9);
        assert!((softplus(g.chol[2]) * 6.0 - 3.0).abs() < 1e-9);
        assert_eq!(g.chol[1], 0.0);
    }

    #[test]
    fn block_colors_are_cell_means() {
        let blocks = [[0.1f32, 0.2, 0.3], [0.9, 0.8, 0.7], [0.0, 1.0, 0.0], [0.5, 0.5, 0.5]];
        let img = ImageBuffer::from_fn(8, 8, |x, y| blocks[(y / 4 * 2 + x / 4) as usize]);
        let set = init_structured(&img, 4);
        assert_eq!(set.len(), 4);
        for (g, b) in set.gaussians.iter().zip(blocks) {
            for c in 0..3 {
                assert!((g.color[c] - b[c] as f64).abs() < 1e-7);
            }
        }
        assert_eq!(set.gaussians[1].mu, [0.75, 0.25]);
    }

    #[test]
    fn grid_400_on_224() {
        let grid = GridLayout::for_count(400, 224, 224);
        assert_eq!(grid, GridLayout { rows: 20, cols: 20 });
        let (cw, ch) = grid.cell_size_px(224, 224);
        assert!((cw - 11.2).abs() < 1e-12 && (ch - 11.2).abs() < 1e-12);
        let img = ImageBuffer::filled(224, 224, [0.3; 3]);
        let set = init_structured(&img, 400);
        let s = softplus(set.gaussians[0].chol[0]);
        assert!((s - 5.6 / 224.0).abs() < 1e-12);
        assert!((s - 0.025).abs() < 1e-12);
        assert!((set.gaussians[0].mu[0] - 5.6 / 224.0).abs() < 1e-12);
    }

    #[test]
    fn partial_last_row() {
        // 5 splats on a square: 2 rows x 3 cols, last row has two cells used
        let grid = GridLayout::for_count(5, 30, 30);
        assert_eq!(grid, GridLayout { rows: 2, cols: 3 });
        let set = init_structured(&ImageBuffer::filled(30, 30, [1.0; 3]), 5);
        assert_eq!(set.len(), 5);
        assert_eq!(set.gaussians[4].mu, [0.5, 0.75]);
        let wide = GridLayout::for_count(8, 40, 10);
        assert_eq!(wide, GridLayout { rows: 1, cols: 8 });
    }

    #[test]
    fn more_cells_than_pixels() {
        let img = ImageBuffer::from_fn(4, 4, |x, y| [x as f32 / 4.0, y as f32 / 4.0, 0.0]);
        let set = init_structured(&img, 100);
        assert_eq!(set.len(), 100);
        assert!(set.validate().is_ok());
    }

    #[test]
    fn random_is_seeded() {
        let img = ImageBuffer::filled(32, 32, [0.5; 3]);
        assert_eq!(init_random(&img, 50, 3), init_random(&img, 50, 3));
        assert_ne!(init_random(&img, 50, 3).gaussians[0].mu, init_random(&img, 50, 4).gaussians[0].mu);
    }

    #[test]
    fn random_ranges() {
        let img = ImageBuffer::filled(64, 48, [0.5; 3]);
        let set = init_random(&img, 1000, 11);
        let radius = GridLayout::for_count(1000, 64, 48).inscribed_radius_px(64, 48);
        for g in &set.gaussians {
            assert!(g.mu.iter().all(|m| (0.0..=1.0).contains(m)));
            assert!(g.color.iter().all(|c| (0.0..=1.0).contains(c)));
            let sx = softplus(g.chol[0]) * 64.0;
            assert!(sx >= 0.25 * radius - 1e-9 && sx <= radius + 1e-9);
        }
    }
}
