//! Gradient-descent fitting of a splat set to an image.

mod adam;
mod init;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use init::{init_random, init_structured, init_structured_scaled, GridLayout, InitStrategy};

use crate::error::{Error, Result};
use crate::grad::Objective;
use crate::metrics::psnr;
use crate::model::{ImageBuffer, SplatSet, PARAMS_PER_GAUSSIAN};
use crate::prune::{prune, PruneConfig, PruneStats};
use crate::render::{render_tiled, DEFAULT_TILE_SIZE};

/// Default (mu, chol, color) step sizes relative to `learning_rate`.
pub const GROUP_SCALE: [f64; 3] = [0.1, 0.3, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub num_gaussians: usize,
    pub iterations: usize,
    /// Base step size. Groups without an override use it scaled by
    /// [`GROUP_SCALE`].
    pub learning_rate: f64,
    pub lr_mu: Option<f64>,
    pub lr_chol: Option<f64>,
    pub lr_color: Option<f64>,
    pub l1_weight: f64,
    pub init_strategy: InitStrategy,
    /// Multiplies the structured-init inscribed radius.
    pub init_sigma_scale: f64,
    pub prune: Option<PruneConfig>,
    pub seed: u64,
    pub tile_size: u32,
    pub log_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            num_gaussians: 400,
            iterations: 3000,
            learning_rate: 1e-2,
            lr_mu: None,
            lr_chol: None,
            lr_color: None,
            l1_weight: 0.0,
            init_strategy: InitStrategy::Structured,
            init_sigma_scale: 1.0,
            prune: None,
            seed: 0,
            tile_size: DEFAULT_TILE_SIZE,
            log_every: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_gaussians < 1 {
            return bad("num_gaussians must be >= 1".into());
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        for (name, lr) in [
            ("learning_rate", Some(self.learning_rate)),
            ("lr_mu", self.lr_mu),
            ("lr_chol", self.lr_chol),
            ("lr_color", self.lr_color),
        ] {
            if let Some(lr) = lr {
                if !(lr > 0.0 && lr.is_finite()) {
                    return bad(format!("{name} must be positive, got {lr}"));
                }
            }
        }
        if !(self.l1_weight >= 0.0 && self.l1_weight.is_finite()) {
            return bad(format!("l1_weight must be >= 0, got {}", self.l1_weight));
        }
        if !(self.init_sigma_scale > 0.0 && self.init_sigma_scale.is_finite()) {
            return bad("init_sigma_scale must be positive".into());
        }
        if self.tile_size < 1 {
            return bad("tile_size must be >= 1".into());
        }
        if self.log_every < 1 {
            return bad("log_every must be >= 1".into());
        }
        if let Some(p) = &self.prune {
            p.validate()?;
        }
        Ok(())
    }

    /// Step sizes for (mu, chol, color).
    pub fn group_rates(&self) -> [f64; 3] {
        [
            self.lr_mu.unwrap_or(GROUP_SCALE[0] * self.learning_rate),
            self.lr_chol.unwrap_or(GROUP_SCALE[1] * self.learning_rate),
            self.lr_color.unwrap_or(GROUP_SCALE[2] * self.learning_rate),
        ]
    }

    /// Iteration before which pruning runs, if configured.
    pub fn prune_iteration(&self) -> Option<usize> {
        self.prune
            .as_ref()
            .map(|p| ((p.schedule_fraction * self.iterations as f64).floor() as usize).min(self.iterations))
    }

    pub fn initial_set(&self, target: &ImageBuffer) -> SplatSet {
        match self.init_strategy {
            InitStrategy::Structured => init_structured_scaled(target, self.num_gaussians, self.init_sigma_scale),
            InitStrategy::Random => init_random(target, self.num_gaussians, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    /// Iteration index of each logged sample; the last entry is the
    /// state after the final step.
    pub logged_iterations: Vec<usize>,
    pub loss_trajectory: Vec<f64>,
    pub psnr_trajectory: Vec<f64>,
    pub alive_counts: Vec<usize>,
    pub final_loss: f64,
    pub final_psnr: f64,
    pub initial_psnr: f64,
    pub prune: Option<PruneStats>,
    pub wall_time: f64,
}

/// Fits from the configured initialization.
pub fn fit(target: &ImageBuffer, config: &FitConfig) -> Result<(SplatSet, FitReport)> {
    config.validate()?;
    target.validate()?;
    fit_from(target, config.initial_set(target), config)
}

/// Fits starting from a caller-provided set.
pub fn fit_from(target: &ImageBuffer, mut set: SplatSet, config: &FitConfig) -> Result<(SplatSet, FitReport)> {
    config.validate()?;
    let start = Instant::now();
    if set.width != target.width || set.height != target.height {
        return Err(Error::DimensionMismatch(format!(
            "initial set is {}x{}, target is {}x{}",
            set.width, set.height, target.width, target.height
        )));
    }
    set.validate()?;
    let objective = Objective::new(config.l1_weight, config.tile_size);
    let rates = config.group_rates();
    let lr = |i: usize| match i % PARAMS_PER_GAUSSIAN {
        0 | 1 => rates[0],
        2..=4 => rates[1],
        _ => rates[2],
    };
    let prune_at = config.prune_iteration();

    let mut params: Vec<f64> = set.gaussians.iter().flat_map(|g| g.to_params()).collect();
    let mut flat_grads = vec![0.0; params.len()];
    let mut opt = Adam::new(params.len());
    let mut report = FitReport {
        logged_iterations: Vec::new(),
        loss_trajectory: Vec::new(),
        psnr_trajectory: Vec::new(),
        alive_counts: Vec::new(),
        final_loss: f64::NAN,
        final_psnr: f64::NAN,
        initial_psnr: psnr(&render_tiled(&set, config.tile_size)?, target)?,
        prune: None,
        wall_time: 0.0,
    };

    for it in 0..config.iterations {
        if prune_at == Some(it) {
            let (pruned, stats) = prune(&set, config.prune.as_ref().expect("scheduled"));
            set = pruned;
            report.prune = Some(stats);
        }
        let (loss, grads) = match objective.backward(&set, target) {
            Err(Error::SingularCovariance(_)) => return Err(Error::NonFiniteLoss(it)),
            r => r?,
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(it));
        }
        if it % config.log_every == 0 {
            log_sample(&mut report, it, loss, &set, target, config.tile_size)?;
        }
        for i in 0..set.len() {
            flat_grads[i * PARAMS_PER_GAUSSIAN..(i + 1) * PARAMS_PER_GAUSSIAN].copy_from_slice(&grads.params(i));
        }
        let alive = &set.alive;
        opt.step(&mut params, &flat_grads, lr, |i| !alive[i / PARAMS_PER_GAUSSIAN]);
        for (g, p) in set.gaussians.iter_mut().zip(params.chunks_exact(PARAMS_PER_GAUSSIAN)) {
            *g = crate::model::Gaussian2D::from_params(p);
        }
        if set.gaussians.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss(it));
        }
    }
    if prune_at == Some(config.iterations) {
        let (pruned, stats) = prune(&set, config.prune.as_ref().expect("scheduled"));
        set = pruned;
        report.prune = Some(stats);
    }

    let final_loss = match objective.loss(&set, target) {
        Err(Error::SingularCovariance(_)) => f64::NAN,
        r => r?,
    };
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss(config.iterations));
    }
    let set = set.compact();
    log_sample(&mut report, config.iterations, final_loss, &set, target, config.tile_size)?;
    report.final_loss = final_loss;
    report.final_psnr = *report.psnr_trajectory.last().expect("logged");
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((set, report))
}

fn log_sample(
    report: &mut FitReport,
    it: usize,
    loss: f64,
    set: &SplatSet,
    target: &ImageBuffer,
    tile_size: u32,
) -> Result<()> {
    report.logged_iterations.push(it);
    report.loss_trajectory.push(loss);
    report.psnr_trajectory.push(psnr(&render_tiled(set, tile_size)?, target)?);
    report.alive_counts.push(set.alive_count());
    Ok(())
}

/// Fits every target concurrently; image `k` uses seed `config.seed + k`.
pub fn fit_batch(targets: &[ImageBuffer], config: &FitConfig) -> Result<Vec<(SplatSet, FitReport)>> {
    if let Some(first) = targets.first() {
        if targets.iter().any(|t| !t.same_dims(first)) {
            return Err(Error::MixedDimensions);
        }
    }
    config.validate()?;
    targets
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            let cfg = FitConfig {
                seed: config.seed.wrapping_add(k as u64),
                ..config.clone()
            };
            fit(t, &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gaussian2D;
    use crate::render::render;

    fn quick(n: usize, iterations: usize) -> FitConfig {
        FitConfig {
            num_gaussians: n,
            iterations,
            ..FitConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        assert!(quick(0, 10).validate().is_err());
        assert!(quick(4, 0).validate().is_err());
        let c = FitConfig {
            learning_rate: 0.0,
            ..FitConfig::default()
        };
        assert!(c.validate().is_err());
        let c = FitConfig {
            lr_mu: Some(-1.0),
            ..FitConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn uniform_gray_is_fit_by_four_broad_splats() {
        let target = ImageBuffer::filled(32, 32, [0.5; 3]);
        let (set, report) = fit(&target, &quick(4, 100)).unwrap();
        assert!(report.final_psnr > 25.0, "{}", report.final_psnr);
        assert_eq!(set.len(), 4);
        let (_, report) = fit(&target, &quick(4, 2000)).unwrap();
        assert!(report.final_psnr > 40.0, "{}", report.final_psnr);
    }

    #[test]
    fn recovers_single_rendered_splat() {
        let truth = SplatSet::new(
            32,
            32,
            vec![Gaussian2D::from_sigma([0.45, 0.55], [0.15, 0.1], [0.8, 0.4, 0.2])],
        );
        let target = render(&truth).unwrap();
        let start = SplatSet::new(
            32,
            32,
            vec![Gaussian2D::from_sigma([0.5, 0.5], [0.12, 0.12], [0.6, 0.6, 0.6])],
        );
        let (_, report) = fit_from(&target, start, &quick(1, 400)).unwrap();
        assert!(report.final_psnr > 40.0, "{}", report.final_psnr);
    }

    #[test]
    fn report_cadence() {
        let target = ImageBuffer::filled(16, 16, [0.2, 0.4, 0.6]);
        let (_, r) = fit(&target, &quick(4, 120)).unwrap();
        assert_eq!(r.logged_iterations, vec![0, 50, 100, 120]);
        assert_eq!(r.loss_trajectory.len(), 4);
        assert_eq!(r.final_psnr, *r.psnr_trajectory.last().unwrap());
    }

    #[test]
    fn loss_does_not_rise_over_100_iterations() {
        for (kind, n) in [("gaussian-blobs", 64), ("bandlimited-noise", 576)] {
            let target = crate::corpus::generate_synthetic(kind, 0, 48, 48).unwrap();
            let config = FitConfig {
                log_every: 10,
                ..quick(n, 600)
            };
            let (_, r) = fit(&target, &config).unwrap();
            for (a, b) in r.loss_trajectory.iter().zip(r.loss_trajectory.iter().skip(10)) {
                assert!(b <= a, "{kind}: loss rose from {a} to {b}");
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let target = ImageBuffer::filled(16, 16, [0.2, 0.4, 0.6]);
        let cfg = FitConfig {
            learning_rate: 1e300,
            ..quick(4, 20)
        };
        assert!(matches!(fit(&target, &cfg), Err(Error::NonFiniteLoss(_))));
    }

    #[test]
    fn pruning_reduces_alive_count() {
        let target = ImageBuffer::from_fn(32, 32, |x, _| if x < 16 { [0.0; 3] } else { [0.9; 3] });
        let cfg = FitConfig {
            prune: Some(PruneConfig::with_ratio(0.5)),
            ..quick(16, 100)
        };
        let (set, r) = fit(&target, &cfg).unwrap();
        assert_eq!(set.len(), 8);
        assert_eq!(r.prune.unwrap().pruned_count, 8);
        let after: Vec<usize> = r
            .logged_iterations
            .iter()
            .zip(&r.alive_counts)
            .filter(|(&it, _)| it >= 70)
            .map(|(_, &c)| c)
            .collect();
        assert!(after.iter().all(|&c| c == 8));
        assert!(r.alive_counts.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn batch_matches_sequential() {
        let targets: Vec<ImageBuffer> = (0..3)
            .map(|k| ImageBuffer::from_fn(16, 16, |x, y| [(x + k) as f32 / 20.0, y as f32 / 16.0, 0.3]))
            .collect();
        let cfg = FitConfig {
            init_strategy: InitStrategy::Random,
            seed: 9,
            ..quick(6, 30)
        };
        let batch = fit_batch(&targets, &cfg).unwrap();
        for (k, (set, rep)) in batch.iter().enumerate() {
            let (s, r) = fit(
                &targets[k],
                &FitConfig {
                    seed: 9 + k as u64,
                    ..cfg.clone()
                },
            )
            .unwrap();
            assert_eq!(&s, set);
            assert_eq!(r.final_psnr, rep.final_psnr);
        }
        let mixed = vec![ImageBuffer::zeros(8, 8), ImageBuffer::zeros(9, 8)];
        assert_eq!(fit_batch(&mixed, &cfg).err(), Some(Error::MixedDimensions));
    }
}
