//! Luminance-threshold pruning.
//!
//! Every alive splat whose color luminance falls strictly below the
//! threshold is a candidate. Candidates are ranked by ascending luminance
//! (ties by lower index) and at most `floor(max_prune_fraction · n_alive)`
//! of them are masked dead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SplatSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LuminanceMode {
    /// `|0.299 r + 0.587 g + 0.114 b|`
    #[default]
    Rec601,
    /// Euclidean norm of the color vector.
    L2Norm,
}

impl LuminanceMode {
    pub fn measure(self, color: [f64; 3]) -> f64 {
        match self {
            LuminanceMode::Rec601 => luminance(color),
            LuminanceMode::L2Norm => color.iter().map(|c| c * c).sum::<f64>().sqrt(),
        }
    }
}

/// Rec. 601 luma magnitude.
pub fn luminance(color: [f64; 3]) -> f64 {
    (0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2]).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub luminance_threshold: f64,
    pub max_prune_fraction: f64,
    /// Fraction of the fit's iterations after which pruning runs.
    pub schedule_fraction: f64,
    /// When set, the threshold is chosen at prune time so that this
    /// fraction of alive splats is removed; `luminance_threshold` is ignored.
    pub target_ratio: Option<f64>,
    pub mode: LuminanceMode,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            luminance_threshold: 0.0,
            max_prune_fraction: 0.95,
            schedule_fraction: 0.7,
            target_ratio: None,
            mode: LuminanceMode::Rec601,
        }
    }
}

impl PruneConfig {
    pub fn with_threshold(luminance_threshold: f64) -> Self {
        Self {
            luminance_threshold,
            ..Self::default()
        }
    }

    /// Prune exactly `ratio` of the alive splats (to the nearest splat).
    pub fn with_ratio(ratio: f64) -> Self {
        Self {
            target_ratio: Some(ratio),
            max_prune_fraction: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("prune {what}")));
        if !(self.luminance_threshold >= 0.0) {
            return bad("luminance_threshold must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.max_prune_fraction) {
            return bad("max_prune_fraction must be in [0, 1]");
        }
        if !(self.schedule_fraction > 0.0 && self.schedule_fraction <= 1.0) {
            return bad("schedule_fraction must be in (0, 1]");
        }
        if let Some(r) = self.target_ratio {
            if !(0.0..=1.0).contains(&r) {
                return bad("target_ratio must be in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneStats {
    pub pruned_count: usize,
    /// `pruned_count / alive-before`; 0 when nothing was alive.
    pub pruning_ratio: f64,
    pub threshold_used: f64,
}

/// Alive splats sorted by (luminance, index) ascending.
fn ranked(set: &SplatSet, mode: LuminanceMode) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = set
        .alive_indices()
        .map(|i| (mode.measure(set.gaussians[i].color), i))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

/// Masks low-luminance splats dead; returns the pruned set and stats.
pub fn prune(set: &SplatSet, config: &PruneConfig) -> (SplatSet, PruneStats) {
    let ranked = ranked(set, config.mode);
    let n_alive = ranked.len();
    let (threshold, cap) = match config.target_ratio {
        Some(r) => {
            let k = ((r * n_alive as f64).round() as usize).min(n_alive);
            (threshold_for_count(&ranked, k), k)
        }
        None => {
            // guard against k/n·n landing just under an integer
            let cap = (config.max_prune_fraction * n_alive as f64 + 1e-9).floor() as usize;
            (config.luminance_threshold, cap.min(n_alive))
        }
    };
    let mut out = set.clone();
    let mut pruned = 0;
    for &(lum, i) in ranked.iter().take(cap) {
        if !(lum < threshold) {
            break;
        }
        out.alive[i] = false;
        pruned += 1;
    }
    let pruning_ratio = if n_alive > 0 {
        pruned as f64 / n_alive as f64
    } else {
        0.0
    };
    (
        out,
        PruneStats {
            pruned_count: pruned,
            pruning_ratio,
            threshold_used: threshold,
        },
    )
}

/// Smallest threshold separating the `k` lowest-luminance splats from the
/// rest; with ties at the boundary the count cap does the separation.
fn threshold_for_count(ranked: &[(f64, usize)], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let below = ranked[k - 1].0;
    match ranked.get(k) {
        Some(&(above, _)) if above > below => below + (above - below) / 2.0,
        _ => next_up(below),
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_infinite() {
        return x;
    }
    let bits = x.to_bits();
    if x == 0.0 {
        f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// Threshold that prunes `ratio` of the alive splats under `mode`.
pub fn threshold_for_ratio(set: &SplatSet, ratio: f64, mode: LuminanceMode) -> f64 {
    let ranked = ranked(set, mode);
    let k = ((ratio.clamp(0.0, 1.0) * ranked.len() as f64).round() as usize).min(ranked.len());
    threshold_for_count(&ranked, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gaussian2D;
    use proptest::prelude::*;

    fn gray_set(levels: &[f64]) -> SplatSet {
        SplatSet::new(
            8,
            8,
            levels
                .iter()
                .enumerate()
                .map(|(i, &l)| Gaussian2D {
                    mu: [i as f64 / levels.len() as f64, 0.5],
                    chol: [-2.0, 0.0, -2.0],
                    color: [l; 3],
                })
                .collect(),
        )
    }

    #[test]
    fn luminance_values() {
        assert_eq!(luminance([0.0; 3]), 0.0);
        assert!((luminance([1.0; 3]) - 1.0).abs() < 1e-15);
        assert_eq!(luminance([0.0, 1.0, 0.0]), 0.587);
        assert!((luminance([-1.0, -1.0, -1.0]) - 1.0).abs() < 1e-15);
        assert!((LuminanceMode::L2Norm.measure([3.0, 4.0, 0.0]) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn zero_threshold_prunes_nothing() {
        let set = gray_set(&[0.0, 0.1, 0.5]);
        let (out, stats) = prune(&set, &PruneConfig::with_threshold(0.0));
        assert_eq!(out, set);
        assert_eq!(stats.pruned_count, 0);
    }

    #[test]
    fn cap_binds_on_lowest() {
        let levels = [0.9, 0.1, 0.5, 0.3, 0.05, 0.7, 0.2, 0.6, 0.8, 0.4];
        let set = gray_set(&levels);
        let cfg = PruneConfig {
            luminance_threshold: f64::INFINITY,
            max_prune_fraction: 0.5,
            ..PruneConfig::default()
        };
        let (out, stats) = prune(&set, &cfg);
        assert_eq!(stats.pruned_count, 5);
        assert_eq!(stats.pruning_ratio, 0.5);
        let dead: Vec<usize> = (0..10).filter(|&i| !out.alive[i]).collect();
        assert_eq!(dead, vec![1, 3, 4, 6, 9]);
    }

    #[test]
    fn direct_threshold_comparison() {
        let set = gray_set(&[0.01, 0.9]);
        let (out, stats) = prune(&set, &PruneConfig::with_threshold(0.05));
        assert_eq!(out.alive, vec![false, true]);
        assert_eq!(stats.pruned_count, 1);
        assert_eq!(stats.threshold_used, 0.05);
    }

    #[test]
    fn ties_break_by_index() {
        let set = gray_set(&[0.2, 0.2, 0.2, 0.2]);
        let (out, stats) = prune(&set, &PruneConfig::with_ratio(0.5));
        assert_eq!(out.alive, vec![false, false, true, true]);
        assert_eq!(stats.pruned_count, 2);
    }

    #[test]
    fn ratio_targeting_hits_requested_fraction() {
        let levels: Vec<f64> = (0..137).map(|i| ((i * 37) % 137) as f64 / 137.0).collect();
        let set = gray_set(&levels);
        for r in [0.0, 0.2, 0.5, 0.8, 1.0] {
            let (_, stats) = prune(&set, &PruneConfig::with_ratio(r));
            assert!((stats.pruning_ratio - r).abs() <= 0.01, "{r}: {stats:?}");
            let t = threshold_for_ratio(&set, r, LuminanceMode::Rec601);
            let (_, by_t) = prune(
                &set,
                &PruneConfig {
                    luminance_threshold: t,
                    max_prune_fraction: 1.0,
                    ..PruneConfig::default()
                },
            );
            assert!((by_t.pruning_ratio - r).abs() <= 0.01, "{r}: {by_t:?}");
        }
    }

    #[test]
    fn already_dead_are_ignored() {
        let mut set = gray_set(&[0.01, 0.02, 0.9]);
        set.alive[0] = false;
        let (out, stats) = prune(&set, &PruneConfig::with_threshold(0.5));
        assert_eq!(out.alive, vec![false, false, true]);
        assert_eq!(stats.pruned_count, 1);
        assert_eq!(stats.pruning_ratio, 0.5);
    }

    #[test]
    fn config_ranges() {
        assert!(PruneConfig::default().validate().is_ok());
        assert!(PruneConfig::with_threshold(-1.0).validate().is_err());
        let c = PruneConfig {
            schedule_fraction: 0.0,
            ..PruneConfig::default()
        };
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn ratio_monotone_in_threshold(
            levels in proptest::collection::vec(-1.0f64..1.0, 1..40),
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            let set = gray_set(&levels);
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let (_, a) = prune(&set, &PruneConfig::with_threshold(lo));
            let (_, b) = prune(&set, &PruneConfig::with_threshold(hi));
            prop_assert!(a.pruning_ratio <= b.pruning_ratio);
        }

        #[test]
        fn pruning_is_idempotent(
            levels in proptest::collection::vec(0.0f64..1.0, 1..40),
            t in 0.0f64..1.0,
        ) {
            let cfg = PruneConfig { luminance_threshold: t, max_prune_fraction: 1.0, ..PruneConfig::default() };
            let set = gray_set(&levels);
            let (once, _) = prune(&set, &cfg);
            let (twice, stats) = prune(&once, &cfg);
            prop_assert_eq!(stats.pruned_count, 0);
            prop_assert_eq!(once, twice);
        }
    }
}
