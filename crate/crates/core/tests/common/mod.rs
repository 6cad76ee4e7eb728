#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatc::fit::init_random;
use splatc::grad::Objective;
use splatc::model::PARAMS_PER_GAUSSIAN;
use splatc::{Gaussian2D, ImageBuffer, SplatSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Splats with footprints between a fraction of a pixel and a third of the frame.
pub fn random_set(rng: &mut ChaCha8Rng, width: u32, height: u32, n: usize) -> SplatSet {
    let gaussians = (0..n)
        .map(|_| Gaussian2D {
            mu: [rng.gen_range(-0.1..1.1), rng.gen_range(-0.1..1.1)],
            chol: [rng.gen_range(-4.5..-1.5), rng.gen_range(-0.1..0.1), rng.gen_range(-4.5..-1.5)],
            color: [rng.gen_range(-0.5..1.0), rng.gen_range(-0.5..1.0), rng.gen_range(-0.5..1.0)],
        })
        .collect();
    SplatSet::new(width, height, gaussians)
}

pub fn random_image(rng: &mut ChaCha8Rng, width: u32, height: u32) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

pub fn max_abs_diff(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
}

/// Random sets drawn from the random-initialization law on random images.
pub fn oracle_sets(count: usize, seed: u64) -> Vec<SplatSet> {
    let mut rng = rng(seed);
    (0..count)
        .map(|k| {
            let n = rng.gen_range(1..=64);
            let img = random_image(&mut rng, 32, 32);
            init_random(&img, n, seed.wrapping_add(k as u64))
        })
        .collect()
}

const STEP: f64 = 1e-6;
/// Central differences at this step carry ~1e-11 of round-off, so
/// components below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-6;

fn perturbed(set: &SplatSet, i: usize, p: usize, delta: f64) -> SplatSet {
    let mut out = set.clone();
    let mut params = out.gaussians[i].to_params();
    params[p] += delta;
    out.gaussians[i] = Gaussian2D::from_params(&params);
    out
}

/// Largest relative error between the analytic gradient and central
/// differences over every parameter of every alive splat.
pub fn worst_relative_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let n = rng.gen_range(1..=8);
    let set = random_set(&mut rng, 16, 16, n);
    let target = random_image(&mut rng, 16, 16);
    let l1 = if seed % 2 == 0 { 0.0 } else { 1e-2 };
    let obj = Objective::new(l1, 16);
    let (_, grads) = obj.backward(&set, &target).unwrap();
    let mut worst = 0.0f64;
    for i in 0..set.len() {
        let analytic = grads.params(i);
        for p in 0..PARAMS_PER_GAUSSIAN {
            let up = obj.loss(&perturbed(&set, i, p, STEP), &target).unwrap();
            let down = obj.loss(&perturbed(&set, i, p, -STEP), &target).unwrap();
            let fd = (up - down) / (2.0 * STEP);
            let denom = analytic[p].abs().max(fd.abs()).max(FLOOR);
            worst = worst.max((analytic[p] - fd).abs() / denom);
        }
    }
    worst
}
