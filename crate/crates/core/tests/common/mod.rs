#![allow(dead_code)]

use glinbandit::env::sample_armset_unit_ball;
use glinbandit::estimator::Observation;
use glinbandit::{GlmLink, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vec(xs: &[f64]) -> Vector {
    Vector::from_vec(xs.to_vec())
}

pub fn random_direction(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    let mut v = Vector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
    if v.norm() == 0.0 {
        v[0] = 1.0;
    }
    v.normalize()
}

/// `n` observations with arms uniform in the unit ball and rewards drawn
/// from `link` at `theta`.
pub fn synthetic_observations(link: &GlmLink, theta: &Vector, n: usize, rng: &mut ChaCha8Rng) -> Vec<Observation> {
    let d = theta.len();
    sample_armset_unit_ball(d, n, rng)
        .into_iter()
        .map(|x| {
            let r = link.sample_reward(x.dot(theta), rng).unwrap();
            Observation::new(x, r, link.reward_bound()).unwrap()
        })
        .collect()
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
