//! Simulation environments, ground-truth oracles and regret accounting.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::glm::GlmLink;
use crate::linalg::{argmax, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("arm set is empty")]
    EmptyArmSet,
    #[error("arm {index} has norm {norm} > 1")]
    ArmNorm { index: usize, norm: f64 },
    #[error("arm dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("theta_star norm {norm} exceeds S = {s}")]
    ThetaNorm { norm: f64, s: f64 },
    #[error("mu'(z) = 0 at an arm (z = {z}); kappa is infinite")]
    InfiniteKappa { z: f64 },
    #[error("scripted sequence has {available} rounds, round {requested} requested")]
    ScriptExhausted { available: usize, requested: usize },
    #[error("scripted arm-set file, line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("need at least one arm set")]
    NoArmSets,
}

/// The decision set offered in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSet {
    arms: Vec<Vector>,
    pub round: usize,
}

impl ArmSet {
    /// Checks `K >= 1`, a common dimension and `||x|| <= 1 + 1e-12`.
    pub fn new(arms: Vec<Vector>, round: usize) -> Result<Self, EnvError> {
        let d = arms.first().ok_or(EnvError::EmptyArmSet)?.len();
        for (index, x) in arms.iter().enumerate() {
            if x.len() != d {
                return Err(EnvError::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            let norm = x.norm();
            if norm.is_nan() || norm > 1.0 + 1e-12 {
                return Err(EnvError::ArmNorm { index, norm });
            }
        }
        Ok(Self { arms, round })
    }

    pub fn arms(&self) -> &[Vector] {
        &self.arms
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.arms[0].len()
    }

    pub fn into_arms(self) -> Vec<Vector> {
        self.arms
    }
}

impl AsRef<[Vector]> for ArmSet {
    fn as_ref(&self) -> &[Vector] {
        &self.arms
    }
}

/// `K` i.i.d. uniform draws from the unit ball in `R^d`.
pub fn sample_armset_unit_ball<G: Rng + ?Sized>(d: usize, k: usize, rng: &mut G) -> Vec<Vector> {
    (0..k).map(|_| sample_unit_ball(d, rng)).collect()
}

fn sample_unit_ball<G: Rng + ?Sized>(d: usize, rng: &mut G) -> Vector {
    let dir = sample_unit_sphere(d, rng);
    let radius = rng.random::<f64>().powf(1.0 / d as f64);
    dir * radius
}

fn sample_unit_sphere<G: Rng + ?Sized>(d: usize, rng: &mut G) -> Vector {
    loop {
        let g = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = g.norm();
        if n > 0.0 {
            return g / n;
        }
    }
}

/// Uniform point on the sphere of radius `s`.
pub fn sample_theta_sphere<G: Rng + ?Sized>(d: usize, s: f64, rng: &mut G) -> Vector {
    sample_unit_sphere(d, rng) * s
}

/// Source of per-round arm sets.
#[derive(Clone, Debug, PartialEq)]
pub enum ArmGenerator {
    IidUnitBall { d: usize, k: usize },
    Fixed(Vec<Vector>),
    Scripted(Vec<Vec<Vector>>),
}

impl ArmGenerator {
    pub fn dim(&self) -> usize {
        match self {
            Self::IidUnitBall { d, .. } => *d,
            Self::Fixed(arms) => arms.first().map_or(0, |x| x.len()),
            Self::Scripted(sets) => sets.first().and_then(|s| s.first()).map_or(0, |x| x.len()),
        }
    }

    /// Arm set for round `t` (1-based). Only the unit-ball generator draws
    /// from `rng`.
    pub fn armset<G: Rng + ?Sized>(&self, t: usize, rng: &mut G) -> Result<ArmSet, EnvError> {
        match self {
            Self::IidUnitBall { d, k } => ArmSet::new(sample_armset_unit_ball(*d, *k, rng), t),
            Self::Fixed(arms) => ArmSet::new(arms.clone(), t),
            Self::Scripted(sets) => {
                let arms = sets.get(t.wrapping_sub(1)).ok_or(EnvError::ScriptExhausted {
                    available: sets.len(),
                    requested: t,
                })?;
                ArmSet::new(arms.clone(), t)
            }
        }
    }
}

/// Header `d K T` followed by `T` lines of `K * d` decimal numbers.
pub fn parse_scripted_armsets(text: &str) -> Result<Vec<Vec<Vector>>, EnvError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(EnvError::Parse {
        line: 1,
        message: "missing header `d K T`".into(),
    })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|tok| tok.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| EnvError::Parse {
            line: hline,
            message: format!("bad header: {e}"),
        })?;
    let [d, k, t] = dims[..] else {
        return Err(EnvError::Parse {
            line: hline,
            message: format!("header needs 3 integers, found {}", dims.len()),
        });
    };
    if d == 0 || k == 0 {
        return Err(EnvError::Parse {
            line: hline,
            message: "d and K must be positive".into(),
        });
    }
    let mut sets = Vec::with_capacity(t);
    for (line, body) in lines {
        let vals: Vec<f64> = body
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<_, _>>()
            .map_err(|e| EnvError::Parse {
                line,
                message: e.to_string(),
            })?;
        if vals.len() != d * k {
            return Err(EnvError::Parse {
                line,
                message: format!("expected {} numbers, found {}", d * k, vals.len()),
            });
        }
        let arms: Vec<Vector> = vals.chunks(d).map(Vector::from_column_slice).collect();
        ArmSet::new(arms.clone(), sets.len() + 1).map_err(|e| EnvError::Parse {
            line,
            message: e.to_string(),
        })?;
        sets.push(arms);
    }
    if sets.len() != t {
        return Err(EnvError::Parse {
            line: hline,
            message: format!("header declares {t} rounds, file has {}", sets.len()),
        });
    }
    Ok(sets)
}

/// A bandit problem with known parameter.
#[derive(Clone, Debug)]
pub struct Instance {
    pub theta_star: Vector,
    pub link: GlmLink,
    pub generator: ArmGenerator,
    pub s: f64,
}

impl Instance {
    pub fn new(theta_star: Vector, link: GlmLink, generator: ArmGenerator, s: f64) -> Result<Self, EnvError> {
        let norm = theta_star.norm();
        if norm > s * (1.0 + 1e-12) {
            return Err(EnvError::ThetaNorm { norm, s });
        }
        let d = generator.dim();
        if d != theta_star.len() {
            return Err(EnvError::DimensionMismatch {
                expected: theta_star.len(),
                got: d,
            });
        }
        Ok(Self {
            theta_star,
            link,
            generator,
            s,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    /// `mu(<x, theta*>)`.
    pub fn mean_reward(&self, x: &Vector) -> f64 {
        self.link.mu(x.dot(&self.theta_star))
    }

    /// Index of the arm with the largest expected reward, lowest index on ties.
    pub fn optimal_arm(&self, arms: &[Vector]) -> usize {
        argmax(arms.iter().map(|x| x.dot(&self.theta_star))).expect("non-empty arm set")
    }

    /// `max_x mu(<x,theta*>) - mu(<chosen,theta*>)`, in `[0, R]`.
    pub fn regret_increment(&self, arms: &[Vector], chosen: usize) -> f64 {
        let best = arms
            .iter()
            .map(|x| self.mean_reward(x))
            .fold(f64::NEG_INFINITY, f64::max);
        (best - self.mean_reward(&arms[chosen])).clamp(0.0, self.link.reward_bound())
    }
}

fn inverse_slope(link: &GlmLink, z: f64) -> Result<f64, EnvError> {
    let slope = link.mu_dot(z);
    if slope > 0.0 {
        Ok(1.0 / slope)
    } else {
        Err(EnvError::InfiniteKappa { z })
    }
}

/// `max over all arms of 1 / mu'(<x, theta*>)`.
pub fn compute_kappa_problem2<A: AsRef<[Vector]>>(instance: &Instance, armsets: &[A]) -> Result<f64, EnvError> {
    if armsets.is_empty() {
        return Err(EnvError::NoArmSets);
    }
    let mut kappa = 0.0f64;
    for set in armsets {
        for x in set.as_ref() {
            kappa = kappa.max(inverse_slope(&instance.link, x.dot(&instance.theta_star))?);
        }
    }
    Ok(kappa)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaEstimates {
    /// `max 1/mu'` over every sampled arm.
    pub kappa: f64,
    /// `1 / max_sets mu'(optimal arm)`.
    pub kappa_star: f64,
    /// `1 / mean_sets mu'(optimal arm)`.
    pub kappa_hat: f64,
    /// Standard error of the mean slope behind `kappa_hat`.
    pub mean_slope_stderr: f64,
}

/// Monte Carlo estimates of the non-linearity parameters over a sample of
/// arm sets.
pub fn compute_kappa_set_problem1<A: AsRef<[Vector]>>(
    instance: &Instance,
    sample_armsets: &[A],
) -> Result<KappaEstimates, EnvError> {
    let kappa = compute_kappa_problem2(instance, sample_armsets)?;
    let slopes: Vec<f64> = sample_armsets
        .iter()
        .map(|set| {
            let arms = set.as_ref();
            let best = instance.optimal_arm(arms);
            instance.link.mu_dot(arms[best].dot(&instance.theta_star))
        })
        .collect();
    let n = slopes.len() as f64;
    let max_slope = slopes.iter().copied().fold(0.0, f64::max);
    let mean = slopes.iter().sum::<f64>() / n;
    let var = if slopes.len() > 1 {
        slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    if max_slope <= 0.0 || mean <= 0.0 {
        return Err(EnvError::InfiniteKappa { z: f64::NAN });
    }
    Ok(KappaEstimates {
        kappa,
        kappa_star: 1.0 / max_slope,
        kappa_hat: 1.0 / mean,
        mean_slope_stderr: (var / n).sqrt(),
    })
}

/// Stream for instance construction (`theta*` and Monte Carlo arm-set
/// samples for the kappa oracles), independent of the [`SeedStreams`] of
/// the same seed.
pub fn instance_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    rng
}

/// Unit-ball instance with `theta*` uniform on the sphere of radius `s`,
/// drawn from [`instance_rng`].
pub fn unit_ball_instance(link: GlmLink, d: usize, k: usize, s: f64, seed: u64) -> Result<Instance, EnvError> {
    let theta = sample_theta_sphere(d, s, &mut instance_rng(seed));
    Instance::new(theta, link, ArmGenerator::IidUnitBall { d, k }, s)
}

/// `n` arm sets for the kappa oracles, drawn from [`instance_rng`] after
/// `theta*`.
pub fn kappa_sample_armsets(d: usize, k: usize, n: usize, seed: u64) -> Vec<Vec<Vector>> {
    let mut rng = instance_rng(seed);
    sample_theta_sphere(d, 1.0, &mut rng);
    (0..n).map(|_| sample_armset_unit_ball(d, k, &mut rng)).collect()
}

/// Independent random streams derived from one seed: arm sets, reward
/// noise and the policy's own randomness. Paired runs with the same
/// seed see the same arm sets regardless of how the policy consumes
/// randomness.
#[derive(Clone, Debug)]
pub struct SeedStreams {
    pub env: ChaCha8Rng,
    pub reward: ChaCha8Rng,
    pub policy: ChaCha8Rng,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self {
            env: stream(0),
            reward: stream(1),
            policy: stream(2),
        }
    }
}

/// One simulated round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub arm_index: usize,
    pub instant_regret: f64,
    pub cum_regret: f64,
    pub switch1: bool,
    pub switch2: bool,
    /// Realized reward.
    pub reward: f64,
    /// `max_x mu(<x,theta*>)` in this round.
    pub best_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<RoundRecord>,
    pub count_i: usize,
    pub count_ii: usize,
    pub wall_time: Duration,
}

impl RunTrace {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    /// Cumulative regret after round `t` (1-based); 0 for `t = 0`.
    pub fn regret_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.records[t - 1].cum_regret
        }
    }
}
