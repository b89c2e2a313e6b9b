//! Step-driven bandit policies and the simulation loop.
//!
//! A policy is asked for an arm with [`Policy::select`] and then told the
//! realized reward with [`Policy::observe`]. [`simulate`] drives a policy
//! against an [`Instance`] with seeded random streams.

mod bglincb;
mod rsglincb;

pub use bglincb::{compute_batch_schedule, raw_batch_schedule, batch_alpha, BGlinCb, BOptions};
pub use rsglincb::{Projection, RsGlinCb, RsOptions, SwitchThreshold};

use std::time::Instant;

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::design::DesignError;
use crate::env::{EnvError, Instance, RoundRecord, RunTrace, SeedStreams};
use crate::estimator::EstimatorError;
use crate::glm::GlmError;
use crate::linalg::{argmax, SpdMatrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanditError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("round {round}: arm set is empty")]
    EmptyArmSet { round: usize },
    #[error("round {round}: arm dimension {got} does not match d = {expected}")]
    DimensionMismatch {
        round: usize,
        expected: usize,
        got: usize,
    },
    #[error("observe called without a pending selection")]
    NoPendingSelection,
    #[error("observed index {index} does not match selected index {selected}")]
    IndexMismatch { index: usize, selected: usize },
    #[error("round {round}: reward {reward} outside [0, {bound}]")]
    InvalidReward { round: usize, reward: f64, bound: f64 },
    #[error("round {round}: estimation failed: {source}")]
    Estimator {
        round: usize,
        #[source]
        source: EstimatorError,
    },
    #[error("round {round}: design failed: {source}")]
    Design {
        round: usize,
        #[source]
        source: DesignError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Glm(#[from] GlmError),
}

/// Problem constants shared by the policies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BanditParams {
    pub d: usize,
    pub k: usize,
    /// Horizon `T`.
    pub horizon: usize,
    /// Bound on `||theta*||`.
    pub s: f64,
    /// Reward bound `R`.
    pub r: f64,
    /// Upper bound on the non-linearity parameter.
    pub kappa: f64,
    pub delta: f64,
    /// Batch budget `M` (batched policy only).
    pub m: usize,
    pub gamma: f64,
    pub lambda: f64,
}

impl BanditParams {
    /// Constants of the batched policy: `gamma = 30 R S sqrt(d ln T)`,
    /// `lambda = 20 R d ln T`.
    pub fn batched(d: usize, k: usize, horizon: usize, s: f64, r: f64, kappa: f64, m: usize) -> Self {
        let log_t = (horizon as f64).ln();
        Self {
            d,
            k,
            horizon,
            s,
            r,
            kappa,
            delta: 1.0 / horizon as f64,
            m,
            gamma: 30.0 * r * s * (d as f64 * log_t).sqrt(),
            lambda: 20.0 * r * d as f64 * log_t,
        }
    }

    /// Constants of the rarely switching policy:
    /// `gamma = 25 R S sqrt(d ln(T/delta))`, `lambda = d ln(T/delta) / R^2`.
    pub fn rarely_switching(d: usize, k: usize, horizon: usize, s: f64, r: f64, kappa: f64, delta: f64) -> Self {
        let log_td = (horizon as f64 / delta).ln();
        Self {
            d,
            k,
            horizon,
            s,
            r,
            kappa,
            delta,
            m: 0,
            gamma: 25.0 * r * s * (d as f64 * log_td).sqrt(),
            lambda: d as f64 * log_td / (r * r),
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// `ln(T / delta)`.
    pub fn log_t_delta(&self) -> f64 {
        (self.horizon as f64 / self.delta).ln()
    }

    fn validate(&self) -> Result<(), BanditError> {
        let mut bad = Vec::new();
        if self.d == 0 {
            bad.push("d must be >= 1".to_string());
        }
        if self.horizon == 0 {
            bad.push("T must be >= 1".to_string());
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            bad.push(format!("S must be positive, got {}", self.s));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            bad.push(format!("R must be positive, got {}", self.r));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            bad.push(format!("kappa must be >= 1, got {}", self.kappa));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bad.push(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            bad.push(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            bad.push(format!("lambda must be positive, got {}", self.lambda));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(BanditError::InvalidParams(bad.join("; ")))
        }
    }
}

/// The arm chosen in a round and the policy-update events it triggered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub index: usize,
    pub switch_i: bool,
    pub switch_ii: bool,
}

impl Decision {
    fn plain(index: usize) -> Self {
        Self {
            index,
            switch_i: false,
            switch_ii: false,
        }
    }
}

pub trait Policy {
    fn name(&self) -> &str;

    /// Chooses an arm from `arms`. Every call must be followed by one
    /// [`Policy::observe`] for the returned index.
    fn select(&mut self, arms: &[Vector], rng: &mut dyn RngCore) -> Result<Decision, BanditError>;

    fn observe(&mut self, index: usize, reward: f64) -> Result<(), BanditError>;
}

/// Plays a uniformly random arm every round.
#[derive(Clone, Debug, Default)]
pub struct UniformRandom {
    pending: Option<usize>,
}

impl UniformRandom {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Policy for UniformRandom {
    fn name(&self) -> &str {
        "uniform_random"
    }

    fn select(&mut self, arms: &[Vector], rng: &mut dyn RngCore) -> Result<Decision, BanditError> {
        if arms.is_empty() {
            return Err(BanditError::EmptyArmSet { round: 0 });
        }
        let index = rng.random_range(0..arms.len());
        self.pending = Some(index);
        Ok(Decision::plain(index))
    }

    fn observe(&mut self, index: usize, _reward: f64) -> Result<(), BanditError> {
        match self.pending.take() {
            Some(selected) if selected == index => Ok(()),
            Some(selected) => Err(BanditError::IndexMismatch { index, selected }),
            None => Err(BanditError::NoPendingSelection),
        }
    }
}

/// Indices in `candidates` that survive `UCB(x) >= max_y LCB(y)` with bounds
/// `<x, theta> +- width * ||x||_{M^{-1}}`.
pub fn eliminate(arms: &[Vector], candidates: &[usize], theta: &Vector, m: &SpdMatrix, width: f64) -> Vec<usize> {
    let bounds: Vec<(f64, f64)> = candidates
        .iter()
        .map(|&i| {
            let x = &arms[i];
            let centre = x.dot(theta);
            let w = width * m.inv_norm(x);
            (centre - w, centre + w)
        })
        .collect();
    let best_lcb = bounds.iter().map(|b| b.0).fold(f64::NEG_INFINITY, f64::max);
    candidates
        .iter()
        .zip(&bounds)
        .filter(|(_, b)| b.1 >= best_lcb)
        .map(|(&i, _)| i)
        .collect()
}

/// Argmax of `score` over `candidates`, lowest arm index on ties.
fn argmax_over(candidates: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let idx = argmax(candidates.iter().map(|&i| score(i))).expect("non-empty candidates");
    candidates[idx]
}

fn check_armset(arms: &[Vector], d: usize, round: usize) -> Result<(), BanditError> {
    if arms.is_empty() {
        return Err(BanditError::EmptyArmSet { round });
    }
    if let Some(x) = arms.iter().find(|x| x.len() != d) {
        return Err(BanditError::DimensionMismatch {
            round,
            expected: d,
            got: x.len(),
        });
    }
    Ok(())
}

/// Runs `policy` for `horizon` rounds on `instance`.
///
/// Arm sets come from the environment stream of `seed`, reward noise from
/// the reward stream, and the policy's randomness from the policy stream.
pub fn simulate<P: Policy + ?Sized>(
    policy: &mut P,
    instance: &Instance,
    horizon: usize,
    seed: u64,
) -> Result<RunTrace, BanditError> {
    let mut streams = SeedStreams::new(seed);
    let mut trace = RunTrace {
        records: Vec::with_capacity(horizon),
        ..RunTrace::default()
    };
    let start = Instant::now();
    let mut cum = 0.0;
    for t in 1..=horizon {
        let armset = instance.generator.armset(t, &mut streams.env)?;
        let arms = armset.arms();
        let decision = policy.select(arms, &mut streams.policy)?;
        let x = &arms[decision.index];
        let reward = instance.link.sample_reward(x.dot(&instance.theta_star), &mut streams.reward)?;
        policy.observe(decision.index, reward)?;
        let instant = instance.regret_increment(arms, decision.index);
        let best_mean = arms
            .iter()
            .map(|a| instance.mean_reward(a))
            .fold(f64::NEG_INFINITY, f64::max);
        cum += instant;
        trace.count_i += usize::from(decision.switch_i);
        trace.count_ii += usize::from(decision.switch_ii);
        trace.records.push(RoundRecord {
            t,
            arm_index: decision.index,
            instant_regret: instant,
            cum_regret: cum,
            switch1: decision.switch_i,
            switch2: decision.switch_ii,
            reward,
            best_mean,
        });
    }
    trace.wall_time = start.elapsed();
    Ok(trace)
}
