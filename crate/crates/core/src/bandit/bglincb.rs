use std::sync::Arc;

use rand::RngCore;

use super::{check_armset, eliminate, BanditError, BanditParams, Decision, Policy};
use crate::design::{
    d_optimal_design, g_optimal_sample, learn_distributional_design, mixture_sample_lazy, DesignError,
    DesignOptions, DesignWeights, DistributionalDesign, DistributionalOptions,
};
use crate::estimator::{fit_mle, project_constrained_mle, FitOptions, Observation};
use crate::glm::GlmLink;
use crate::linalg::{SpdMatrix, Vector};

/// Shortest batch kept by [`compute_batch_schedule`]; shorter ones are
/// merged into a neighbour so that both halves of a batch hold at least two
/// rounds.
pub const MIN_BATCH_LEN: usize = 4;

/// `alpha = T^{1 / (2 (1 - 2^{1-M}))}` if `M <= log2 log2 T`, else `2 sqrt(T)`.
pub fn batch_alpha(horizon: usize, m: usize) -> f64 {
    let t = horizon as f64;
    if (m as f64) <= t.log2().log2() {
        t.powf(1.0 / (2.0 * (1.0 - 2f64.powi(1 - m as i32))))
    } else {
        2.0 * t.sqrt()
    }
}

fn check_schedule_params(params: &BanditParams) -> Result<(), BanditError> {
    if params.m < 2 {
        return Err(BanditError::InvalidParams(format!("M must be >= 2, got {}", params.m)));
    }
    if params.horizon < 4 {
        return Err(BanditError::InvalidParams(format!(
            "T must be >= 4, got {}",
            params.horizon
        )));
    }
    if !(params.s > 0.0 && params.s.is_finite()) {
        return Err(BanditError::InvalidParams(format!("S must be positive, got {}", params.s)));
    }
    Ok(())
}

/// Planned batch lengths before truncation to the horizon:
/// `tau_1 = ceil((sqrt(kappa) e^{3S} d^2 gamma^2 alpha / S)^{2/3})`,
/// `tau_2 = ceil(alpha)`, `tau_k = ceil(alpha sqrt(tau_{k-1}))`.
pub fn raw_batch_schedule(params: &BanditParams) -> Result<Vec<f64>, BanditError> {
    check_schedule_params(params)?;
    let alpha = batch_alpha(params.horizon, params.m);
    let d = params.d as f64;
    let first = (params.kappa.sqrt() * (3.0 * params.s).exp() * d * d * params.gamma * params.gamma * alpha / params.s)
        .powf(2.0 / 3.0)
        .ceil();
    let mut lens = vec![first, alpha.ceil()];
    while lens.len() < params.m {
        let prev = *lens.last().expect("non-empty");
        lens.push((alpha * prev.sqrt()).ceil());
    }
    Ok(lens)
}

/// Executed batch lengths: the planned schedule truncated so the total is
/// exactly `T`, with the last batch absorbing any remainder and batches
/// shorter than [`MIN_BATCH_LEN`] merged into the following batch (the
/// final one into its predecessor).
pub fn compute_batch_schedule(params: &BanditParams) -> Result<Vec<usize>, BanditError> {
    let raw = raw_batch_schedule(params)?;
    let horizon = params.horizon;
    let mut lens = Vec::with_capacity(raw.len());
    let mut used = 0usize;
    for (k, &planned) in raw.iter().enumerate() {
        if used >= horizon {
            break;
        }
        let remaining = horizon - used;
        let len = if k + 1 == raw.len() {
            remaining
        } else {
            (planned.min(remaining as f64) as usize).max(1)
        };
        lens.push(len);
        used += len;
    }
    let mut merged: Vec<usize> = Vec::with_capacity(lens.len());
    let mut carry = 0;
    for len in lens {
        let len = len + carry;
        if len < MIN_BATCH_LEN {
            carry = len;
        } else {
            merged.push(len);
            carry = 0;
        }
    }
    if carry > 0 {
        match merged.last_mut() {
            Some(last) => *last += carry,
            None => merged.push(carry),
        }
    }
    Ok(merged)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BOptions {
    /// Ridge parameter of the per-batch maximum-likelihood fits; `None`
    /// uses the `lambda` of the design matrices.
    pub warmup_ridge: Option<f64>,
    /// Design accuracy for the per-round G-optimal designs.
    pub design: DesignOptions,
    pub distributional: DistributionalOptions,
    pub fit: FitOptions,
}

impl Default for BOptions {
    fn default() -> Self {
        Self {
            warmup_ridge: None,
            design: DesignOptions {
                eps: 0.1,
                iter_cap: 100_000,
            },
            distributional: DistributionalOptions::default(),
            fit: FitOptions::default(),
        }
    }
}

/// Policy in force during a batch.
#[derive(Clone, Debug)]
enum BatchPolicy {
    GOptimal,
    Distributional(Arc<DistributionalDesign>),
}

#[derive(Clone, Debug)]
struct Stage {
    theta: Vector,
    h: SpdMatrix,
}

#[derive(Clone, Debug)]
struct Pending {
    index: usize,
    x: Vector,
}

/// Batched GLM bandit.
///
/// The first batch samples from the per-round G-optimal design and ends
/// with a warm-up estimate. Later batches filter arms with the confidence
/// bounds of all earlier batches, rescale the survivors and sample from the
/// batch policy. Policies change only at the precomputed batch boundaries.
#[derive(Clone, Debug)]
pub struct BGlinCb {
    params: BanditParams,
    opts: BOptions,
    link: GlmLink,
    schedule: Vec<usize>,
    ends: Vec<usize>,
    t: usize,
    batch: usize,
    v: SpdMatrix,
    theta_w: Option<Vector>,
    stages: Vec<Stage>,
    policy: BatchPolicy,
    policy_id: u64,
    recomputations: usize,
    batch_obs: Vec<Observation>,
    batch_sets: Vec<Vec<Vector>>,
    pending: Option<Pending>,
    projections: usize,
}

impl BGlinCb {
    pub fn new(params: BanditParams, link: GlmLink, opts: BOptions) -> Result<Self, BanditError> {
        params.validate()?;
        let schedule = compute_batch_schedule(&params)?;
        let ends = schedule
            .iter()
            .scan(0, |acc, &len| {
                *acc += len;
                Some(*acc)
            })
            .collect();
        if let Some(r) = opts.warmup_ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(BanditError::InvalidParams(format!(
                    "warmup_ridge must be non-negative, got {r}"
                )));
            }
        }
        let v = SpdMatrix::scaled_identity(params.d, params.lambda)
            .map_err(|e| BanditError::InvalidParams(e.to_string()))?;
        Ok(Self {
            params,
            opts,
            link,
            schedule,
            ends,
            t: 0,
            batch: 0,
            v,
            theta_w: None,
            stages: Vec::new(),
            policy: BatchPolicy::GOptimal,
            policy_id: 0,
            recomputations: 0,
            batch_obs: Vec::new(),
            batch_sets: Vec::new(),
            pending: None,
            projections: 0,
        })
    }

    pub fn params(&self) -> &BanditParams {
        &self.params
    }

    /// Executed batch lengths, fixed at construction.
    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    /// Zero-based index of the current batch.
    pub fn batch_index(&self) -> usize {
        self.batch
    }

    /// Identifier of the policy in force; changes only at batch boundaries.
    pub fn policy_id(&self) -> u64 {
        self.policy_id
    }

    /// Number of policy recomputations so far.
    pub fn policy_recomputations(&self) -> usize {
        self.recomputations
    }

    /// Number of fitted estimates that were projected onto `||theta|| <= S`.
    pub fn projections(&self) -> usize {
        self.projections
    }

    pub fn v(&self) -> &SpdMatrix {
        &self.v
    }

    pub fn theta_w(&self) -> Option<&Vector> {
        self.theta_w.as_ref()
    }

    /// `(theta_j, H_j)` for every completed batch after the warm-up.
    pub fn stage_estimates(&self) -> impl Iterator<Item = (&Vector, &SpdMatrix)> {
        self.stages.iter().map(|s| (&s.theta, &s.h))
    }

    fn ridge(&self) -> f64 {
        self.opts.warmup_ridge.unwrap_or(self.params.lambda)
    }

    /// `beta(x) = exp(R min(2S, gamma sqrt(kappa) ||x||_{V^{-1}}))`.
    pub fn beta(&self, x: &Vector) -> f64 {
        let p = &self.params;
        (p.r * (2.0 * p.s).min(p.gamma * p.kappa.sqrt() * self.v.inv_norm(x))).exp()
    }

    /// `mu'(<x, theta_w>) / beta(x)`; requires the warm-up estimate.
    pub fn scale_weight(&self, x: &Vector) -> f64 {
        let theta_w = self.theta_w.as_ref().expect("warm-up estimate available");
        self.link.mu_dot(x.dot(theta_w)) / self.beta(x)
    }

    /// Each arm mapped to `sqrt(mu'(<x,theta_w>) / beta(x)) x`.
    pub fn scale_armset(&self, arms: &[Vector]) -> Vec<Vector> {
        arms.iter().map(|x| x * self.scale_weight(x).sqrt()).collect()
    }

    /// Indices of `arms` surviving elimination by the confidence bounds of
    /// every completed batch, applied in order.
    pub fn eliminate(&self, arms: &[Vector]) -> Vec<usize> {
        let mut kept: Vec<usize> = (0..arms.len()).collect();
        let Some(theta_w) = &self.theta_w else {
            return kept;
        };
        let p = &self.params;
        kept = eliminate(arms, &kept, theta_w, &self.v, p.gamma * p.kappa.sqrt());
        for stage in &self.stages {
            kept = eliminate(arms, &kept, &stage.theta, &stage.h, p.gamma);
        }
        kept
    }

    fn g_design(&self, arms: &[Vector]) -> Result<DesignWeights, DesignError> {
        match d_optimal_design(arms, self.opts.design.eps, self.opts.design.iter_cap) {
            Err(DesignError::IterationCap { best, .. }) => Ok(best),
            other => other,
        }
    }

    /// Fits on `obs` and projects onto `||theta|| <= S` when needed.
    fn fit_bounded(&mut self, obs: &[Observation]) -> Result<Vector, BanditError> {
        let round = self.t;
        let est = |source| BanditError::Estimator { round, source };
        let ridge = self.ridge();
        let theta = fit_mle(&self.link, obs, self.params.d, ridge, &self.opts.fit).map_err(est)?;
        if theta.norm() <= self.params.s {
            return Ok(theta);
        }
        self.projections += 1;
        let unit = SpdMatrix::scaled_identity(self.params.d, 1.0).expect("identity");
        project_constrained_mle(
            &self.link,
            obs,
            ridge,
            &Vector::zeros(self.params.d),
            &unit,
            self.params.s,
            &self.opts.fit,
        )
        .map_err(est)
    }

    /// Runs the end-of-batch updates for the batch that just finished. It
    /// is invoked lazily by the first selection of the next batch, so the
    /// final batch never triggers it.
    fn end_batch(&mut self, rng: &mut dyn RngCore) -> Result<(), BanditError> {
        let obs = std::mem::take(&mut self.batch_obs);
        let sets = std::mem::take(&mut self.batch_sets);
        if self.batch == 0 {
            self.theta_w = Some(self.fit_bounded(&obs)?);
            self.policy = BatchPolicy::GOptimal;
        } else {
            let half = obs.len().div_ceil(2);
            let (part_a, _) = obs.split_at(half);
            let theta = self.fit_bounded(part_a)?;
            let mut h = SpdMatrix::scaled_identity(self.params.d, self.params.lambda).expect("lambda > 0");
            for o in part_a {
                h.rank_one_update(&o.x, self.scale_weight(&o.x));
            }
            self.stages.push(Stage { theta, h });
            let round = self.t;
            let design = learn_distributional_design(&sets[half..], &self.opts.distributional, rng)
                .map_err(|source| BanditError::Design { round, source })?;
            self.policy = BatchPolicy::Distributional(Arc::new(design));
        }
        self.policy_id += 1;
        self.recomputations += 1;
        self.batch += 1;
        Ok(())
    }
}

impl Policy for BGlinCb {
    fn name(&self) -> &str {
        "bglincb"
    }

    fn select(&mut self, arms: &[Vector], rng: &mut dyn RngCore) -> Result<Decision, BanditError> {
        let round = self.t + 1;
        check_armset(arms, self.params.d, round)?;
        if self.pending.is_some() {
            return Err(BanditError::InvalidParams("select called twice without observe".into()));
        }
        let new_batch = self.batch + 1 < self.ends.len() && self.t == self.ends[self.batch];
        if new_batch {
            self.end_batch(rng)?;
        }
        let design_err = |source| BanditError::Design { round, source };
        let index = if self.batch == 0 {
            let w = self.g_design(arms).map_err(design_err)?;
            g_optimal_sample(&w, rng)
        } else {
            let kept = self.eliminate(arms);
            let reduced: Vec<Vector> = kept.iter().map(|&i| arms[i].clone()).collect();
            let scaled = self.scale_armset(&reduced);
            let local = match &self.policy {
                BatchPolicy::GOptimal => {
                    let w = self.g_design(&scaled).map_err(design_err)?;
                    g_optimal_sample(&w, rng)
                }
                BatchPolicy::Distributional(design) => {
                    let design = Arc::clone(design);
                    let mut failure = None;
                    let draw = mixture_sample_lazy(
                        &design,
                        || {
                            self.g_design(&scaled).unwrap_or_else(|e| {
                                failure = Some(e);
                                uniform_weights(scaled.len())
                            })
                        },
                        &scaled,
                        rng,
                    );
                    if let Some(e) = failure {
                        return Err(design_err(e));
                    }
                    draw.index
                }
            };
            self.batch_sets.push(scaled);
            kept[local]
        };
        self.pending = Some(Pending {
            index,
            x: arms[index].clone(),
        });
        Ok(Decision {
            index,
            switch_i: false,
            switch_ii: new_batch,
        })
    }

    fn observe(&mut self, index: usize, reward: f64) -> Result<(), BanditError> {
        let pending = self.pending.take().ok_or(BanditError::NoPendingSelection)?;
        if pending.index != index {
            return Err(BanditError::IndexMismatch {
                index,
                selected: pending.index,
            });
        }
        self.t += 1;
        let round = self.t;
        let obs = Observation::new(pending.x, reward, self.link.reward_bound()).map_err(|_| {
            BanditError::InvalidReward {
                round,
                reward,
                bound: self.link.reward_bound(),
            }
        })?;
        if self.batch == 0 {
            self.v.rank_one_update(&obs.x, 1.0);
        }
        self.batch_obs.push(obs);
        Ok(())
    }
}

fn uniform_weights(k: usize) -> DesignWeights {
    DesignWeights {
        weights: vec![1.0 / k as f64; k],
        g_value: f64::NAN,
        d_eff: 0,
    }
}
