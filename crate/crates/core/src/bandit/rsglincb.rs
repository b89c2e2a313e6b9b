use rand::RngCore;

use super::{argmax_over, check_armset, eliminate, BanditError, BanditParams, Decision, Policy};
use crate::estimator::{
    ellipsoid_distance, fit_mle_from, project_constrained_mle, project_nonconvex, FitOptions, Observation,
};
use crate::glm::GlmLink;
use crate::linalg::{argmax, SpdMatrix, Vector};

/// How the re-estimated parameter is pulled back into the confidence
/// ellipsoid around the Criterion-I estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Projection {
    /// Ridge log-loss minimized over the ellipsoid.
    #[default]
    Convex,
    /// Multi-start local search on the moment-matching objective, seeded
    /// with the convex solution.
    Nonconvex,
}

/// Right-hand side of Switching Criterion I,
/// `max_x ||x||^2_{V^{-1}} >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SwitchThreshold {
    /// `scale / (gamma^2 kappa R^2)`.
    Formula { scale: f64 },
    /// A constant threshold.
    Fixed(f64),
}

impl Default for SwitchThreshold {
    fn default() -> Self {
        Self::Formula { scale: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RsOptions {
    pub threshold: SwitchThreshold,
    /// Re-estimate on every observation instead of only the
    /// non-Criterion-I rounds.
    pub pool_all_data: bool,
    pub projection: Projection,
    /// Multiplier `c` of the exploration bonus `c sqrt(d ln(T/delta)) ||x||_{H^{-1}}`.
    pub ucb_scale: f64,
    /// Treat every non-Criterion-I round as a Criterion-II round.
    pub always_update: bool,
    pub fit: FitOptions,
}

impl Default for RsOptions {
    fn default() -> Self {
        Self {
            threshold: SwitchThreshold::default(),
            pool_all_data: false,
            projection: Projection::Convex,
            ucb_scale: 150.0,
            always_update: false,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
struct Pending {
    index: usize,
    x: Vector,
    criterion_i: bool,
}

/// Rarely switching GLM bandit.
///
/// Criterion-I rounds play the arm of largest `||x||_{V^{-1}}` and refit the
/// warm-up estimate. Otherwise the determinant-doubling test decides whether
/// to re-estimate and project; arms are then filtered with the warm-up
/// confidence bounds and the optimistic index under the frozen `H_tau` is
/// maximized.
#[derive(Clone, Debug)]
pub struct RsGlinCb {
    params: BanditParams,
    opts: RsOptions,
    link: GlmLink,
    name: String,
    v: SpdMatrix,
    h: SpdMatrix,
    h_tau: SpdMatrix,
    theta_o: Vector,
    theta_tilde: Vector,
    theta_tau: Vector,
    obs_o: Vec<Observation>,
    obs_main: Vec<Observation>,
    t: usize,
    tau: usize,
    count_i: usize,
    count_ii: usize,
    potential: f64,
    projection_warnings: usize,
    pending: Option<Pending>,
}

impl RsGlinCb {
    pub fn new(params: BanditParams, link: GlmLink, opts: RsOptions) -> Result<Self, BanditError> {
        params.validate()?;
        if !(opts.ucb_scale >= 0.0 && opts.ucb_scale.is_finite()) {
            return Err(BanditError::InvalidParams(format!(
                "ucb_scale must be non-negative, got {}",
                opts.ucb_scale
            )));
        }
        match opts.threshold {
            SwitchThreshold::Formula { scale } if !(scale > 0.0 && scale.is_finite()) => {
                return Err(BanditError::InvalidParams(format!(
                    "criterion I scale must be positive, got {scale}"
                )))
            }
            SwitchThreshold::Fixed(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(BanditError::InvalidParams(format!(
                    "criterion I threshold must be positive, got {v}"
                )))
            }
            _ => {}
        }
        let identity = SpdMatrix::scaled_identity(params.d, params.lambda)
            .map_err(|e| BanditError::InvalidParams(e.to_string()))?;
        let name = if opts.always_update { "always_update" } else { "rsglincb" };
        Ok(Self {
            params,
            opts,
            link,
            name: name.to_string(),
            v: identity.clone(),
            h: identity.clone(),
            h_tau: identity,
            theta_o: Vector::zeros(params.d),
            theta_tilde: Vector::zeros(params.d),
            theta_tau: Vector::zeros(params.d),
            obs_o: Vec::new(),
            obs_main: Vec::new(),
            t: 0,
            tau: 1,
            count_i: 0,
            count_ii: 0,
            potential: 0.0,
            projection_warnings: 0,
            pending: None,
        })
    }

    pub fn params(&self) -> &BanditParams {
        &self.params
    }

    pub fn options(&self) -> &RsOptions {
        &self.opts
    }

    /// Threshold currently used by Switching Criterion I.
    pub fn criterion_i_threshold(&self) -> f64 {
        match self.opts.threshold {
            SwitchThreshold::Formula { scale } => {
                let p = &self.params;
                scale / (p.gamma * p.gamma * p.kappa * p.r * p.r)
            }
            SwitchThreshold::Fixed(v) => v,
        }
    }

    /// Switching Criterion I on `arms`.
    pub fn criterion_i(&self, arms: &[Vector]) -> bool {
        let threshold = self.criterion_i_threshold();
        arms.iter().any(|x| self.v.inv_quad(x) >= threshold)
    }

    /// Switching Criterion II, `log det H_t - log det H_tau > ln 2`.
    pub fn criterion_ii(&self) -> bool {
        self.h.log_det() - self.h_tau.log_det() > std::f64::consts::LN_2
    }

    /// Radius `gamma sqrt(kappa)` of the warm-up confidence ellipsoid.
    pub fn warmup_width(&self) -> f64 {
        self.params.gamma * self.params.kappa.sqrt()
    }

    /// Exploration bonus multiplier `c sqrt(d ln(T/delta))`.
    pub fn bonus_scale(&self) -> f64 {
        self.opts.ucb_scale * (self.params.d as f64 * self.params.log_t_delta()).sqrt()
    }

    pub fn v(&self) -> &SpdMatrix {
        &self.v
    }

    pub fn h(&self) -> &SpdMatrix {
        &self.h
    }

    pub fn h_tau(&self) -> &SpdMatrix {
        &self.h_tau
    }

    pub fn theta_o(&self) -> &Vector {
        &self.theta_o
    }

    pub fn theta_tau(&self) -> &Vector {
        &self.theta_tau
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.t
    }

    /// Round of the last Criterion-II trigger (1 before any trigger).
    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn count_i(&self) -> usize {
        self.count_i
    }

    pub fn count_ii(&self) -> usize {
        self.count_ii
    }

    /// Observations gathered on Criterion-I rounds.
    pub fn warmup_observations(&self) -> &[Observation] {
        &self.obs_o
    }

    /// Observations gathered on the other rounds.
    pub fn main_observations(&self) -> &[Observation] {
        &self.obs_main
    }

    /// `sum ||x_t||^2_{V_t^{-1}}` over Criterion-I rounds, with `V_t` taken
    /// before the update.
    pub fn criterion_i_potential(&self) -> f64 {
        self.potential
    }

    /// Number of non-convex projections that found no descent.
    pub fn projection_warnings(&self) -> usize {
        self.projection_warnings
    }

    fn reestimate(&mut self, rng: &mut dyn RngCore) -> Result<(), BanditError> {
        let round = self.t;
        let lambda = self.params.lambda;
        let pooled;
        let data: &[Observation] = if self.opts.pool_all_data {
            pooled = [self.obs_o.as_slice(), self.obs_main.as_slice()].concat();
            &pooled
        } else {
            &self.obs_main
        };
        let est = |source| BanditError::Estimator { round, source };
        self.theta_tilde = fit_mle_from(&self.link, data, lambda, self.theta_tilde.clone(), &self.opts.fit)
            .map_err(est)?;
        let radius = self.warmup_width();
        let convex = if ellipsoid_distance(&self.theta_tilde, &self.theta_o, &self.v) <= radius {
            self.theta_tilde.clone()
        } else {
            project_constrained_mle(&self.link, data, lambda, &self.theta_o, &self.v, radius, &self.opts.fit)
                .map_err(est)?
        };
        self.theta_tau = match self.opts.projection {
            Projection::Convex => convex,
            Projection::Nonconvex => {
                let proj = project_nonconvex(
                    &self.link,
                    &self.obs_o,
                    &self.theta_tilde,
                    &self.theta_o,
                    &self.v,
                    radius,
                    lambda,
                    &[convex],
                    rng,
                )
                .map_err(est)?;
                if proj.warning {
                    self.projection_warnings += 1;
                }
                proj.theta
            }
        };
        self.tau = round;
        self.h_tau = self.h.clone();
        Ok(())
    }
}

impl Policy for RsGlinCb {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, arms: &[Vector], rng: &mut dyn RngCore) -> Result<Decision, BanditError> {
        let round = self.t + 1;
        check_armset(arms, self.params.d, round)?;
        self.t = round;

        let leverages: Vec<f64> = arms.iter().map(|x| self.v.inv_quad(x)).collect();
        let threshold = self.criterion_i_threshold();
        if leverages.iter().any(|&l| l >= threshold) {
            let index = argmax(leverages.iter().copied()).expect("non-empty");
            self.potential += leverages[index];
            self.count_i += 1;
            self.pending = Some(Pending {
                index,
                x: arms[index].clone(),
                criterion_i: true,
            });
            return Ok(Decision {
                index,
                switch_i: true,
                switch_ii: false,
            });
        }

        let switch_ii = self.opts.always_update || self.criterion_ii();
        if switch_ii {
            self.reestimate(rng)?;
            self.count_ii += 1;
        }

        let all: Vec<usize> = (0..arms.len()).collect();
        let survivors = eliminate(arms, &all, &self.theta_o, &self.v, self.warmup_width());
        let bonus = self.bonus_scale();
        let index = argmax_over(&survivors, |i| {
            arms[i].dot(&self.theta_tau) + bonus * self.h_tau.inv_norm(&arms[i])
        });
        self.pending = Some(Pending {
            index,
            x: arms[index].clone(),
            criterion_i: false,
        });
        Ok(Decision {
            index,
            switch_i: false,
            switch_ii,
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
        let round = self.t;
        let obs = Observation::new(pending.x, reward, self.link.reward_bound()).map_err(|_| {
            BanditError::InvalidReward {
                round,
                reward,
                bound: self.link.reward_bound(),
            }
        })?;
        if pending.criterion_i {
            self.v.rank_one_update(&obs.x, 1.0);
            self.obs_o.push(obs);
            self.theta_o = fit_mle_from(
                &self.link,
                &self.obs_o,
                self.params.lambda,
                self.theta_o.clone(),
                &self.opts.fit,
            )
            .map_err(|source| BanditError::Estimator { round, source })?;
        } else {
            let weight = self.link.mu_dot(obs.x.dot(&self.theta_o)) / std::f64::consts::E;
            self.h.rank_one_update(&obs.x, weight);
            self.obs_main.push(obs);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    fn policy(opts: RsOptions) -> RsGlinCb {
        let params = BanditParams::rarely_switching(2, 2, 1000, 1.0, 1.0, 4.0, 0.05);
        RsGlinCb::new(params, GlmLink::logistic(), opts).unwrap()
    }

    #[test]
    fn cold_start_fires_criterion_i() {
        let mut p = policy(RsOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = p.select(&[v(&[1.0, 0.0]), v(&[0.0, 0.6])], &mut rng).unwrap();
        assert!(d.switch_i);
        assert_eq!(d.index, 0);
    }

    #[test]
    fn criterion_i_threshold_boundary() {
        let p = policy(RsOptions::default());
        let thr = p.criterion_i_threshold();
        // V = lambda I so ||c e1||^2_{V^{-1}} = c^2 / lambda
        let at = |f: f64| v(&[(thr * f * p.params.lambda).sqrt(), 0.0]);
        assert!(p.criterion_i(&[at(1.0 + 1e-6)]));
        assert!(!p.criterion_i(&[at(1.0 - 1e-6)]));
    }

    #[test]
    fn criterion_ii_is_strict_at_exact_doubling() {
        let mut p = policy(RsOptions::default());
        assert!(!p.criterion_ii());
        // H = 2^{1/d} H_tau doubles the determinant exactly
        let d = p.params.d as f64;
        let scaled = p.h_tau.matrix() * 2f64.powf(1.0 / d);
        p.h = SpdMatrix::new(scaled).unwrap();
        let gap = p.h.log_det() - p.h_tau.log_det();
        assert_relative_eq!(gap, std::f64::consts::LN_2, epsilon = 1e-12);
        p.h.rank_one_update(&v(&[1.0, 0.0]), 1e-3);
        assert!(p.criterion_ii());
    }

    #[test]
    fn criterion_ii_fires_after_enough_rank_one_mass() {
        let mut p = policy(RsOptions::default());
        // each update adds ln(1 + c x^T H^{-1} x); total well above ln 2
        let lambda = p.params.lambda;
        for _ in 0..3 {
            p.h.rank_one_update(&v(&[1.0, 0.0]), lambda);
        }
        let oracle = (1.0f64 + 1.0).ln() + (1.0f64 + 0.5).ln() + (1.0f64 + 1.0 / 3.0).ln();
        assert_relative_eq!(p.h.log_det() - p.h_tau.log_det(), oracle, epsilon = 1e-12);
        assert!(p.criterion_ii());
    }

    #[test]
    fn observe_requires_matching_selection() {
        let mut p = policy(RsOptions::default());
        assert_eq!(p.observe(0, 1.0), Err(BanditError::NoPendingSelection));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = p.select(&[v(&[1.0, 0.0])], &mut rng).unwrap();
        assert!(matches!(p.observe(d.index + 1, 1.0), Err(BanditError::IndexMismatch { .. })));
    }

    #[test]
    fn empty_armset_is_an_error() {
        let mut p = policy(RsOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(p.select(&[], &mut rng), Err(BanditError::EmptyArmSet { round: 1 })));
    }
}
