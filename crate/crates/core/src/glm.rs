//! Bounded GLM reward models: link functions, their derivatives, the
//! log-partition antiderivative used by the log-loss, and reward sampling.

use std::f64::consts::{LN_2, SQRT_2};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("link argument must be finite, got {0}")]
    NonFinite(f64),
    #[error("reward bound must be positive and finite, got {0}")]
    InvalidRewardBound(f64),
    #[error("self-concordance grid is empty")]
    EmptyGrid,
    #[error("unknown link `{0}` (expected logistic or probit)")]
    UnknownLink(String),
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// User supplied link: `mu`, its first two derivatives and the reward bound.
pub struct CustomLink {
    mu: Box<ScalarFn>,
    mu_dot: Box<ScalarFn>,
    mu_ddot: Box<ScalarFn>,
}

#[derive(Clone)]
enum LinkKind {
    Logistic,
    Probit,
    Custom(Arc<CustomLink>),
}

/// A GLM reward model with rewards almost surely in `[0, R]`.
///
/// Values are immutable after construction and cheap to clone (custom
/// callables sit behind an `Arc`).
#[derive(Clone)]
pub struct GlmLink {
    name: String,
    kind: LinkKind,
    reward_bound: f64,
}

impl fmt::Debug for GlmLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GlmLink")
            .field("name", &self.name)
            .field("reward_bound", &self.reward_bound)
            .finish()
    }
}

/// Outcome of [`check_self_concordance`].
#[derive(Clone, Debug, PartialEq)]
pub struct SelfConcordanceReport {
    /// `max |mu''(z)| / mu'(z)` over the usable grid points.
    pub max_ratio: f64,
    /// Grid point attaining `max_ratio`.
    pub argmax_z: f64,
    pub holds: bool,
    /// Grid points where `mu'(z) = 0`; these are excluded from the ratio.
    pub excluded: Vec<f64>,
}

impl SelfConcordanceReport {
    pub fn has_warning(&self) -> bool {
        !self.excluded.is_empty()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

impl GlmLink {
    pub fn logistic() -> Self {
        Self {
            name: "logistic".into(),
            kind: LinkKind::Logistic,
            reward_bound: 1.0,
        }
    }

    /// Bernoulli rewards with success probability `Phi(z)`.
    pub fn probit() -> Self {
        Self {
            name: "probit".into(),
            kind: LinkKind::Probit,
            reward_bound: 1.0,
        }
    }

    pub fn from_name(name: &str) -> Result<Self, GlmError> {
        match name {
            "logistic" => Ok(Self::logistic()),
            "probit" => Ok(Self::probit()),
            other => Err(GlmError::UnknownLink(other.to_string())),
        }
    }

    /// Registers a custom link. The link is validated against
    /// `validation_grid` with [`check_self_concordance`]; failure is logged
    /// and reported back but does not prevent construction.
    pub fn custom<F, G, H>(
        name: impl Into<String>,
        reward_bound: f64,
        mu: F,
        mu_dot: G,
        mu_ddot: H,
        validation_grid: &[f64],
    ) -> Result<(Self, SelfConcordanceReport), GlmError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        H: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(reward_bound > 0.0 && reward_bound.is_finite()) {
            return Err(GlmError::InvalidRewardBound(reward_bound));
        }
        let link = Self {
            name: name.into(),
            kind: LinkKind::Custom(Arc::new(CustomLink {
                mu: Box::new(mu),
                mu_dot: Box::new(mu_dot),
                mu_ddot: Box::new(mu_ddot),
            })),
            reward_bound,
        };
        let report = check_self_concordance(&link, reward_bound, validation_grid)?;
        if !report.holds {
            log::warn!(
                "custom link `{}` is not self-concordant with R = {}: max |mu''|/mu' = {} at z = {}",
                link.name,
                reward_bound,
                report.max_ratio,
                report.argmax_z
            );
        }
        Ok((link, report))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    /// `mu(z)`; callers guarantee `z` is finite.
    pub fn mu(&self, z: f64) -> f64 {
        match &self.kind {
            LinkKind::Logistic => sigmoid(z),
            LinkKind::Probit => normal_cdf(z),
            LinkKind::Custom(c) => (c.mu)(z),
        }
    }

    /// `R - mu(z)`, evaluated without cancellation for the built-in links.
    pub fn mu_complement(&self, z: f64) -> f64 {
        match &self.kind {
            LinkKind::Logistic => sigmoid(-z),
            LinkKind::Probit => normal_cdf(-z),
            LinkKind::Custom(c) => self.reward_bound - (c.mu)(z),
        }
    }

    pub fn mu_dot(&self, z: f64) -> f64 {
        match &self.kind {
            LinkKind::Logistic => sigmoid(z) * sigmoid(-z),
            LinkKind::Probit => normal_pdf(z),
            LinkKind::Custom(c) => (c.mu_dot)(z),
        }
    }

    pub fn mu_ddot(&self, z: f64) -> f64 {
        match &self.kind {
            LinkKind::Logistic => {
                let (p, q) = (sigmoid(z), sigmoid(-z));
                p * q * (q - p)
            }
            LinkKind::Probit => -z * normal_pdf(z),
            LinkKind::Custom(c) => (c.mu_ddot)(z),
        }
    }

    /// `b(z) = integral_0^z mu(u) du`.
    ///
    /// Closed forms for the built-in links; adaptive Simpson quadrature to
    /// 1e-10 absolute error for custom links.
    pub fn log_partition(&self, z: f64) -> f64 {
        match &self.kind {
            LinkKind::Logistic => softplus(z) - LN_2,
            LinkKind::Probit => z * normal_cdf(z) + normal_pdf(z) - INV_SQRT_2PI,
            LinkKind::Custom(c) => adaptive_simpson(&*c.mu, 0.0, z, 1e-10),
        }
    }

    /// Checked version of [`GlmLink::mu`].
    pub fn link_value(&self, z: f64) -> Result<f64, GlmError> {
        if !z.is_finite() {
            return Err(GlmError::NonFinite(z));
        }
        Ok(self.mu(z))
    }

    /// Checked version of [`GlmLink::mu_dot`].
    pub fn link_deriv(&self, z: f64) -> Result<f64, GlmError> {
        if !z.is_finite() {
            return Err(GlmError::NonFinite(z));
        }
        Ok(self.mu_dot(z))
    }

    /// Draws a reward with mean `mu(z)` supported on `[0, R]`.
    ///
    /// Built-in links give Bernoulli{0, 1} rewards; custom links give
    /// `R * Bernoulli(mu(z) / R)`.
    pub fn sample_reward<G: Rng + ?Sized>(&self, z: f64, rng: &mut G) -> Result<f64, GlmError> {
        let mean = self.link_value(z)?;
        let p = (mean / self.reward_bound).clamp(0.0, 1.0);
        let u: f64 = rng.random();
        Ok(if u < p { self.reward_bound } else { 0.0 })
    }
}

/// Checks `|mu''(z)| <= R mu'(z)` on `grid`.
pub fn check_self_concordance(
    link: &GlmLink,
    reward_bound: f64,
    grid: &[f64],
) -> Result<SelfConcordanceReport, GlmError> {
    if grid.is_empty() {
        return Err(GlmError::EmptyGrid);
    }
    let mut max_ratio = 0.0_f64;
    let mut argmax_z = grid[0];
    let mut excluded = Vec::new();
    for &z in grid {
        let slope = link.mu_dot(z);
        if slope <= 0.0 {
            excluded.push(z);
            continue;
        }
        let ratio = link.mu_ddot(z).abs() / slope;
        if ratio > max_ratio {
            max_ratio = ratio;
            argmax_z = z;
        }
    }
    if !excluded.is_empty() {
        log::warn!(
            "link `{}` has zero slope at {} grid point(s); they were excluded",
            link.name(),
            excluded.len()
        );
    }
    Ok(SelfConcordanceReport {
        max_ratio,
        argmax_z,
        holds: max_ratio <= reward_bound + 1e-9,
        excluded,
    })
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

fn adaptive_simpson(f: &ScalarFn, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &ScalarFn,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // 1/(1+e^-2), sigma(5)(1-sigma(5)) and 1/sqrt(2 pi), evaluated to 30
    // digits with mpmath.
    const SIGMOID_2: f64 = 0.880_797_077_977_882_4;
    const LOGISTIC_SLOPE_5: f64 = 0.006_648_056_670_790_155;
    const PHI_0: f64 = 0.398_942_280_401_432_7;

    #[test]
    fn link_values_at_reference_points() {
        let lg = GlmLink::logistic();
        let pb = GlmLink::probit();
        assert_eq!(lg.link_value(0.0).unwrap(), 0.5);
        assert_eq!(pb.link_value(0.0).unwrap(), 0.5);
        assert_relative_eq!(lg.link_value(2.0).unwrap(), SIGMOID_2, max_relative = 1e-15);
        assert_eq!(lg.link_deriv(0.0).unwrap(), 0.25);
        assert_relative_eq!(pb.link_deriv(0.0).unwrap(), PHI_0, max_relative = 1e-15);
        assert_relative_eq!(lg.link_deriv(5.0).unwrap(), LOGISTIC_SLOPE_5, max_relative = 1e-13);
    }

    #[test]
    fn non_finite_argument_is_a_domain_error() {
        let lg = GlmLink::logistic();
        assert!(lg.link_value(f64::NAN).unwrap_err().to_string().contains("finite"));
        assert!(matches!(lg.link_deriv(f64::INFINITY), Err(GlmError::NonFinite(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(lg.sample_reward(f64::NEG_INFINITY, &mut rng).is_err());
    }

    #[test]
    fn probit_far_left_tail_always_pays_zero() {
        let pb = GlmLink::probit();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..10_000).all(|_| pb.sample_reward(-50.0, &mut rng).unwrap() == 0.0));
    }

    #[test]
    fn reward_stream_is_reproducible() {
        let lg = GlmLink::logistic();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..256)
                .map(|_| lg.sample_reward(0.0, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(17), draw(17));
    }

    #[test]
    fn logistic_sample_mean_within_three_standard_errors() {
        let lg = GlmLink::logistic();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        for z in [-1.3, 0.4, 2.0] {
            let mean = (0..n)
                .map(|_| lg.sample_reward(z, &mut rng).unwrap())
                .sum::<f64>()
                / n as f64;
            let mu = lg.mu(z);
            assert!((mean - mu).abs() <= 3.0 * (mu * (1.0 - mu) / n as f64).sqrt());
        }
    }

    #[test]
    fn log_partition_closed_forms_agree_with_quadrature() {
        for link in [GlmLink::logistic(), GlmLink::probit()] {
            for z in [-6.0, -1.0, 0.0, 0.3, 4.5] {
                let l = link.clone();
                let quad = adaptive_simpson(&move |u| l.mu(u), 0.0, z, 1e-12);
                assert!((link.log_partition(z) - quad).abs() < 1e-10, "{} at {z}", link.name());
            }
        }
    }

    #[test]
    fn custom_link_uses_quadrature_for_log_partition() {
        let (link, report) = GlmLink::custom(
            "scaled-logistic",
            2.0,
            |z| 2.0 * sigmoid(z),
            |z| 2.0 * sigmoid(z) * sigmoid(-z),
            |z| 2.0 * sigmoid(z) * sigmoid(-z) * (sigmoid(-z) - sigmoid(z)),
            &uniform_grid(-10.0, 10.0, 0.1),
        )
        .unwrap();
        assert!(report.holds);
        let expected = 2.0 * (softplus(1.5) - LN_2);
        assert!((link.log_partition(1.5) - expected).abs() < 1e-10);
    }

    #[test]
    fn self_concordance_report_flags_zero_slope_points() {
        let (link, report) = GlmLink::custom(
            "flat",
            1.0,
            |_| 0.5,
            |_| 0.0,
            |_| 0.0,
            &[0.0, 1.0],
        )
        .unwrap();
        assert_eq!(report.excluded, vec![0.0, 1.0]);
        assert!(report.has_warning());
        assert_eq!(link.name(), "flat");
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert_eq!(
            check_self_concordance(&GlmLink::logistic(), 1.0, &[]),
            Err(GlmError::EmptyGrid)
        );
    }
}
