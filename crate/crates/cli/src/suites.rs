//! Property suites shared by `glinbandit selftest` and the acceptance
//! target. Each check reports its outcome instead of panicking.

use std::f64::consts::E;
use std::time::Instant;

use glinbandit::bandit::{eliminate, BanditParams, Policy, RsGlinCb, RsOptions};
use glinbandit::design::{d_optimal_design, g_value};
use glinbandit::env::{sample_armset_unit_ball, Instance, SeedStreams};
use glinbandit::estimator::{
    constrained_kkt_residual, ellipsoid_distance, fit_mle, project_constrained_mle, project_nonconvex,
    projection_objective, ridge_gradient_norm, FitOptions, Observation,
};
use glinbandit::glm::{check_self_concordance, uniform_grid};
use glinbandit::linalg::{argmax, min_eigenvalue};
use glinbandit::{GlmLink, Matrix, SpdMatrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_direction(d: usize, r: &mut ChaCha8Rng) -> Vector {
    let mut v = Vector::from_fn(d, |_, _| r.random::<f64>() - 0.5);
    if v.norm() == 0.0 {
        v[0] = 1.0;
    }
    v.normalize()
}

fn observations(link: &GlmLink, theta: &Vector, n: usize, r: &mut ChaCha8Rng) -> Vec<Observation> {
    sample_armset_unit_ball(theta.len(), n, r)
        .into_iter()
        .map(|x| {
            let y = link.sample_reward(x.dot(theta), r).expect("finite predictor");
            Observation::new(x, y, link.reward_bound()).expect("bounded reward")
        })
        .collect()
}

fn random_spd(d: usize, r: &mut ChaCha8Rng) -> SpdMatrix {
    let a = Matrix::from_fn(d, d, |_, _| r.random::<f64>() - 0.5);
    SpdMatrix::new(&a * a.transpose() + Matrix::identity(d, d) * 0.5).expect("positive definite")
}

/// Frank-Wolfe certificate `g <= 1.05 d_eff` on `n` random sets with
/// `d` in 2..=8 and `K` in d..=50.
pub fn design_certificates(n: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..n {
        let d = r.random_range(2..=8);
        let k = r.random_range(d..=50);
        let arms = sample_armset_unit_ball(d, k, &mut r);
        match d_optimal_design(&arms, 0.05, 100_000) {
            Ok(w) => {
                let g = g_value(&arms, &w.weights).unwrap_or(f64::INFINITY);
                let ratio = g / w.d_eff as f64;
                worst = worst.max(ratio);
                if ratio > 1.05 + 1e-12 {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Check::new(
        "design certificate",
        failures == 0 && secs < 30.0,
        format!("{n} sets, worst g/d_eff = {worst:.4} (limit 1.05), {failures} failures, {secs:.2} s (limit 30 s)"),
    )
}

/// Canonical basis: uniform weights and `g = d` to 1e-10.
pub fn canonical_design() -> Check {
    let mut err: f64 = 0.0;
    for d in 2..=8 {
        let arms: Vec<Vector> = (0..d).map(|i| Vector::from_fn(d, |j, _| f64::from(i == j))).collect();
        match d_optimal_design(&arms, 0.05, 100_000) {
            Ok(w) => {
                err = err.max((w.g_value - d as f64).abs());
                for &p in &w.weights {
                    err = err.max((p - 1.0 / d as f64).abs());
                }
            }
            Err(_) => err = f64::INFINITY,
        }
    }
    Check::new("canonical design", err <= 1e-10, format!("max error {err:.2e} (limit 1e-10)"))
}

/// `|mu''| <= R mu'` for `link` on a grid over `[lo, hi]`.
pub fn self_concordance(link: &GlmLink, r: f64, lo: f64, hi: f64, step: f64) -> Check {
    let grid = uniform_grid(lo, hi, step);
    let name = format!("{} self-concordance", link.name());
    match check_self_concordance(link, r, &grid) {
        Ok(rep) => Check::new(
            name,
            rep.holds,
            format!(
                "R = {r}, grid [{lo}, {hi}]: max |mu''|/mu' = {:.4} at z = {}",
                rep.max_ratio, rep.argmax_z
            ),
        ),
        Err(e) => Check::new(name, false, e.to_string()),
    }
}

/// The exponential-family link `mu(z) = -1/z` on `z < 0` must be rejected
/// with a ratio above 100.
pub fn exponential_counterexample() -> Check {
    let grid = uniform_grid(-1.0, -1e-3, 1e-3);
    let built = GlmLink::custom(
        "exponential",
        2.0,
        |z| -1.0 / z,
        |z| 1.0 / (z * z),
        |z| -2.0 / (z * z * z),
        &grid,
    );
    match built {
        Ok((_, rep)) => Check::new(
            "exponential counterexample",
            !rep.holds && rep.max_ratio > 100.0,
            format!("max ratio {:.1} (must fail and exceed 100)", rep.max_ratio),
        ),
        Err(e) => Check::new("exponential counterexample", false, e.to_string()),
    }
}

fn link_for(i: u64) -> GlmLink {
    if i.is_multiple_of(2) {
        GlmLink::logistic()
    } else {
        GlmLink::probit()
    }
}

/// Ridge MLE gradient norm `<= 1e-8` on `n` random instances.
pub fn mle_gradients(n: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut errors = 0;
    for i in 0..n as u64 {
        let d = r.random_range(1..=6);
        let m = r.random_range(20..=200);
        let link = link_for(i);
        let theta = unit_direction(d, &mut r) * 2.0;
        let obs = observations(&link, &theta, m, &mut r);
        match fit_mle(&link, &obs, d, 1.0, &FitOptions::default()) {
            Ok(fit) => worst = worst.max(ridge_gradient_norm(&link, &obs, 1.0, &fit)),
            Err(_) => errors += 1,
        }
    }
    Check::new(
        "MLE gradient",
        errors == 0 && worst <= 1e-8,
        format!("{n} instances, max gradient norm {worst:.2e} (limit 1e-8), {errors} solver errors"),
    )
}

/// Root of the monotone one-dimensional score by bisection.
fn bisection_mle(link: &GlmLink, obs: &[Observation], lambda: f64) -> f64 {
    let score = |t: f64| obs.iter().map(|o| (link.mu(o.x[0] * t) - o.r) * o.x[0]).sum::<f64>() + lambda * t;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One-dimensional MLE against a bisection oracle to 1e-6.
pub fn mle_bisection(n: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n as u64 {
        let link = link_for(i);
        let theta = Vector::from_element(1, if i % 4 < 2 { 1.5 } else { -0.7 });
        let obs = observations(&link, &theta, 300, &mut r);
        for lambda in [0.0, 1.0] {
            let err = match fit_mle(&link, &obs, 1, lambda, &FitOptions::default()) {
                Ok(fit) => (fit[0] - bisection_mle(&link, &obs, lambda)).abs(),
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(err);
        }
    }
    Check::new(
        "1-d MLE vs bisection",
        worst <= 1e-6,
        format!("{n} instances, max error {worst:.2e} (limit 1e-6)"),
    )
}

/// Constrained projection is inside the ellipsoid and satisfies KKT, both
/// to 1e-6.
pub fn constrained_feasibility(n: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let (mut excess, mut kkt): (f64, f64) = (0.0, 0.0);
    for _ in 0..n {
        let d = r.random_range(1..=5);
        let link = GlmLink::logistic();
        let theta = unit_direction(d, &mut r) * 2.0;
        let obs = observations(&link, &theta, 80, &mut r);
        let v = random_spd(d, &mut r);
        let center = unit_direction(d, &mut r) * 0.3;
        let radius = r.random_range(0.05..2.0);
        match project_constrained_mle(&link, &obs, 1.0, &center, &v, radius, &FitOptions::default()) {
            Ok(p) => {
                excess = excess.max(ellipsoid_distance(&p, &center, &v) - radius);
                kkt = kkt.max(constrained_kkt_residual(&link, &obs, 1.0, &p, &center, &v, radius));
            }
            Err(_) => excess = f64::INFINITY,
        }
    }
    Check::new(
        "constrained projection",
        excess <= 1e-6 && kkt <= 1e-6,
        format!("{n} instances, max constraint excess {excess:.2e}, max KKT residual {kkt:.2e} (limit 1e-6)"),
    )
}

/// Non-convex projection objective against a 200 x 200 grid over the
/// ellipsoid's bounding box, within 1e-3.
pub fn nonconvex_grid(n: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n {
        let link = GlmLink::logistic();
        let theta = unit_direction(2, &mut r) * 2.0;
        let obs = observations(&link, &theta, 60, &mut r);
        let tilde = unit_direction(2, &mut r) * 3.0;
        let center = unit_direction(2, &mut r) * 0.5;
        let v = random_spd(2, &mut r);
        let (radius, lambda) = (1.0, 1.0);
        let proj = match project_nonconvex(&link, &obs, &tilde, &center, &v, radius, lambda, &[], &mut r) {
            Ok(p) => p,
            Err(e) => return Check::new("non-convex projection", false, e.to_string()),
        };
        let vinv = v.matrix().clone().try_inverse().expect("invertible");
        let half = [radius * vinv[(0, 0)].sqrt(), radius * vinv[(1, 1)].sqrt()];
        let m = 200;
        let mut grid_best = f64::INFINITY;
        for i in 0..m {
            for j in 0..m {
                let offset = Vector::from_vec(vec![
                    -half[0] + 2.0 * half[0] * i as f64 / (m - 1) as f64,
                    -half[1] + 2.0 * half[1] * j as f64 / (m - 1) as f64,
                ]);
                let p = &center + offset;
                if ellipsoid_distance(&p, &center, &v) <= radius {
                    grid_best = grid_best.min(projection_objective(&link, &obs, &tilde, &p, lambda));
                }
            }
        }
        let feasible = ellipsoid_distance(&proj.theta, &center, &v) <= radius + 1e-9;
        let gap = if feasible { proj.objective - grid_best } else { f64::INFINITY };
        worst = worst.max(gap);
    }
    Check::new(
        "non-convex projection",
        worst <= 1e-3,
        format!("{n} instances, max (objective - grid best) = {worst:.2e} (limit 1e-3)"),
    )
}

/// Invariant counts from one rarely switching run with oracle access to
/// `theta*`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InvariantReport {
    pub loewner_violations: usize,
    pub sandwich_checks: usize,
    pub sandwich_violations: usize,
    pub premise_failures: usize,
    pub elimination_checks: usize,
    pub unsafe_eliminations: usize,
    pub potential: f64,
    pub potential_budget: f64,
}

/// Runs the rarely switching policy while tracking `H_t` monotonicity, the
/// sandwich `H_t <= H*_t <= e^2 H_t` on rounds where the warm-up estimate is
/// within `gamma` of `theta*` in the `H*_w` norm, elimination safety on arm
/// sets covered by the warm-up confidence bounds, and the elliptic
/// potential of the Criterion-I pulls.
pub fn track_invariants(
    inst: &Instance,
    params: BanditParams,
    opts: RsOptions,
    horizon: usize,
    seed: u64,
    sandwich_every: usize,
) -> Result<InvariantReport, glinbandit::bandit::BanditError> {
    let d = inst.theta_star.len();
    let link = inst.link.clone();
    let mut policy = RsGlinCb::new(params, link.clone(), opts)?;
    let mut streams = SeedStreams::new(seed);
    let lambda = params.lambda;
    let mut h_star = Matrix::identity(d, d) * lambda;
    let mut h_star_w = Matrix::identity(d, d) * lambda;
    let mut rep = InvariantReport::default();
    let width = policy.warmup_width();
    for t in 1..=horizon {
        let armset = inst
            .generator
            .armset(t, &mut streams.env)
            .map_err(|e| glinbandit::bandit::BanditError::InvalidParams(e.to_string()))?;
        let arms = armset.arms();
        let h_before = policy.h().matrix().clone();
        let theta_o = policy.theta_o().clone();

        let covered = arms
            .iter()
            .all(|x| x.dot(&(&theta_o - &inst.theta_star)).abs() <= width * policy.v().inv_norm(x));
        if covered {
            rep.elimination_checks += 1;
            let kept = eliminate(arms, &(0..arms.len()).collect::<Vec<_>>(), &theta_o, policy.v(), width);
            if !kept.contains(&inst.optimal_arm(arms)) {
                rep.unsafe_eliminations += 1;
            }
        }

        let decision = policy.select(arms, &mut streams.policy)?;
        let x = &arms[decision.index];
        let z = x.dot(&inst.theta_star);
        let reward = link.sample_reward(z, &mut streams.reward)?;
        policy.observe(decision.index, reward)?;

        if decision.switch_i {
            h_star_w.ger(link.mu_dot(z), x, x, 1.0);
        } else {
            h_star.ger(link.mu_dot(z), x, x, 1.0);
        }
        let h_after = policy.h().matrix();
        let scale = h_after.norm();
        if min_eigenvalue(&(h_after - &h_before)) < -1e-9 * scale {
            rep.loewner_violations += 1;
        }
        let err = policy.theta_o() - &inst.theta_star;
        let premise = err.dot(&(&h_star_w * &err)).sqrt() <= params.gamma;
        if !premise {
            rep.premise_failures += 1;
        } else if t % sandwich_every == 0 {
            rep.sandwich_checks += 1;
            let lower = min_eigenvalue(&(&h_star - h_after));
            let upper = min_eigenvalue(&(h_after * (E * E) - &h_star));
            if lower < -1e-6 * scale || upper < -1e-6 * scale {
                rep.sandwich_violations += 1;
            }
        }
    }
    rep.potential = policy.criterion_i_potential();
    rep.potential_budget = 2.0 * d as f64 * (1.0 + policy.count_i() as f64 / (lambda * d as f64)).ln();
    Ok(rep)
}

/// Elimination with the true parameter never drops the best arm, for any
/// width and weighting matrix.
pub fn planted_elimination(n: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut failures = 0;
    for _ in 0..n {
        let d = r.random_range(2..=6);
        let k = r.random_range(2..=30);
        let theta = unit_direction(d, &mut r) * 2.0;
        let arms = sample_armset_unit_ball(d, k, &mut r);
        let m = random_spd(d, &mut r);
        let width = r.random_range(0.0..3.0);
        let best = argmax(arms.iter().map(|x| x.dot(&theta))).expect("non-empty");
        if !eliminate(&arms, &(0..k).collect::<Vec<_>>(), &theta, &m, width).contains(&best) {
            failures += 1;
        }
    }
    Check::new(
        "planted elimination",
        failures == 0,
        format!("{n} planted instances, {failures} dropped the best arm"),
    )
}

/// Folds per-seed invariant reports into checks.
pub fn invariant_checks(reports: &[InvariantReport]) -> Vec<Check> {
    let sum = |f: &dyn Fn(&InvariantReport) -> usize| reports.iter().map(f).sum::<usize>();
    let seeds = reports.len();
    let over_budget = reports.iter().filter(|r| r.potential > r.potential_budget).count();
    let worst_potential = reports
        .iter()
        .map(|r| r.potential / r.potential_budget.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let (checks, violations) = (sum(&|r| r.sandwich_checks), sum(&|r| r.sandwich_violations));
    vec![
        Check::new(
            "Loewner monotonicity",
            sum(&|r| r.loewner_violations) == 0,
            format!("{} violations over {seeds} seeds", sum(&|r| r.loewner_violations)),
        ),
        Check::new(
            "elliptic potential",
            over_budget == 0,
            format!("{over_budget} seeds over budget, worst potential/budget = {worst_potential:.3}"),
        ),
        Check::new(
            "Hessian sandwich",
            violations == 0 && checks > 0,
            format!(
                "{violations} violations in {checks} checked rounds ({} rounds without the premise)",
                sum(&|r| r.premise_failures)
            ),
        ),
        Check::new(
            "elimination safety",
            sum(&|r| r.unsafe_eliminations) == 0,
            format!(
                "{} unsafe eliminations in {} covered rounds",
                sum(&|r| r.unsafe_eliminations),
                sum(&|r| r.elimination_checks)
            ),
        ),
    ]
}
