//! Regularized maximum-likelihood estimation for GLM parameters, the convex
//! and non-convex projection steps, and confidence widths.

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::glm::GlmLink;
use crate::linalg::{min_eigenvalue, LinalgError, Matrix, SpdMatrix, Vector};

const ARMIJO_C: f64 = 1e-4;
const SECULAR_TOL: f64 = 1e-10;
const ROUNDING_DECREASE: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vector,
    },
    #[error("unregularized fit requested but the observation Gram matrix is rank deficient")]
    RankDeficient,
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("ridge parameter must be non-negative and finite, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One `(arm, reward)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub x: Vector,
    pub r: f64,
}

impl Observation {
    /// Validates `||x|| <= 1` and `r in [0, R]`.
    pub fn new(x: Vector, r: f64, reward_bound: f64) -> Result<Self, EstimatorError> {
        let norm = x.norm();
        if norm.is_nan() || norm > 1.0 + 1e-12 {
            return Err(EstimatorError::InvalidObservation(format!(
                "arm norm {norm} exceeds 1"
            )));
        }
        if !(0.0..=reward_bound).contains(&r) {
            return Err(EstimatorError::InvalidObservation(format!(
                "reward {r} outside [0, {reward_bound}]"
            )));
        }
        Ok(Self { x, r })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    /// Target Euclidean norm of the (projected) gradient.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Design matrices and estimate owned by a single run loop.
#[derive(Clone, Debug)]
pub struct EstimatorState {
    pub theta_hat: Vector,
    /// `lambda I + sum x x^T`.
    pub v: SpdMatrix,
    /// `lambda I + sum c_s x x^T`, the Hessian estimate.
    pub h: SpdMatrix,
    pub lambda: f64,
}

impl EstimatorState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self, EstimatorError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(EstimatorError::InvalidLambda(lambda));
        }
        Ok(Self {
            theta_hat: Vector::zeros(dim),
            v: SpdMatrix::scaled_identity(dim, lambda)?,
            h: SpdMatrix::scaled_identity(dim, lambda)?,
            lambda,
        })
    }

    pub fn log_det_h(&self) -> f64 {
        self.h.log_det()
    }
}

/// `sum_s [ -r_s <x_s, theta> + b(<x_s, theta>) ]`.
pub fn log_loss(link: &GlmLink, theta: &Vector, obs: &[Observation]) -> f64 {
    obs.iter()
        .map(|o| {
            let z = o.x.dot(theta);
            -o.r * z + link.log_partition(z)
        })
        .sum()
}

struct RidgeLoss<'a> {
    link: &'a GlmLink,
    obs: &'a [Observation],
    lambda: f64,
}

impl RidgeLoss<'_> {
    fn value(&self, theta: &Vector) -> f64 {
        log_loss(self.link, theta, self.obs) + 0.5 * self.lambda * theta.norm_squared()
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        let mut g = theta * self.lambda;
        for o in self.obs {
            let z = o.x.dot(theta);
            g.axpy(self.link.mu(z) - o.r, &o.x, 1.0);
        }
        g
    }

    fn hessian(&self, theta: &Vector) -> Matrix {
        let d = theta.len();
        let mut h = Matrix::identity(d, d) * self.lambda;
        for o in self.obs {
            let w = self.link.mu_dot(o.x.dot(theta));
            h.ger(w, &o.x, &o.x, 1.0);
        }
        h
    }
}

fn check_dims(obs: &[Observation], dim: usize) -> Result<(), EstimatorError> {
    match obs.iter().find(|o| o.x.len() != dim) {
        Some(o) => Err(LinalgError::DimensionMismatch {
            expected: dim,
            got: o.x.len(),
        }
        .into()),
        None => Ok(()),
    }
}

/// Ridge-regularized MLE, `argmin sum_s l(theta, x_s, r_s) + lambda/2 ||theta||^2`.
///
/// `lambda = 0` asks for the plain MLE and requires a full-rank Gram matrix.
pub fn fit_mle(
    link: &GlmLink,
    obs: &[Observation],
    dim: usize,
    lambda: f64,
    opts: &FitOptions,
) -> Result<Vector, EstimatorError> {
    fit_mle_from(link, obs, lambda, Vector::zeros(dim), opts)
}

/// [`fit_mle`] started from `init`. The minimizer does not depend on the
/// starting point when it is unique.
pub fn fit_mle_from(
    link: &GlmLink,
    obs: &[Observation],
    lambda: f64,
    init: Vector,
    opts: &FitOptions,
) -> Result<Vector, EstimatorError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(EstimatorError::InvalidLambda(lambda));
    }
    let dim = init.len();
    check_dims(obs, dim)?;
    if lambda == 0.0 {
        let mut gram = Matrix::zeros(dim, dim);
        for o in obs {
            gram.ger(1.0, &o.x, &o.x, 1.0);
        }
        if dim > 0 && min_eigenvalue(&gram) <= 1e-12 * gram.trace().max(1e-300) {
            return Err(EstimatorError::RankDeficient);
        }
    }
    let loss = RidgeLoss { link, obs, lambda };
    let mut theta = init;
    let mut grad = loss.gradient(&theta);
    for iter in 0..opts.max_iter {
        let grad_norm = grad.norm();
        if grad_norm <= opts.tol {
            return Ok(theta);
        }
        let hess = loss.hessian(&theta);
        let dir = match hess.cholesky() {
            Some(c) => -c.solve(&grad),
            None => -&grad,
        };
        let f0 = loss.value(&theta);
        let slope = grad.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        if -slope <= ROUNDING_DECREASE * (1.0 + f0.abs()) {
            // predicted decrease is below the resolution of the objective
            step = 0.0;
        }
        while step > 1e-12 {
            let cand = &theta + &dir * step;
            if loss.value(&cand) <= f0 + ARMIJO_C * step * slope {
                accepted = Some(cand);
                break;
            }
            step *= 0.5;
        }
        let next = match accepted {
            Some(c) => c,
            None => {
                // Objective differences are below rounding; fall back to
                // the full step if it still shrinks the gradient.
                let cand = &theta + &dir;
                if loss.gradient(&cand).norm() < grad_norm {
                    cand
                } else {
                    return Err(EstimatorError::NonConvergence {
                        iterations: iter,
                        grad_norm,
                        last_iterate: theta,
                    });
                }
            }
        };
        theta = next;
        grad = loss.gradient(&theta);
    }
    let grad_norm = grad.norm();
    if grad_norm <= opts.tol {
        return Ok(theta);
    }
    Err(EstimatorError::NonConvergence {
        iterations: opts.max_iter,
        grad_norm,
        last_iterate: theta,
    })
}

/// Minimizes `1/2 y^T A y - b^T y` over `{ y : y^T V y <= radius^2 }` for
/// positive definite `A`. Returns the minimizer and the multiplier.
///
/// With `V = L L^T` and `u = L^T y` this is a trust-region subproblem in `u`;
/// the multiplier solves the secular equation `1/||u(nu)|| = 1/radius` by
/// Newton's method, which converges monotonically from `nu = 0`.
pub fn ellipsoid_qp(a: &Matrix, b: &Vector, v: &SpdMatrix, radius: f64) -> (Vector, f64) {
    let l = v.cholesky().l();
    let d = b.len();
    // A~ = L^{-1} A L^{-T}
    let mut tmp = a.clone();
    l.solve_lower_triangular_mut(&mut tmp);
    let mut a_t = tmp.transpose();
    l.solve_lower_triangular_mut(&mut a_t);
    let a_t = (&a_t + a_t.transpose()) * 0.5;
    let mut b_t = b.clone();
    l.solve_lower_triangular_mut(&mut b_t);

    let eig = SymmetricEigen::new(a_t);
    let beta = eig.eigenvectors.transpose() * &b_t;
    let evals = &eig.eigenvalues;
    let floor = evals.iter().copied().fold(f64::INFINITY, f64::min);
    let norm_at = |nu: f64| -> (f64, f64) {
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for i in 0..d {
            let den = evals[i] + nu;
            s2 += beta[i] * beta[i] / (den * den);
            s3 += beta[i] * beta[i] / (den * den * den);
        }
        (s2.sqrt(), s3)
    };
    let mut nu = if floor > 0.0 { 0.0 } else { -floor + 1e-12 };
    let (mut norm, mut s3) = norm_at(nu);
    if norm > radius {
        for _ in 0..200 {
            if (norm - radius).abs() <= SECULAR_TOL * radius {
                break;
            }
            // phi(nu) = 1/||u|| - 1/radius, phi'(nu) = s3 / ||u||^3
            let phi = 1.0 / norm - 1.0 / radius;
            let dphi = s3 / (norm * norm * norm);
            let next = nu - phi / dphi;
            if !(next.is_finite()) || next <= nu {
                break;
            }
            nu = next;
            (norm, s3) = norm_at(nu);
        }
    }
    let coeffs = Vector::from_fn(d, |i, _| beta[i] / (evals[i] + nu));
    let u = &eig.eigenvectors * coeffs;
    let mut y = u;
    l.transpose().solve_upper_triangular_mut(&mut y);
    // land exactly on the boundary when active
    if nu > 0.0 {
        let s = y.dot(&(v.matrix() * &y)).sqrt();
        if s > 0.0 {
            y *= radius / s;
        }
    }
    (y, nu)
}

/// `||theta - center||_V`.
pub fn ellipsoid_distance(theta: &Vector, center: &Vector, v: &SpdMatrix) -> f64 {
    let y = theta - center;
    y.dot(&(v.matrix() * &y)).max(0.0).sqrt()
}

/// Norm of the gradient projected on the tangent cone of the ellipsoid.
fn kkt_residual(grad: &Vector, theta: &Vector, center: &Vector, v: &SpdMatrix, radius: f64) -> f64 {
    let y = theta - center;
    let normal = v.matrix() * &y;
    let dist = y.dot(&normal).max(0.0).sqrt();
    if dist < radius * (1.0 - 1e-7) || normal.norm_squared() == 0.0 {
        return grad.norm();
    }
    let nu = (-grad.dot(&normal) / normal.norm_squared()).max(0.0);
    (grad + normal * nu).norm()
}

/// Euclidean projection of `point` onto `{ theta : ||theta - center||_V <= radius }`.
pub fn project_onto_ellipsoid(point: &Vector, center: &Vector, v: &SpdMatrix, radius: f64) -> Vector {
    let d = point.len();
    let y0 = point - center;
    if y0.dot(&(v.matrix() * &y0)) <= radius * radius {
        return point.clone();
    }
    let (y, _) = ellipsoid_qp(&Matrix::identity(d, d), &y0, v, radius);
    center + y
}

/// Ridge log-loss minimizer over the ellipsoid `||theta - center||_V <= radius`
/// (the convex relaxation of the projection step).
///
/// Each iteration minimizes the local Newton model exactly over the ellipsoid
/// and backtracks along the resulting feasible direction.
pub fn project_constrained_mle(
    link: &GlmLink,
    obs: &[Observation],
    lambda: f64,
    center: &Vector,
    v: &SpdMatrix,
    radius: f64,
    opts: &FitOptions,
) -> Result<Vector, EstimatorError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(EstimatorError::InvalidRadius(radius));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(EstimatorError::InvalidLambda(lambda));
    }
    check_dims(obs, center.len())?;
    if radius < 1e-12 {
        return Ok(center.clone());
    }
    let loss = RidgeLoss { link, obs, lambda };
    let mut theta = center.clone();
    let mut grad = loss.gradient(&theta);
    for iter in 0..opts.max_iter {
        let residual = kkt_residual(&grad, &theta, center, v, radius);
        if residual <= opts.tol {
            return Ok(theta);
        }
        let hess = loss.hessian(&theta);
        let y0 = &theta - center;
        let b = &hess * &y0 - &grad;
        let (y, _) = ellipsoid_qp(&hess, &b, v, radius);
        let dir = &y - &y0;
        let slope = grad.dot(&dir);
        let f0 = loss.value(&theta);
        let mut step = 1.0;
        let mut accepted = None;
        if slope < 0.0 && -slope > ROUNDING_DECREASE * (1.0 + f0.abs()) {
            while step > 1e-12 {
                let cand = &theta + &dir * step;
                if loss.value(&cand) <= f0 + ARMIJO_C * step * slope {
                    accepted = Some(cand);
                    break;
                }
                step *= 0.5;
            }
        }
        let next = match accepted {
            Some(c) => c,
            None => {
                let cand = &theta + &dir;
                let g = loss.gradient(&cand);
                if kkt_residual(&g, &cand, center, v, radius) < residual {
                    cand
                } else {
                    return Err(EstimatorError::NonConvergence {
                        iterations: iter,
                        grad_norm: residual,
                        last_iterate: theta,
                    });
                }
            }
        };
        theta = next;
        grad = loss.gradient(&theta);
    }
    let residual = kkt_residual(&grad, &theta, center, v, radius);
    if residual <= opts.tol {
        return Ok(theta);
    }
    Err(EstimatorError::NonConvergence {
        iterations: opts.max_iter,
        grad_norm: residual,
        last_iterate: theta,
    })
}

/// Projected-gradient residual used to certify [`project_constrained_mle`]
/// output: the gradient norm if the constraint is inactive, otherwise the
/// norm of the gradient with its outward normal component removed.
pub fn constrained_kkt_residual(
    link: &GlmLink,
    obs: &[Observation],
    lambda: f64,
    theta: &Vector,
    center: &Vector,
    v: &SpdMatrix,
    radius: f64,
) -> f64 {
    let loss = RidgeLoss { link, obs, lambda };
    kkt_residual(&loss.gradient(theta), theta, center, v, radius)
}

/// Gradient norm of the ridge log-loss.
pub fn ridge_gradient_norm(link: &GlmLink, obs: &[Observation], lambda: f64, theta: &Vector) -> f64 {
    RidgeLoss { link, obs, lambda }.gradient(theta).norm()
}

/// Ridge log-loss value.
pub fn ridge_log_loss(link: &GlmLink, obs: &[Observation], lambda: f64, theta: &Vector) -> f64 {
    RidgeLoss { link, obs, lambda }.value(theta)
}

/// Squared projection objective and its gradient:
/// `J(theta)^2 = g^T A^{-1} g` with `g = sum (mu(<x,theta>) - mu(<x,theta~>)) x`
/// and `A = sum mu'(<x,theta>) x x^T + lambda I`.
fn projection_objective_sq(
    link: &GlmLink,
    obs: &[Observation],
    tilde_means: &[f64],
    theta: &Vector,
    lambda: f64,
    with_grad: bool,
) -> (f64, Option<Vector>) {
    let d = theta.len();
    let mut g = Vector::zeros(d);
    let mut a = Matrix::identity(d, d) * lambda;
    let zs: Vec<f64> = obs.iter().map(|o| o.x.dot(theta)).collect();
    for ((o, &z), &m) in obs.iter().zip(&zs).zip(tilde_means) {
        g.axpy(link.mu(z) - m, &o.x, 1.0);
        a.ger(link.mu_dot(z), &o.x, &o.x, 1.0);
    }
    let Some(chol) = a.clone().cholesky() else {
        return (f64::INFINITY, None);
    };
    let w = chol.solve(&g);
    let val = g.dot(&w).max(0.0);
    if !with_grad {
        return (val, None);
    }
    let gram = a - Matrix::identity(d, d) * lambda;
    let mut grad = &gram * &w * 2.0;
    for (o, &z) in obs.iter().zip(&zs) {
        let xw = o.x.dot(&w);
        grad.axpy(-link.mu_ddot(z) * xw * xw, &o.x, 1.0);
    }
    (val, Some(grad))
}

/// `|| sum_s (mu(<x_s,theta>) - mu(<x_s,theta~>)) x_s ||_{(H(theta) + lambda I)^{-1}}`.
pub fn projection_objective(
    link: &GlmLink,
    obs: &[Observation],
    theta_tilde: &Vector,
    theta: &Vector,
    lambda: f64,
) -> f64 {
    let means: Vec<f64> = obs.iter().map(|o| link.mu(o.x.dot(theta_tilde))).collect();
    projection_objective_sq(link, obs, &means, theta, lambda, false).0.sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonconvexProjection {
    pub theta: Vector,
    pub objective: f64,
    /// Set when no start managed to decrease its objective.
    pub warning: bool,
}

/// Number of uniformly random feasible starts used by [`project_nonconvex`].
pub const NONCONVEX_RANDOM_STARTS: usize = 6;

/// Multi-start projected gradient descent on the (non-convex) projection
/// objective over `||theta - center||_V <= radius`.
///
/// Starts: every point in `seeds` (typically the convex-relaxation output),
/// the center, `theta_tilde` projected onto the ellipsoid, and
/// [`NONCONVEX_RANDOM_STARTS`] uniform points of the ellipsoid. The best
/// local solution is returned, so its objective never exceeds that of any
/// start.
#[allow(clippy::too_many_arguments)]
pub fn project_nonconvex<G: Rng + ?Sized>(
    link: &GlmLink,
    warmup_obs: &[Observation],
    theta_tilde: &Vector,
    center: &Vector,
    v: &SpdMatrix,
    radius: f64,
    lambda: f64,
    seeds: &[Vector],
    rng: &mut G,
) -> Result<NonconvexProjection, EstimatorError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(EstimatorError::InvalidRadius(radius));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(EstimatorError::InvalidLambda(lambda));
    }
    let d = center.len();
    check_dims(warmup_obs, d)?;
    let means: Vec<f64> = warmup_obs
        .iter()
        .map(|o| link.mu(o.x.dot(theta_tilde)))
        .collect();
    let objective = |theta: &Vector| {
        projection_objective_sq(link, warmup_obs, &means, theta, lambda, false)
            .0
            .sqrt()
    };
    if radius < 1e-12 {
        return Ok(NonconvexProjection {
            theta: center.clone(),
            objective: objective(center),
            warning: false,
        });
    }

    let mut starts: Vec<Vector> = seeds
        .iter()
        .map(|s| project_onto_ellipsoid(s, center, v, radius))
        .collect();
    starts.push(center.clone());
    starts.push(project_onto_ellipsoid(theta_tilde, center, v, radius));
    let l_t = v.cholesky().l().transpose();
    for _ in 0..NONCONVEX_RANDOM_STARTS {
        // uniform in the unit ball, mapped through L^{-T}
        let dir = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let r: f64 = rng.random::<f64>().powf(1.0 / d as f64);
        let mut y = dir.normalize() * (r * radius);
        l_t.solve_upper_triangular_mut(&mut y);
        starts.push(center + y);
    }

    let mut best: Option<(Vector, f64)> = None;
    let mut any_descent = false;
    for start in starts {
        let start_val = objective(&start);
        let (theta, val) = pgd(link, warmup_obs, &means, start, center, v, radius, lambda);
        if val < start_val {
            any_descent = true;
        }
        let val = val.sqrt();
        if best.as_ref().is_none_or(|(_, b)| val < *b) {
            best = Some((theta, val));
        }
    }
    let (theta, objective) = best.expect("at least one start");
    if !any_descent {
        log::warn!("non-convex projection: no start produced descent");
    }
    Ok(NonconvexProjection {
        theta,
        objective,
        warning: !any_descent,
    })
}

#[allow(clippy::too_many_arguments)]
fn pgd(
    link: &GlmLink,
    obs: &[Observation],
    means: &[f64],
    start: Vector,
    center: &Vector,
    v: &SpdMatrix,
    radius: f64,
    lambda: f64,
) -> (Vector, f64) {
    let mut theta = start;
    let (mut val, grad) = projection_objective_sq(link, obs, means, &theta, lambda, true);
    let Some(mut grad) = grad else {
        return (theta, val);
    };
    let mut eta = 1.0 / (1.0 + grad.norm());
    for _ in 0..500 {
        if val <= 1e-28 {
            break;
        }
        let mut moved = false;
        while eta > 1e-14 {
            let cand = project_onto_ellipsoid(&(&theta - &grad * eta), center, v, radius);
            let step = &cand - &theta;
            let (cval, _) = projection_objective_sq(link, obs, means, &cand, lambda, false);
            if cval <= val - 1e-4 / eta * step.norm_squared() && step.norm_squared() > 0.0 {
                let (cv, cg) = projection_objective_sq(link, obs, means, &cand, lambda, true);
                theta = cand;
                val = cv;
                grad = cg.expect("finite objective");
                moved = true;
                eta *= 2.0;
                break;
            }
            eta *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (theta, val)
}

/// `gamma * ||x||_{M^{-1}}`.
pub fn confidence_width(x: &Vector, m: &SpdMatrix, gamma: f64) -> f64 {
    gamma * m.inv_norm(x)
}
