//! G/D-optimal experimental design and the distributional optimal design
//! mixture policy.
//!
//! The distributional design is learned by a surrogate construction:
//! per-set G-optimal design matrices are clustered greedily by trace-norm
//! distance, each cluster contributes a softmax component with matrix equal
//! to the pseudo-inverse of its mean design matrix, and the result is
//! validated on held-out arm sets. When validation fails the design falls
//! back to a single component built from the average G-optimal design.

use nalgebra::SymmetricEigen;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::linalg::{argmax, psd_pinv, span_basis, Matrix, Vector};

/// Relative eigenvalue threshold used to decide the span of an arm set.
const SPAN_TOL: f64 = 1e-10;
const PRUNE_WEIGHT: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("arm set is empty")]
    EmptyArmSet,
    #[error("all arms are zero")]
    ZeroArms,
    #[error("design did not reach the certificate within {iterations} iterations (g = {:.6}, target {target:.6})", best.g_value)]
    IterationCap {
        iterations: usize,
        target: f64,
        best: DesignWeights,
    },
    #[error("need at least 2 arm sets to learn a distributional design, got {0}")]
    TooFewArmSets(usize),
    #[error("softmax exponent must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("arm dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Weights over an arm list with the achieved maximum leverage.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignWeights {
    pub weights: Vec<f64>,
    /// `max_x ||x||^2_{U^{-1}}` on the span of the arms.
    pub g_value: f64,
    /// Dimension of the span of the arms.
    pub d_eff: usize,
}

impl DesignWeights {
    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// `sum_i w_i x_i x_i^T` in the original coordinates.
    pub fn design_matrix(&self, arms: &[Vector]) -> Matrix {
        weighted_gram(arms, &self.weights)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DesignOptions {
    pub eps: f64,
    pub iter_cap: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            eps: 0.05,
            iter_cap: 100_000,
        }
    }
}

fn weighted_gram(arms: &[Vector], weights: &[f64]) -> Matrix {
    let d = arms.first().map_or(0, |x| x.len());
    let mut u = Matrix::zeros(d, d);
    for (x, &w) in arms.iter().zip(weights) {
        if w > 0.0 {
            u.ger(w, x, x, 1.0);
        }
    }
    u
}

fn check_arms(arms: &[Vector]) -> Result<usize, DesignError> {
    let d = arms.first().ok_or(DesignError::EmptyArmSet)?.len();
    if let Some(x) = arms.iter().find(|x| x.len() != d) {
        return Err(DesignError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    Ok(d)
}

/// Leverages `y_i^T U^{-1} y_i` for every arm; `None` if `U` is singular.
fn leverages(ys: &[Vector], u: &Matrix) -> Option<Vec<f64>> {
    let chol = u.clone().cholesky()?;
    let l = chol.l();
    Some(
        ys.iter()
            .map(|y| {
                let mut z = y.clone();
                l.solve_lower_triangular_mut(&mut z);
                z.norm_squared()
            })
            .collect(),
    )
}

/// Indices of a greedy subset whose span equals the span of `ys`.
fn rank_completing_subset(ys: &[Vector], rank: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(rank);
    let mut basis: Vec<Vector> = Vec::with_capacity(rank);
    for _ in 0..rank {
        let residual = |y: &Vector| {
            let mut r = y.clone();
            for b in &basis {
                r.axpy(-b.dot(y), b, 1.0);
            }
            r
        };
        let Some(best) = argmax(ys.iter().map(|y| residual(y).norm_squared())) else {
            break;
        };
        let r = residual(&ys[best]);
        let n = r.norm();
        if n <= 1e-12 {
            break;
        }
        basis.push(r / n);
        chosen.push(best);
    }
    chosen
}

/// Null-space reduction: keeps `U` and the total mass fixed while removing
/// support points until at most `r(r+1)/2 + 1` remain.
fn caratheodory_prune(ys: &[Vector], weights: &mut [f64]) {
    let r = ys.first().map_or(0, |y| y.len());
    let rows = r * (r + 1) / 2 + 1;
    loop {
        let support: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        if support.len() <= rows {
            return;
        }
        let cols = &support[..rows + 1];
        let a = Matrix::from_fn(rows, rows + 1, |row, col| {
            let y = &ys[cols[col]];
            if row + 1 == rows {
                return 1.0;
            }
            // enumerate upper triangle (p, q) with p <= q
            let mut k = row;
            let mut p = 0;
            while k >= r - p {
                k -= r - p;
                p += 1;
            }
            let q = p + k;
            y[p] * y[q]
        });
        let eig = SymmetricEigen::new(a.transpose() * &a);
        let min_idx = (0..rows + 1)
            .min_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]))
            .expect("non-empty");
        let mut z: Vec<f64> = eig.eigenvectors.column(min_idx).iter().copied().collect();
        if z.iter().all(|&v| v <= 0.0) {
            z.iter_mut().for_each(|v| *v = -*v);
        }
        let (pivot, step) = cols
            .iter()
            .zip(&z)
            .filter(|(_, &zi)| zi > 0.0)
            .map(|(&c, &zi)| (c, weights[c] / zi))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("null vector has a positive entry");
        for (&c, &zi) in cols.iter().zip(&z) {
            weights[c] = (weights[c] - step * zi).max(0.0);
        }
        weights[pivot] = 0.0;
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }
}

fn frank_wolfe(
    arms: &[Vector],
    opts: &DesignOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<DesignWeights, DesignError> {
    check_arms(arms)?;
    let basis = span_basis(arms, SPAN_TOL);
    let rank = basis.ncols();
    if rank == 0 {
        return Err(DesignError::ZeroArms);
    }
    let ys: Vec<Vector> = arms.iter().map(|x| basis.transpose() * x).collect();
    let k = arms.len();
    let rf = rank as f64;
    let target = (1.0 + opts.eps) * rf;

    let init = rank_completing_subset(&ys, rank);
    let mut weights = vec![0.0; k];
    for &i in &init {
        weights[i] = 1.0 / init.len() as f64;
    }
    let mut u = weighted_gram(&ys, &weights);
    let mut lev = leverages(&ys, &u).ok_or(DesignError::ZeroArms)?;
    let mut iterations = 0;
    loop {
        if let Some(t) = trace.as_deref_mut() {
            t.push(log_det(&u));
        }
        let j = argmax(lev.iter().copied()).expect("non-empty");
        let g = lev[j];
        if g <= target {
            break;
        }
        if iterations >= opts.iter_cap {
            return Err(DesignError::IterationCap {
                iterations,
                target,
                best: DesignWeights {
                    weights,
                    g_value: g,
                    d_eff: rank,
                },
            });
        }
        let gamma = (g / rf - 1.0) / (g - 1.0);
        weights.iter_mut().for_each(|w| *w *= 1.0 - gamma);
        weights[j] += gamma;
        u *= 1.0 - gamma;
        u.ger(gamma, &ys[j], &ys[j], 1.0);
        lev = leverages(&ys, &u).ok_or(DesignError::ZeroArms)?;
        iterations += 1;
    }

    for w in weights.iter_mut() {
        if *w < PRUNE_WEIGHT {
            *w = 0.0;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    caratheodory_prune(&ys, &mut weights);
    let u = weighted_gram(&ys, &weights);
    let g_value = leverages(&ys, &u)
        .ok_or(DesignError::ZeroArms)?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(DesignWeights {
        weights,
        g_value,
        d_eff: rank,
    })
}

fn log_det(u: &Matrix) -> f64 {
    u.clone()
        .cholesky()
        .map_or(f64::NEG_INFINITY, |c| {
            c.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum()
        })
}

/// D-optimal (equivalently G-optimal) design over `arms` by Wynn's
/// vertex-direction Frank–Wolfe method.
///
/// Stops once `max_x ||x||^2_{U^{-1}} <= (1 + eps) d_eff`; the arm set is
/// projected onto its span so rank-deficient sets are handled. Weights below
/// `1e-7` are pruned and the support is then reduced to at most
/// `d_eff (d_eff + 1) / 2 + 1` points without changing `U`.
pub fn d_optimal_design(arms: &[Vector], eps: f64, iter_cap: usize) -> Result<DesignWeights, DesignError> {
    frank_wolfe(arms, &DesignOptions { eps, iter_cap }, None)
}

/// [`d_optimal_design`] that also returns `log det U` at every iteration.
pub fn d_optimal_design_traced(
    arms: &[Vector],
    eps: f64,
    iter_cap: usize,
) -> Result<(DesignWeights, Vec<f64>), DesignError> {
    let mut trace = Vec::new();
    let w = frank_wolfe(arms, &DesignOptions { eps, iter_cap }, Some(&mut trace))?;
    Ok((w, trace))
}

/// `max_x ||x||^2_{U^{-1}}` for arbitrary weights, evaluated on the span.
pub fn g_value(arms: &[Vector], weights: &[f64]) -> Option<f64> {
    let basis = span_basis(arms, SPAN_TOL);
    let ys: Vec<Vector> = arms.iter().map(|x| basis.transpose() * x).collect();
    let u = weighted_gram(&ys, weights);
    leverages(&ys, &u).map(|l| l.into_iter().fold(0.0, f64::max))
}

fn sample_from<G: Rng + ?Sized>(probs: &[f64], rng: &mut G) -> usize {
    WeightedIndex::new(probs)
        .expect("probabilities are non-negative with positive mass")
        .sample(rng)
}

pub fn g_optimal_sample<G: Rng + ?Sized>(weights: &DesignWeights, rng: &mut G) -> usize {
    sample_from(&weights.weights, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxPolicy {
    pub probs: Vec<f64>,
    /// Set when every score was zero and the uniform distribution was used.
    pub degenerate: bool,
}

/// `p_i = s_i^alpha / sum_j s_j^alpha` with `s_i = ||x_i||^2_M`, computed in
/// log space.
pub fn softmax_matrix_policy(m: &Matrix, alpha: f64, arms: &[Vector]) -> Result<SoftmaxPolicy, DesignError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DesignError::InvalidAlpha(alpha));
    }
    check_arms(arms)?;
    let logs: Vec<f64> = arms
        .iter()
        .map(|x| {
            let s = x.dot(&(m * x));
            if s > 0.0 {
                alpha * s.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        let k = arms.len();
        return Ok(SoftmaxPolicy {
            probs: vec![1.0 / k as f64; k],
            degenerate: true,
        });
    }
    let exps: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(SoftmaxPolicy {
        probs: exps.into_iter().map(|e| e / total).collect(),
        degenerate: false,
    })
}

/// Mixture components `(p_i, M_i)` and the softmax exponent.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionalDesign {
    pub components: Vec<(f64, Matrix)>,
    pub alpha: f64,
    /// Held-out value of `E[max_x ||x||_{W^{-1}}]` for the returned design.
    pub heldout_bound: f64,
    /// True when the clustered design failed validation and the single
    /// component fallback was returned.
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistributionalOptions {
    pub alpha: f64,
    /// Slack `c` in the validation bound `c d sqrt(ln d)`.
    pub slack: f64,
    pub design: DesignOptions,
}

impl Default for DistributionalOptions {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            slack: 4.0,
            design: DesignOptions {
                eps: 0.1,
                iter_cap: 100_000,
            },
        }
    }
}

/// Maximum number of mixture components, `ceil(4 d ln d)` and at least 1.
pub fn max_components(d: usize) -> usize {
    let df = d as f64;
    ((4.0 * df * df.ln()).ceil() as usize).max(1)
}

/// Validation bound `c d sqrt(ln max(d, 2))`.
pub fn validation_bound(d: usize, slack: f64) -> f64 {
    slack * d as f64 * (d.max(2) as f64).ln().sqrt()
}

fn trace_norm(a: &Matrix) -> f64 {
    SymmetricEigen::new((a + a.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .sum()
}

fn g_design_or_zero(arms: &[Vector], opts: &DesignOptions) -> (DesignWeights, Matrix) {
    let d = arms.first().map_or(0, |x| x.len());
    match d_optimal_design(arms, opts.eps, opts.iter_cap) {
        Ok(w) => {
            let u = w.design_matrix(arms);
            (w, u)
        }
        Err(DesignError::IterationCap { best, .. }) => {
            let u = best.design_matrix(arms);
            (best, u)
        }
        Err(_) => {
            let k = arms.len().max(1);
            let w = DesignWeights {
                weights: vec![1.0 / k as f64; arms.len()],
                g_value: 0.0,
                d_eff: 0,
            };
            (w, Matrix::zeros(d, d))
        }
    }
}

/// Expected design matrix of the mixture policy on one arm set.
fn mixture_design_matrix(design: &DistributionalDesign, g_design: &Matrix, arms: &[Vector]) -> Matrix {
    let mut w = g_design * 0.5;
    for (p, m) in &design.components {
        if *p == 0.0 {
            continue;
        }
        let soft = softmax_matrix_policy(m, design.alpha, arms).expect("validated alpha");
        w += weighted_gram(arms, &soft.probs) * (0.5 * p);
    }
    w
}

/// `E_sets[max_x ||x||_{W^{-1}}]`, with `W` inverted on its range.
fn expected_max_norm(w: &Matrix, sets: &[&[Vector]]) -> f64 {
    let w_inv = psd_pinv(w, SPAN_TOL);
    let total: f64 = sets
        .iter()
        .map(|arms| {
            arms.iter()
                .map(|x| x.dot(&(&w_inv * x)).max(0.0).sqrt())
                .fold(0.0, f64::max)
        })
        .sum();
    total / sets.len() as f64
}

/// Learns a distributional optimal design from a sample of arm sets.
///
/// The sample is shuffled and split into a training half and a held-out
/// half. See the module documentation for the construction.
pub fn learn_distributional_design<A, G>(
    core_armsets: &[A],
    opts: &DistributionalOptions,
    rng: &mut G,
) -> Result<DistributionalDesign, DesignError>
where
    A: AsRef<[Vector]>,
    G: Rng + ?Sized,
{
    if !(opts.alpha > 0.0 && opts.alpha.is_finite()) {
        return Err(DesignError::InvalidAlpha(opts.alpha));
    }
    let s = core_armsets.len();
    if s < 2 {
        return Err(DesignError::TooFewArmSets(s));
    }
    let d = check_arms(core_armsets[0].as_ref())?;
    for set in core_armsets {
        let got = check_arms(set.as_ref())?;
        if got != d {
            return Err(DesignError::DimensionMismatch { expected: d, got });
        }
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.shuffle(rng);
    let n_train = s.div_ceil(2);
    let train: Vec<&[Vector]> = order[..n_train].iter().map(|&i| core_armsets[i].as_ref()).collect();
    let heldout: Vec<&[Vector]> = order[n_train..].iter().map(|&i| core_armsets[i].as_ref()).collect();

    let train_g: Vec<Matrix> = train.iter().map(|a| g_design_or_zero(a, &opts.design).1).collect();
    let heldout_g: Vec<Matrix> = heldout.iter().map(|a| g_design_or_zero(a, &opts.design).1).collect();

    // farthest-point greedy clustering
    let n_max = max_components(d).min(train.len());
    let mut centers = vec![0usize];
    let mut nearest: Vec<f64> = train_g.iter().map(|w| trace_norm(&(w - &train_g[0]))).collect();
    let mut assign = vec![0usize; train.len()];
    while centers.len() < n_max {
        let far = argmax(nearest.iter().copied()).expect("non-empty");
        if nearest[far] <= 1e-9 {
            break;
        }
        let c = centers.len();
        centers.push(far);
        for (i, w) in train_g.iter().enumerate() {
            let dist = trace_norm(&(w - &train_g[far]));
            if dist < nearest[i] {
                nearest[i] = dist;
                assign[i] = c;
            }
        }
    }
    let mut sums = vec![Matrix::zeros(d, d); centers.len()];
    let mut counts = vec![0usize; centers.len()];
    for (w, &c) in train_g.iter().zip(&assign) {
        sums[c] += w;
        counts[c] += 1;
    }
    let components: Vec<(f64, Matrix)> = sums
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n > 0)
        .map(|(sum, &n)| {
            let mean = sum / n as f64;
            (n as f64 / train.len() as f64, psd_pinv(&mean, SPAN_TOL))
        })
        .collect();

    let bound = validation_bound(d, opts.slack);
    let evaluate = |design: &DistributionalDesign| {
        let mut w = Matrix::zeros(d, d);
        for (arms, g) in train.iter().zip(&train_g) {
            w += mixture_design_matrix(design, g, arms);
        }
        w /= train.len() as f64;
        let sets = if heldout.is_empty() { &train } else { &heldout };
        expected_max_norm(&w, sets)
    };
    let mut design = DistributionalDesign {
        components,
        alpha: opts.alpha,
        heldout_bound: 0.0,
        fallback: false,
    };
    design.heldout_bound = evaluate(&design);
    if design.heldout_bound <= bound {
        return Ok(design);
    }

    let mut w_g = Matrix::zeros(d, d);
    for g in train_g.iter().chain(&heldout_g) {
        w_g += g;
    }
    w_g /= (train_g.len() + heldout_g.len()) as f64;
    let mut fallback = DistributionalDesign {
        components: vec![(1.0, psd_pinv(&w_g, SPAN_TOL))],
        alpha: opts.alpha,
        heldout_bound: 0.0,
        fallback: true,
    };
    fallback.heldout_bound = evaluate(&fallback);
    log::warn!(
        "distributional design failed validation ({:.3} > {:.3}); using single component",
        design.heldout_bound,
        bound
    );
    Ok(fallback)
}

/// Outcome of one draw from the mixture policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MixtureDraw {
    pub index: usize,
    /// True when the G-optimal branch was taken.
    pub g_branch: bool,
}

/// With probability 1/2 samples from `g_weights`, otherwise picks component
/// `i` with probability `p_i` and samples from its softmax policy.
pub fn mixture_sample<G: Rng + ?Sized>(
    design: &DistributionalDesign,
    g_weights: &DesignWeights,
    arms: &[Vector],
    rng: &mut G,
) -> MixtureDraw {
    mixture_sample_lazy(design, || g_weights.clone(), arms, rng)
}

/// [`mixture_sample`] that computes the G-optimal weights only when that
/// branch is taken.
pub fn mixture_sample_lazy<G, F>(design: &DistributionalDesign, g_weights: F, arms: &[Vector], rng: &mut G) -> MixtureDraw
where
    G: Rng + ?Sized,
    F: FnOnce() -> DesignWeights,
{
    if rng.random_bool(0.5) {
        return MixtureDraw {
            index: g_optimal_sample(&g_weights(), rng),
            g_branch: true,
        };
    }
    let masses: Vec<f64> = design.components.iter().map(|(p, _)| *p).collect();
    let i = sample_from(&masses, rng);
    let soft = softmax_matrix_policy(&design.components[i].1, design.alpha, arms)
        .expect("design alpha validated at construction");
    MixtureDraw {
        index: sample_from(&soft.probs, rng),
        g_branch: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(d: usize) -> Vec<Vector> {
        (0..d).map(|i| Vector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 })).collect()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    #[test]
    fn canonical_basis_gives_uniform_design() {
        for d in 1..=6 {
            let w = d_optimal_design(&basis(d), 0.05, 1000).unwrap();
            for &wi in &w.weights {
                assert_relative_eq!(wi, 1.0 / d as f64, epsilon = 1e-12);
            }
            assert_relative_eq!(w.g_value, d as f64, epsilon = 1e-10);
        }
    }

    #[test]
    fn single_arm_gets_all_weight() {
        let w = d_optimal_design(&[v(&[0.3, -0.4])], 0.05, 100).unwrap();
        assert_eq!(w.weights, vec![1.0]);
        assert_relative_eq!(w.g_value, 1.0, epsilon = 1e-12);
        assert_eq!(w.d_eff, 1);
    }

    #[test]
    fn zero_arms_are_rejected() {
        assert_eq!(d_optimal_design(&[v(&[0.0, 0.0])], 0.05, 10), Err(DesignError::ZeroArms));
        assert_eq!(d_optimal_design(&[], 0.05, 10), Err(DesignError::EmptyArmSet));
    }

    #[test]
    fn three_arm_example_against_simplex_grid() {
        let arms = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.9, 0.1])];
        let w = d_optimal_design(&arms, 0.05, 10_000).unwrap();
        // brute force over the 2-simplex at step 1e-3
        let mut best = f64::INFINITY;
        let n = 1000;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let ws = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
                // closed-form 2x2 inverse
                let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                for (x, w) in arms.iter().zip(ws) {
                    a += w * x[0] * x[0];
                    b += w * x[0] * x[1];
                    c += w * x[1] * x[1];
                }
                let det = a * c - b * b;
                if det <= 0.0 {
                    continue;
                }
                let g = arms
                    .iter()
                    .map(|x| (c * x[0] * x[0] - 2.0 * b * x[0] * x[1] + a * x[1] * x[1]) / det)
                    .fold(0.0, f64::max);
                best = best.min(g);
            }
        }
        assert_relative_eq!(best, 2.0, epsilon = 1e-3);
        assert!(w.g_value <= 2.0 * 1.05);
        assert!(w.g_value <= best * 1.05 + 1e-9);
        assert!(w.weights[2] <= w.weights[0]);
    }

    #[test]
    fn collinear_arms_are_handled_on_their_span() {
        let arms = vec![v(&[0.6, 0.8, 0.0]), v(&[-0.3, -0.4, 0.0]), v(&[0.0, 0.0, 0.0])];
        let w = d_optimal_design(&arms, 0.05, 100).unwrap();
        assert_eq!(w.d_eff, 1);
        assert!(w.g_value <= 1.05);
    }

    #[test]
    fn point_mass_sampling_is_deterministic() {
        let w = DesignWeights {
            weights: vec![1.0, 0.0, 0.0],
            g_value: 1.0,
            d_eff: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| g_optimal_sample(&w, &mut rng) == 0));
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::identity(1, 1);
        let p = softmax_matrix_policy(&m, 1.0, &[v(&[1.0]), v(&[0.5])]).unwrap();
        assert_relative_eq!(p.probs[0], 0.8, epsilon = 1e-15);
        assert_relative_eq!(p.probs[1], 0.2, epsilon = 1e-15);

        let flat = softmax_matrix_policy(&Matrix::identity(2, 2), 3.0, &basis(2)).unwrap();
        assert_eq!(flat.probs, vec![0.5, 0.5]);

        // scores 1.1 and 1.0 at alpha 200: p_max = 1 / (1 + 1.1^-200)
        let arms = vec![v(&[1.0]), v(&[(1.0 / 1.1f64).sqrt()])];
        let sharp = softmax_matrix_policy(&Matrix::identity(1, 1), 200.0, &arms).unwrap();
        let oracle = 1.0 / (1.0 + 1.1f64.powf(-200.0));
        assert_relative_eq!(sharp.probs[0], oracle, epsilon = 1e-12);
        assert!(sharp.probs[0] >= 0.99);
    }

    #[test]
    fn softmax_all_zero_scores_is_uniform_and_flagged() {
        let p = softmax_matrix_policy(&Matrix::zeros(2, 2), 2.0, &basis(2)).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn one_armset_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sets = vec![basis(3)];
        assert_eq!(
            learn_distributional_design(&sets, &DistributionalOptions::default(), &mut rng),
            Err(DesignError::TooFewArmSets(1))
        );
    }

    #[test]
    fn identical_canonical_sets_give_one_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sets = vec![basis(4); 10];
        let design = learn_distributional_design(&sets, &DistributionalOptions::default(), &mut rng).unwrap();
        assert_eq!(design.components.len(), 1);
        assert!(!design.fallback);
        // W = I / d so max ||x||_{W^{-1}} = sqrt(d)
        assert_relative_eq!(design.heldout_bound, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn component_count_limit() {
        assert_eq!(max_components(1), 1);
        assert_eq!(max_components(2), 6);
        assert_eq!(max_components(5), 33);
    }
}
