//! Small dense linear-algebra helpers shared by the estimators and policies.
//!
//! Everything here works on `nalgebra` dynamic matrices. Dimensions are tiny
//! (d <= 16 in practice) so clarity wins over blocking or SIMD tricks.

use nalgebra::{linalg::Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use thiserror::Error;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A symmetric positive definite matrix kept together with its Cholesky
/// factor and log-determinant.
///
/// Rank-one updates `M <- M + c x x^T` (c >= 0) update the factor in O(d^2)
/// and the log-determinant through `log det(M + c x x^T) = log det M +
/// log(1 + c x^T M^{-1} x)`.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    mat: Matrix,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl SpdMatrix {
    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self, LinalgError> {
        Self::new(Matrix::identity(dim, dim) * scale)
    }

    pub fn new(mat: Matrix) -> Result<Self, LinalgError> {
        let chol = Cholesky::new(mat.clone()).ok_or(LinalgError::NotPositiveDefinite)?;
        let log_det = chol_log_det(&chol);
        Ok(Self { mat, chol, log_det })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// `M^{-1} b` through the factor.
    pub fn solve(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    /// `x^T M^{-1} x`, the squared `M^{-1}`-norm of `x`.
    pub fn inv_quad(&self, x: &Vector) -> f64 {
        // ||L^{-1} x||^2 with M = L L^T
        let mut y = x.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut y);
        y.norm_squared().max(0.0)
    }

    /// `sqrt(x^T M^{-1} x)`.
    pub fn inv_norm(&self, x: &Vector) -> f64 {
        self.inv_quad(x).sqrt()
    }

    /// `M <- M + c x x^T` for `c >= 0`.
    pub fn rank_one_update(&mut self, x: &Vector, c: f64) {
        debug_assert!(c >= 0.0, "rank-one downdates are not supported");
        if c == 0.0 || x.iter().all(|&v| v == 0.0) {
            return;
        }
        let lev = self.inv_quad(x);
        self.log_det += (c * lev).ln_1p();
        self.mat.ger(c, x, x, 1.0);
        self.chol.rank_one_update(x, c);
    }

    /// Smallest eigenvalue of the stored matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.mat)
    }
}

fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum()
}

/// Log-determinant from a fresh factorization; `None` if not positive definite.
pub fn log_det_fresh(mat: &Matrix) -> Option<f64> {
    Cholesky::new(mat.clone()).map(|c| chol_log_det(&c))
}

pub fn min_eigenvalue(mat: &Matrix) -> f64 {
    let sym = (mat + mat.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `x^T M x`.
pub fn quad_form(mat: &Matrix, x: &Vector) -> f64 {
    x.dot(&(mat * x))
}

/// Index of the maximum, lowest index on ties. NaN entries never win.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Orthonormal basis (columns) of the span of `vectors`, relative threshold
/// `rel_tol` on the eigenvalues of their Gram matrix.
pub fn span_basis(vectors: &[Vector], rel_tol: f64) -> Matrix {
    let d = vectors.first().map_or(0, |v| v.len());
    let mut gram = Matrix::zeros(d, d);
    for v in vectors {
        gram.ger(1.0, v, v, 1.0);
    }
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Matrix::zeros(d, 0);
    }
    let keep: Vec<usize> = (0..d)
        .filter(|&i| eig.eigenvalues[i] > rel_tol * top)
        .collect();
    Matrix::from_fn(d, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
}

/// Pseudo-inverse of a symmetric PSD matrix; eigenvalues below
/// `rel_tol * max` are treated as zero.
pub fn psd_pinv(mat: &Matrix, rel_tol: f64) -> Matrix {
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let d = mat.nrows();
    let mut out = Matrix::zeros(d, d);
    if top <= 0.0 {
        return out;
    }
    for i in 0..d {
        let ev = eig.eigenvalues[i];
        if ev > rel_tol * top {
            let u = eig.eigenvectors.column(i);
            out += (u * u.transpose()) / ev;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vector {
        Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rank_one_updates_track_fresh_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [1usize, 3, 10] {
            let mut m = SpdMatrix::scaled_identity(d, 0.5).unwrap();
            let mut dense = Matrix::identity(d, d) * 0.5;
            for k in 0..1000 {
                let x = random_vec(&mut rng, d);
                let c = rng.random_range(0.0..2.0);
                m.rank_one_update(&x, c);
                dense += &x * x.transpose() * c;
                if k % 97 == 0 || k == 999 {
                    let fresh = log_det_fresh(&dense).unwrap();
                    assert!((m.log_det() - fresh).abs() < 1e-6);
                    let l = m.cholesky().l();
                    let rebuilt = &l * l.transpose();
                    let scale = dense.norm();
                    assert!((rebuilt - &dense).norm() / scale < 1e-8);
                }
            }
        }
    }

    #[test]
    fn inv_quad_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + Matrix::identity(3, 3) * 0.1;
        let x = random_vec(&mut rng, 3);
        let m = SpdMatrix::new(spd.clone()).unwrap();
        let inv = spd.try_inverse().unwrap();
        assert_relative_eq!(m.inv_quad(&x), quad_form(&inv, &x), max_relative = 1e-10);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax([1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax([f64::NAN, 0.0]), Some(1));
        assert_eq!(argmax(Vec::<f64>::new()), None);
    }

    #[test]
    fn span_basis_of_collinear_vectors_is_one_dimensional() {
        let v = vec![
            Vector::from_vec(vec![1.0, 1.0, 0.0]),
            Vector::from_vec(vec![-0.5, -0.5, 0.0]),
        ];
        let basis = span_basis(&v, 1e-10);
        assert_eq!(basis.ncols(), 1);
    }

    #[test]
    fn non_spd_is_rejected() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(SpdMatrix::new(m).unwrap_err(), LinalgError::NotPositiveDefinite);
    }
}
