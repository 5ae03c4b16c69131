//! Dense linear algebra helpers and invariant synthesis.

mod definite;
mod ellipsoid;
mod jacobian;
mod lyapunov;
mod riccati;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use definite::{cholesky, is_positive_definite, min_eigenvalue, PIVOT_TOLERANCE};
pub use ellipsoid::{ellipsoid_affine_image, Ellipsoid};
pub use jacobian::{default_step, jacobian_fd, jacobian_fd1};
pub use lyapunov::solve_discrete_lyapunov;
pub use riccati::{lqr_gain, riccati_residual, Lqr};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Iteration cap shared by the doubling solvers.
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{what}: expected {expected:?}, got {got:?}")]
    Dimension {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("unstable system: spectral radius {0} >= 1")]
    Unstable(f64),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergent { iterations: usize, residual: f64 },
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("degenerate ellipsoid image: map has rank below its row count")]
    DegenerateImage,
    #[error("non-finite function value at {0:?}")]
    NonFinite(Vec<f64>),
}

pub fn matrix(rows: usize, cols: usize, row_major: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, row_major)
}

pub fn vector(values: &[f64]) -> Vector {
    Vector::from_column_slice(values)
}

/// Largest absolute row sum.
pub fn norm_inf(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Matrix) -> f64 {
    max_abs(&(m - m.transpose()))
}

/// Symmetry test scaled by the size of the entries.
pub fn check_symmetric(m: &Matrix) -> Result<(), NumericsError> {
    check_square(m, "symmetric matrix")?;
    let dev = asymmetry(m);
    if dev > 1e-12 * max_abs(m).max(1.0) {
        return Err(NumericsError::Asymmetric(dev));
    }
    Ok(())
}

pub fn check_square(m: &Matrix, what: &'static str) -> Result<(), NumericsError> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::Dimension {
            what,
            expected: (m.nrows(), m.nrows()),
            got: (m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

pub fn spectral_radius(a: &Matrix) -> Result<f64, NumericsError> {
    check_square(a, "spectral radius")?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// Eigenvalues as `(re, im)` pairs, in ascending lexicographic order.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<(f64, f64)>, NumericsError> {
    check_square(a, "eigenvalues")?;
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let mut out: Vec<(f64, f64)> = a.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
    out.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    Ok(out)
}

pub fn inverse(m: &Matrix, what: &'static str) -> Result<Matrix, NumericsError> {
    m.clone().try_inverse().ok_or(NumericsError::Singular(what))
}

/// Solves `m * X = rhs` by LU.
pub fn solve(m: &Matrix, rhs: &Matrix, what: &'static str) -> Result<Matrix, NumericsError> {
    m.clone().lu().solve(rhs).ok_or(NumericsError::Singular(what))
}
