use super::{check_symmetric, Matrix, NumericsError};

/// Smallest Cholesky pivot accepted as positive.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Lower-triangular `L` with `L Lᵀ = m`, or `None` when a pivot falls
/// at or below [`PIVOT_TOLERANCE`]. Only the lower triangle is read.
pub fn cholesky(m: &Matrix) -> Option<Matrix> {
    let n = m.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PIVOT_TOLERANCE) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Cholesky-based definiteness test. Asymmetric input is an error.
pub fn is_positive_definite(m: &Matrix) -> Result<bool, NumericsError> {
    check_symmetric(m)?;
    Ok(cholesky(m).is_some())
}

pub fn min_eigenvalue(m: &Matrix) -> Result<f64, NumericsError> {
    check_symmetric(m)?;
    if m.is_empty() {
        return Ok(f64::INFINITY);
    }
    Ok(super::symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix;

    #[test]
    fn identity_and_indefinite() {
        assert!(is_positive_definite(&Matrix::identity(4, 4)).unwrap());
        assert!(!is_positive_definite(&matrix(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap());
        assert!(is_positive_definite(&matrix(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
    }

    #[test]
    fn factor_reconstructs() {
        let m = matrix(3, 3, &[4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]);
        let l = cholesky(&m).unwrap();
        assert!((&l * l.transpose() - &m).abs().max() < 1e-14);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn tiny_pivot_rejected() {
        let m = matrix(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-13]);
        assert!(!is_positive_definite(&m).unwrap());
        assert!(min_eigenvalue(&matrix(2, 2, &[2.0, 0.0, 0.0, 3.0])).unwrap() == 2.0);
    }
}
