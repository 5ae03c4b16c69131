use super::VerifierError;
use crate::numerics::{solve_discrete_lyapunov, spectral_radius, Ellipsoid, Matrix, NumericsError, Vector};

/// Scale of the identity used as the Lyapunov right-hand side by default.
pub const DEFAULT_LYAPUNOV_Q: f64 = 1e-2;

/// Lyapunov ellipsoid of the closed loop `A - BK`: solves
/// `P = (A-BK)ᵀ P (A-BK) + Q` and rescales `P` so that every corner of
/// `initial_box` (half-widths, centered at 0) lies on or inside the level set.
pub fn synthesize_linear_invariant(
    a: &Matrix,
    b: &Matrix,
    k: &Matrix,
    lyap_q: Option<&Matrix>,
    initial_box: Option<&[f64]>,
) -> Result<Ellipsoid, VerifierError> {
    if b.nrows() != a.nrows() || k.shape() != (b.ncols(), a.ncols()) {
        return Err(NumericsError::Dimension {
            what: "closed loop A - BK",
            expected: (b.ncols(), a.ncols()),
            got: k.shape(),
        }
        .into());
    }
    let acl = a - b * k;
    let rho = spectral_radius(&acl)?;
    if rho >= 1.0 {
        return Err(VerifierError::Unstable(rho));
    }
    let n = a.nrows();
    let q = lyap_q
        .cloned()
        .unwrap_or_else(|| Matrix::identity(n, n) * DEFAULT_LYAPUNOV_Q);
    let p = solve_discrete_lyapunov(&acl, &q)?;
    let Some(half) = initial_box else {
        return Ok(p);
    };
    if half.len() != n {
        return Err(VerifierError::Dimension {
            what: "initial box",
            expected: n,
            got: half.len(),
        });
    }
    let corners: Vec<Vector> = (0..1usize << n)
        .map(|mask| Vector::from_fn(n, |i, _| if mask >> i & 1 == 1 { -half[i] } else { half[i] }))
        .collect();
    Ok(p.scaled_to_contain(&corners).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix;

    #[test]
    fn scalar_closed_form_before_scaling() {
        let p = synthesize_linear_invariant(&matrix(1, 1, &[0.5]), &matrix(1, 1, &[1.0]), &matrix(1, 1, &[0.0]), None, None)
            .unwrap();
        assert!((p.p()[(0, 0)] - 1e-2 / 0.75).abs() < 1e-15);
    }

    #[test]
    fn box_corner_touches_boundary() {
        let a = matrix(2, 2, &[0.9, 0.2, 0.0, 0.7]);
        let b = matrix(2, 1, &[0.0, 1.0]);
        let k = matrix(1, 2, &[0.1, 0.2]);
        let p = synthesize_linear_invariant(&a, &b, &k, None, Some(&[0.5, 2.0])).unwrap();
        let worst = [[0.5, 2.0], [0.5, -2.0], [-0.5, 2.0], [-0.5, -2.0]]
            .iter()
            .map(|c| p.value(&Vector::from_column_slice(c)))
            .fold(0.0, f64::max);
        assert!((worst - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unstable_loop_rejected() {
        let one = matrix(1, 1, &[1.0]);
        let zero = matrix(1, 1, &[0.0]);
        assert!(matches!(
            synthesize_linear_invariant(&one, &one, &zero, None, None),
            Err(VerifierError::Unstable(_))
        ));
    }
}
