use super::{
    check_square, cholesky, max_abs, norm_inf, spectral_radius, symmetrize, Ellipsoid, Matrix,
    NumericsError, MAX_ITERATIONS,
};

/// Solves `P = Aᵀ P A + Q` for a Schur-stable `A` by the doubling iteration
/// `P ← P + A_kᵀ P A_k`, `A_k ← A_k²`.
pub fn solve_discrete_lyapunov(a: &Matrix, q: &Matrix) -> Result<Ellipsoid, NumericsError> {
    check_square(a, "Lyapunov A")?;
    let n = a.nrows();
    if q.shape() != (n, n) {
        return Err(NumericsError::Dimension {
            what: "Lyapunov Q",
            expected: (n, n),
            got: q.shape(),
        });
    }
    super::check_symmetric(q)?;
    if cholesky(q).is_none() {
        return Err(NumericsError::NotPositiveDefinite);
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(NumericsError::Unstable(rho));
    }
    let mut p = q.clone();
    let mut ak = a.clone();
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let inc = ak.transpose() * &p * &ak;
        p += &inc;
        ak = &ak * &ak;
        if max_abs(&inc) <= 1e-17 * max_abs(&p) || max_abs(&ak) == 0.0 {
            converged = true;
            break;
        }
    }
    let p = symmetrize(&p);
    let residual = norm_inf(&(&p - a.transpose() * &p * a - q));
    if !converged || residual > 1e-9 * norm_inf(q) {
        return Err(NumericsError::NonConvergent {
            iterations: MAX_ITERATIONS,
            residual,
        });
    }
    Ellipsoid::new(p)
}
