use super::{
    check_square, check_symmetric, cholesky, max_abs, norm_inf, solve, spectral_radius, symmetrize,
    Matrix, NumericsError, MAX_ITERATIONS,
};

/// Discrete-time LQR design.
#[derive(Debug, Clone, PartialEq)]
pub struct Lqr {
    pub k: Matrix,
    /// Stabilizing solution of the Riccati equation.
    pub p: Matrix,
    pub closed_loop: Matrix,
    pub spectral_radius: f64,
    pub iterations: usize,
}

/// `P - (AᵀPA - AᵀPB (R + BᵀPB)⁻¹ BᵀPA + Q)`, infinity norm.
pub fn riccati_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> f64 {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let Ok(k) = solve(&s, &(&bt_p * a), "Riccati gain") else {
        return f64::INFINITY;
    };
    let rhs = a.transpose() * p * a - a.transpose() * p * b * k + q;
    norm_inf(&(p - rhs))
}

/// Solves the discrete algebraic Riccati equation by structure-preserving
/// doubling and returns `K = (R + BᵀPB)⁻¹ BᵀPA`.
pub fn lqr_gain(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Lqr, NumericsError> {
    check_square(a, "LQR A")?;
    let n = a.nrows();
    let m = b.ncols();
    let expect = |what, mat: &Matrix, shape: (usize, usize)| {
        if mat.shape() != shape {
            Err(NumericsError::Dimension {
                what,
                expected: shape,
                got: mat.shape(),
            })
        } else {
            Ok(())
        }
    };
    expect("LQR B", b, (n, m))?;
    expect("LQR Q", q, (n, n))?;
    expect("LQR R", r, (m, m))?;
    check_symmetric(q)?;
    check_symmetric(r)?;
    if cholesky(q).is_none() || cholesky(r).is_none() {
        return Err(NumericsError::NotPositiveDefinite);
    }

    let eye = Matrix::identity(n, n);
    let mut ak = a.clone();
    let mut gk = b * solve(r, &b.transpose(), "LQR R")?;
    let mut hk = q.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let w = &eye + &gk * &hk;
        let w_a = solve(&w, &ak, "doubling step")?;
        let w_g = solve(&w, &gk, "doubling step")?;
        let a_next = &ak * &w_a;
        let g_next = symmetrize(&(&gk + &ak * w_g * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w_a));
        let delta = max_abs(&(&h_next - &hk));
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if !hk.iter().all(|v| v.is_finite()) {
            break;
        }
        if delta <= 1e-15 * max_abs(&hk).max(1.0) {
            converged = true;
            break;
        }
    }
    let p = hk;
    let residual = riccati_residual(a, b, q, r, &p);
    if !converged || !(residual <= 1e-9 * norm_inf(&p).max(1.0)) {
        return Err(NumericsError::NonConvergent { iterations, residual });
    }
    let bt_p = b.transpose() * &p;
    let k = solve(&(r + &bt_p * b), &(bt_p * a), "LQR gain")?;
    let closed_loop = a - b * &k;
    let rho = spectral_radius(&closed_loop)?;
    if rho >= 1.0 {
        return Err(NumericsError::Unstable(rho));
    }
    Ok(Lqr {
        k,
        p,
        closed_loop,
        spectral_radius: rho,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix;

    fn s(v: f64) -> Matrix {
        matrix(1, 1, &[v])
    }

    #[test]
    fn zero_dynamics_needs_no_control() {
        let l = lqr_gain(&s(0.0), &s(1.0), &s(1.0), &s(1.0)).unwrap();
        assert!((l.p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(l.k[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn golden_ratio() {
        let l = lqr_gain(&s(1.0), &s(1.0), &s(1.0), &s(1.0)).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((l.p[(0, 0)] - phi).abs() < 1e-9);
        assert!(riccati_residual(&s(1.0), &s(1.0), &s(1.0), &s(1.0), &l.p) < 1e-9);
    }

    #[test]
    fn uncontrollable_unstable_mode_fails() {
        let a = matrix(2, 2, &[1.5, 0.0, 0.0, 0.5]);
        let b = matrix(2, 1, &[0.0, 1.0]);
        assert!(lqr_gain(&a, &b, &Matrix::identity(2, 2), &s(1.0)).is_err());
    }
}
