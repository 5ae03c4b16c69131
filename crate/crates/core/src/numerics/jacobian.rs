use super::{Matrix, NumericsError, Vector};

/// `1e-5 · max(1, ‖x0‖∞)`
pub fn default_step(x0: &Vector) -> f64 {
    1e-5 * x0.amax().max(1.0)
}

/// Central-difference Jacobian of `f` at `x0` with step `h`
/// (default [`default_step`]).
pub fn jacobian_fd1<E, F>(f: F, x0: &Vector, h: Option<f64>) -> Result<Matrix, E>
where
    E: From<NumericsError>,
    F: Fn(&Vector) -> Result<Vector, E>,
{
    let h = h.unwrap_or_else(|| default_step(x0));
    let check = |x: &Vector, y: Vector| -> Result<Vector, E> {
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(NumericsError::NonFinite(x.iter().copied().collect()).into())
        }
    };
    let mut cols = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[i] += h;
        xm[i] -= h;
        let fp = check(&xp, f(&xp)?)?;
        let fm = check(&xm, f(&xm)?)?;
        cols.push((fp - fm) / (2.0 * h));
    }
    if cols.is_empty() {
        let rows = check(x0, f(x0)?)?.len();
        return Ok(Matrix::zeros(rows, 0));
    }
    Ok(Matrix::from_columns(&cols))
}

/// Central-difference Jacobians `(∂f/∂x, ∂f/∂u)` at `(x0, u0)`. The step
/// defaults to [`default_step`] of `x0` and is shared by both arguments.
pub fn jacobian_fd<E, F>(f: F, x0: &Vector, u0: &Vector, h: Option<f64>) -> Result<(Matrix, Matrix), E>
where
    E: From<NumericsError>,
    F: Fn(&Vector, &Vector) -> Result<Vector, E>,
{
    let h = h.unwrap_or_else(|| default_step(x0));
    let n = x0.len();
    let z0 = Vector::from_iterator(n + u0.len(), x0.iter().chain(u0.iter()).copied());
    let j = jacobian_fd1(
        |z: &Vector| f(&z.rows(0, n).into_owned(), &z.rows(n, z.len() - n).into_owned()),
        &z0,
        Some(h),
    )?;
    Ok((j.columns(0, n).into_owned(), j.columns(n, u0.len()).into_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matrix, vector};

    #[test]
    fn linear_function_is_exact() {
        let m = matrix(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let nmat = matrix(2, 1, &[4.0, -1.0]);
        let (a, b) = jacobian_fd(
            |x: &Vector, u: &Vector| Ok::<_, NumericsError>(&m * x + &nmat * u),
            &vector(&[0.3, -2.0]),
            &vector(&[1.0]),
            None,
        )
        .unwrap();
        assert!((a - &m).abs().max() < 1e-9);
        assert!((b - &nmat).abs().max() < 1e-9);
    }

    #[test]
    fn sine_at_origin() {
        let a = jacobian_fd1(
            |x: &Vector| Ok::<_, NumericsError>(x.map(f64::sin)),
            &vector(&[0.0]),
            None,
        )
        .unwrap();
        assert!((a[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_reports_point() {
        let err = jacobian_fd1(
            |x: &Vector| Ok::<_, NumericsError>(x.map(|v| 1.0 / v)),
            &vector(&[0.0]),
            Some(0.0),
        )
        .unwrap_err();
        assert_eq!(err, NumericsError::NonFinite(vec![0.0]));
    }
}
