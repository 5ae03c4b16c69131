use super::{check_symmetric, cholesky, inverse, symmetrize, Matrix, NumericsError, Vector};

/// The set `{x : xᵀ P x ≤ 1}`.
///
/// Both the quadratic form `P` and the shape matrix `E` are stored. For a
/// full-dimensional ellipsoid `E = P⁻¹`. An ellipsoid produced by an
/// injective map into a larger space is flat: it lies in the range of `E`
/// and `P` is the pseudo-inverse of `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    p: Matrix,
    shape: Matrix,
    flat: bool,
}

impl Ellipsoid {
    /// Validates that `p` is symmetric positive definite.
    pub fn new(p: Matrix) -> Result<Self, NumericsError> {
        check_symmetric(&p)?;
        let p = symmetrize(&p);
        if cholesky(&p).is_none() {
            return Err(NumericsError::NotPositiveDefinite);
        }
        let shape = symmetrize(&inverse(&p, "ellipsoid")?);
        Ok(Ellipsoid {
            p,
            shape,
            flat: false,
        })
    }

    /// Builds the ellipsoid `{E^{1/2} v : |v| ≤ 1}` from a positive definite shape matrix.
    pub fn from_shape(shape: Matrix) -> Result<Self, NumericsError> {
        check_symmetric(&shape)?;
        let shape = symmetrize(&shape);
        if cholesky(&shape).is_none() {
            return Err(NumericsError::DegenerateImage);
        }
        let p = symmetrize(&inverse(&shape, "ellipsoid shape")?);
        Ok(Ellipsoid {
            p,
            shape,
            flat: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn shape(&self) -> &Matrix {
        &self.shape
    }

    pub fn into_p(self) -> Matrix {
        self.p
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }

    /// `xᵀ P x`
    pub fn value(&self, x: &Vector) -> f64 {
        (x.transpose() * &self.p * x)[(0, 0)]
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.value(x) <= 1.0 + tol
    }

    /// Divides `P` by `γ = max xᵀPx` over `points` so all of them lie inside.
    /// Returns the new ellipsoid and `γ`.
    pub fn scaled_to_contain(&self, points: &[Vector]) -> (Ellipsoid, f64) {
        let gamma = points.iter().map(|x| self.value(x)).fold(0.0, f64::max);
        if gamma <= 0.0 {
            return (self.clone(), 1.0);
        }
        (
            Ellipsoid {
                p: &self.p / gamma,
                shape: &self.shape * gamma,
                flat: self.flat,
            },
            gamma,
        )
    }

    /// Half-widths of the axis-aligned bounding box, `sqrt(E_ii)`.
    pub fn half_widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.shape[(i, i)].max(0.0).sqrt()).collect()
    }
}

/// Image of `e` under `y = L x`.
///
/// Wide or square `L`: `Q = (L E Lᵀ)⁻¹`, which requires `L E Lᵀ` to be
/// nonsingular. Tall `L` must be injective and gives the flat ellipsoid
/// `Q = L⁺ᵀ P L⁺` with `L⁺ = (LᵀL)⁻¹Lᵀ`.
pub fn ellipsoid_affine_image(e: &Ellipsoid, l: &Matrix) -> Result<Ellipsoid, NumericsError> {
    if l.ncols() != e.dim() {
        return Err(NumericsError::Dimension {
            what: "ellipsoid map",
            expected: (l.nrows(), e.dim()),
            got: l.shape(),
        });
    }
    let shape = symmetrize(&(l * &e.shape * l.transpose()));
    if l.nrows() <= l.ncols() {
        let l_shape = cholesky(&shape).ok_or(NumericsError::DegenerateImage)?;
        let l_inv = l_shape
            .solve_lower_triangular(&Matrix::identity(shape.nrows(), shape.nrows()))
            .ok_or(NumericsError::DegenerateImage)?;
        let p = symmetrize(&(l_inv.transpose() * l_inv));
        return Ok(Ellipsoid {
            p,
            shape,
            flat: false,
        });
    }
    if e.flat {
        return Err(NumericsError::DegenerateImage);
    }
    let gram = l.transpose() * l;
    if cholesky(&gram).is_none() {
        return Err(NumericsError::DegenerateImage);
    }
    let pinv = inverse(&gram, "ellipsoid map")? * l.transpose();
    let p = symmetrize(&(pinv.transpose() * &e.p * &pinv));
    Ok(Ellipsoid {
        p,
        shape,
        flat: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matrix, vector};

    #[test]
    fn scaling_map() {
        let e = Ellipsoid::new(Matrix::identity(2, 2)).unwrap();
        let q = ellipsoid_affine_image(&e, &(Matrix::identity(2, 2) * 2.0)).unwrap();
        assert!((q.p() - Matrix::identity(2, 2) * 0.25).abs().max() < 1e-15);
    }

    #[test]
    fn axis_projection() {
        let e = Ellipsoid::new(matrix(2, 2, &[4.0, 0.0, 0.0, 1.0])).unwrap();
        let q = ellipsoid_affine_image(&e, &matrix(1, 2, &[1.0, 0.0])).unwrap();
        assert!((q.p()[(0, 0)] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn tall_injective_is_exact_on_image() {
        let e = Ellipsoid::new(matrix(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let l = matrix(3, 2, &[1.0, 0.0, 0.0, 1.0, -0.5, 2.0]);
        let q = ellipsoid_affine_image(&e, &l).unwrap();
        assert!(q.is_flat());
        let x = vector(&[0.3, -0.7]);
        assert!((q.value(&(&l * &x)) - e.value(&x)).abs() < 1e-12);
        let a = matrix(2, 3, &[0.5, 0.1, 0.0, 0.0, 0.4, 0.2]);
        let back = ellipsoid_affine_image(&q, &a).unwrap();
        let direct = ellipsoid_affine_image(&e, &(&a * &l)).unwrap();
        assert!((back.p() - direct.p()).abs().max() < 1e-10);
    }

    #[test]
    fn rank_deficient_wide_map() {
        let e = Ellipsoid::new(Matrix::identity(2, 2)).unwrap();
        let l = matrix(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(ellipsoid_affine_image(&e, &l), Err(NumericsError::DegenerateImage));
    }

    #[test]
    fn scale_to_box_corners() {
        let e = Ellipsoid::new(Matrix::identity(2, 2)).unwrap();
        let corners = [vector(&[1.0, 2.0]), vector(&[-1.0, 0.5])];
        let (s, gamma) = e.scaled_to_contain(&corners);
        assert_eq!(gamma, 5.0);
        assert!((s.value(&corners[0]) - 1.0).abs() < 1e-15);
        assert_eq!(s.half_widths(), vec![5f64.sqrt(), 5f64.sqrt()]);
    }
}
