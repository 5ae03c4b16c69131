use nalgebra::SymmetricEigen;

use super::{level_set_matrix, Context, Effort, Point, Status, Vc, Verdict, VerifierError, Witness, ELLIPSOID_TOL};
use crate::expr::Expr;
use crate::numerics::{cholesky, inverse, min_eigenvalue, symmetrize, Matrix, NumericsError};

/// Decides `{xᵀQx ≤ 1} ⊆ {xᵀPx ≤ 1}`, i.e. `P ⪯ Q`. A FALSIFIED verdict
/// carries the point `x` of the hypothesis boundary that maximizes `xᵀPx`.
pub fn check_ellipsoid_containment(q_hyp: &Matrix, p_concl: &Matrix) -> Result<Verdict, VerifierError> {
    if q_hyp.shape() != p_concl.shape() || q_hyp.nrows() != q_hyp.ncols() {
        return Err(VerifierError::Dimension {
            what: "containment",
            expected: q_hyp.nrows(),
            got: p_concl.nrows(),
        });
    }
    let q = symmetrize(q_hyp);
    let p = symmetrize(p_concl);
    let l = cholesky(&q).ok_or(NumericsError::NotPositiveDefinite)?;
    if cholesky(&p).is_none() {
        return Err(NumericsError::NotPositiveDefinite.into());
    }
    let gap = min_eigenvalue(&(&q - &p))?;
    let l_inv = inverse(&l, "containment")?;
    let m = symmetrize(&(&l_inv * &p * l_inv.transpose()));
    let eig = SymmetricEigen::new(m);
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let lambda = eig.eigenvalues[best];
    let mut effort = Effort {
        max_violation: Some(lambda - 1.0),
        ..Effort::default()
    };
    if gap >= -ELLIPSOID_TOL {
        return Ok(Verdict::verified(effort));
    }
    let w = eig.eigenvectors.column(best).into_owned();
    let mut x = l_inv.transpose() * w;
    let lead = x.iamax();
    if x[lead] < 0.0 {
        x = -x;
    }
    let hyp = (x.transpose() * &q * &x)[(0, 0)] - 1.0;
    let concl = (x.transpose() * &p * &x)[(0, 0)] - 1.0;
    effort.max_violation = Some(concl);
    if hyp > ELLIPSOID_TOL || concl <= 0.0 {
        return Ok(Verdict::unknown("containment witness failed re-evaluation", effort));
    }
    let mut point = Point::new();
    point.insert("x".into(), Matrix::from_column_slice(x.len(), 1, x.as_slice()));
    Ok(Verdict {
        status: Status::Falsified(Witness {
            point,
            hypothesis: hyp,
            conclusion: concl,
        }),
        effort,
    })
}

/// Splits a stacked vector value back into its variables.
fn split_point(x: &Expr, value: &Matrix, vc: &Vc) -> Option<Point> {
    let names: Vec<&str> = match x {
        Expr::Var(v) => return Some(Point::from([(v.clone(), value.clone())])),
        Expr::Block(rows) => rows
            .iter()
            .map(|r| match r.as_slice() {
                [Expr::Var(v)] => Some(v.as_str()),
                _ => None,
            })
            .collect::<Option<_>>()?,
        _ => return None,
    };
    let mut point = Point::new();
    let mut row = 0;
    for n in names {
        let len = vc.domain.get(n)?.intervals.len();
        point.insert(n.to_string(), value.rows(row, len).into_owned());
        row += len;
    }
    (row == value.nrows()).then_some(point)
}

pub(super) fn check_vc(vc: &Vc, ctx: &Context<'_>) -> Verdict {
    let sides = level_set_matrix(&vc.hypothesis, ctx.params).zip(level_set_matrix(&vc.conclusion, ctx.params));
    let Some(((xh, qh), (xc, pc))) = sides else {
        return Verdict::unknown("not a pair of constant ellipsoids", Effort::default());
    };
    if xh != xc {
        return Verdict::unknown("ellipsoids over different vectors", Effort::default());
    }
    let n = qh.as_ref().or(pc.as_ref()).map_or(0, |m| m.nrows());
    if n == 0 {
        return Verdict::unknown("ellipsoid dimension unknown", Effort::default());
    }
    let q = qh.unwrap_or_else(|| Matrix::identity(n, n));
    let p = pc.unwrap_or_else(|| Matrix::identity(n, n));
    match check_ellipsoid_containment(&q, &p) {
        Err(e) => Verdict::unknown(e.to_string(), Effort::default()),
        Ok(Verdict {
            status: Status::Falsified(w),
            effort,
        }) => match split_point(xh, &w.point["x"], vc) {
            Some(point) => Verdict::falsified(vc, point, ctx, effort),
            None => Verdict::unknown("cannot map containment witness to program variables", effort),
        },
        Ok(v) => v,
    }
}
