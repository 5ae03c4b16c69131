use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::interval::{eval_interval, Interval, IntervalMatrix};
use super::VerifierError;
use crate::expr::Expr;
use crate::numerics::{Ellipsoid, Matrix, Vector};
use crate::vehicle::CarParams;

/// Componentwise ranges of the car signals implied by the certified sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub x: Vec<Interval>,
    pub u: Vec<Interval>,
    pub phi: Vec<Interval>,
    pub omega: Vec<Interval>,
}

/// What bound extraction starts from.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs<'a> {
    /// Ellipsoid on the state deviation `x - x_ss`.
    pub invariant: &'a Ellipsoid,
    /// Feedback `u = u_ss - K (x - x_ss)`.
    pub gain: &'a Matrix,
    pub x_ss: &'a Vector,
    pub u_ss: &'a Vector,
    /// Range of each component of `z = ω - φ`.
    pub z: &'a [Interval],
    /// Physical assumption on the slips. Required.
    pub slip: Option<&'a [Interval]>,
    pub slip_max: f64,
    pub car: &'a CarParams,
}

fn phi_exprs() -> &'static [Expr; 2] {
    static PHI: OnceLock<[Expr; 2]> = OnceLock::new();
    PHI.get_or_init(|| {
        let parse = |s: &str| Expr::parse(s).expect("static expression");
        [
            parse("(V*cos(beta - delta) + yaw*lf*sin(delta)) / ((1 + sF)*r)"),
            parse("V*cos(beta) / ((1 + sR)*r)"),
        ]
    })
}

/// Interval extension of the slip-to-wheel-speed map.
pub fn phi_interval(x: &[Interval], u: &[Interval], car: &CarParams) -> Result<Vec<Interval>, VerifierError> {
    if x.len() != 3 || u.len() != 2 {
        return Err(VerifierError::Dimension {
            what: "phi arguments",
            expected: 5,
            got: x.len() + u.len(),
        });
    }
    let scalar = |i: Interval| IntervalMatrix::scalar(i);
    let vars: BTreeMap<String, IntervalMatrix> = [
        ("V", x[0]),
        ("beta", x[1]),
        ("yaw", x[2]),
        ("sF", u[0]),
        ("sR", u[1]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), scalar(v)))
    .collect();
    let params: BTreeMap<String, Matrix> = [("delta", car.delta), ("lf", car.lf), ("r", car.r)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), Matrix::from_element(1, 1, v)))
        .collect();
    phi_exprs()
        .iter()
        .map(|e| {
            eval_interval(e, &vars, &params)
                .map(|m| m.data[0])
                .map_err(|err| VerifierError::Eval {
                    what: "phi bounds".into(),
                    message: err.to_string(),
                })
        })
        .collect()
}

/// Box around `x_ss` enclosing the invariant, slips from the feedback law
/// cut to the slip assumption, `φ` by interval evaluation and `ω = φ + z`.
pub fn extract_bounds(inp: &BoundInputs<'_>) -> Result<Bounds, VerifierError> {
    let n = inp.x_ss.len();
    if inp.invariant.dim() != n || inp.gain.shape() != (inp.u_ss.len(), n) {
        return Err(VerifierError::Dimension {
            what: "bound extraction",
            expected: n,
            got: inp.invariant.dim(),
        });
    }
    let slip = inp.slip.ok_or_else(|| VerifierError::MissingSlipFact("u".into()))?;
    if slip.len() != inp.u_ss.len() || inp.z.len() != inp.u_ss.len() {
        return Err(VerifierError::Dimension {
            what: "slip and manifold ranges",
            expected: inp.u_ss.len(),
            got: slip.len(),
        });
    }
    let x: Vec<Interval> = inp
        .invariant
        .half_widths()
        .iter()
        .zip(inp.x_ss.iter())
        .map(|(h, c)| Interval::new(c - h, c + h))
        .collect();
    let ku = inp.gain * inp.invariant.shape() * inp.gain.transpose();
    let physical = Interval::new(inp.car.slip_floor(), inp.slip_max);
    let mut u = Vec::with_capacity(slip.len());
    for i in 0..slip.len() {
        let h = ku[(i, i)].max(0.0).sqrt();
        let from_law = Interval::new(inp.u_ss[i] - h, inp.u_ss[i] + h);
        u.push(
            from_law
                .intersect(&slip[i])
                .and_then(|s| s.intersect(&physical))
                .ok_or_else(|| VerifierError::EmptyDomain(format!("u[{i}]")))?,
        );
    }
    let phi = phi_interval(&x, &u, inp.car)?;
    let omega = phi.iter().zip(inp.z).map(|(p, z)| p.add(*z)).collect();
    Ok(Bounds { x, u, phi, omega })
}
