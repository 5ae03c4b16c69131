use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::Expr;
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("shape mismatch in `{op}`: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("function `{name}` failed: {message}")]
    Function { name: String, message: String },
}

/// Variable environment for evaluation.
pub trait Scope {
    fn get(&self, name: &str) -> Option<&Matrix>;
}

impl Scope for BTreeMap<String, Matrix> {
    fn get(&self, name: &str) -> Option<&Matrix> {
        BTreeMap::get(self, name)
    }
}

impl Scope for HashMap<String, Matrix> {
    fn get(&self, name: &str) -> Option<&Matrix> {
        HashMap::get(self, name)
    }
}

/// Looks names up in `.0` first, then in `.1`.
pub struct Layered<'a>(pub &'a dyn Scope, pub &'a dyn Scope);

impl Scope for Layered<'_> {
    fn get(&self, name: &str) -> Option<&Matrix> {
        self.0.get(name).or_else(|| self.1.get(name))
    }
}

/// Implementations of the external functions an expression may call.
pub trait Functions: Send + Sync {
    fn call(&self, name: &str, args: &[Matrix]) -> Result<Matrix, EvalError>;
}

pub struct NoFunctions;

impl Functions for NoFunctions {
    fn call(&self, name: &str, _args: &[Matrix]) -> Result<Matrix, EvalError> {
        Err(EvalError::UnknownFunction(name.to_string()))
    }
}

fn dims(m: &Matrix) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

fn is_scalar(m: &Matrix) -> bool {
    m.nrows() == 1 && m.ncols() == 1
}

fn zip_broadcast(
    op: &'static str,
    a: &Matrix,
    b: &Matrix,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Matrix, EvalError> {
    if dims(a) == dims(b) {
        Ok(a.zip_map(b, f))
    } else if is_scalar(a) {
        let s = a[(0, 0)];
        Ok(b.map(|v| f(s, v)))
    } else if is_scalar(b) {
        let s = b[(0, 0)];
        Ok(a.map(|v| f(v, s)))
    } else {
        Err(EvalError::Shape {
            op,
            left: dims(a),
            right: dims(b),
        })
    }
}

pub(crate) fn broadcast_sub(a: &Matrix, b: &Matrix) -> Result<Matrix, EvalError> {
    zip_broadcast("-", a, b, |x, y| x - y)
}

pub(crate) fn broadcast_add(a: &Matrix, b: &Matrix) -> Result<Matrix, EvalError> {
    zip_broadcast("+", a, b, |x, y| x + y)
}

/// Matrix product, or scalar scaling when either side is `1x1`.
pub(crate) fn product(a: &Matrix, b: &Matrix) -> Result<Matrix, EvalError> {
    if is_scalar(a) {
        Ok(b * a[(0, 0)])
    } else if is_scalar(b) {
        Ok(a * b[(0, 0)])
    } else if a.ncols() == b.nrows() {
        Ok(a * b)
    } else {
        Err(EvalError::Shape {
            op: "*",
            left: dims(a),
            right: dims(b),
        })
    }
}

pub(crate) fn hcat_vcat(blocks: &[Vec<Matrix>]) -> Result<Matrix, EvalError> {
    let mut rows = Vec::with_capacity(blocks.len());
    for row in blocks {
        let h = row[0].nrows();
        let mut w = 0;
        for m in row {
            if m.nrows() != h {
                return Err(EvalError::Shape {
                    op: "[,]",
                    left: dims(&row[0]),
                    right: dims(m),
                });
            }
            w += m.ncols();
        }
        let mut out = Matrix::zeros(h, w);
        let mut c = 0;
        for m in row {
            out.view_mut((0, c), dims(m)).copy_from(m);
            c += m.ncols();
        }
        rows.push(out);
    }
    let w = rows[0].ncols();
    let mut h = 0;
    for m in &rows {
        if m.ncols() != w {
            return Err(EvalError::Shape {
                op: "[;]",
                left: dims(&rows[0]),
                right: dims(m),
            });
        }
        h += m.nrows();
    }
    let mut out = Matrix::zeros(h, w);
    let mut r = 0;
    for m in &rows {
        out.view_mut((r, 0), dims(m)).copy_from(m);
        r += m.nrows();
    }
    Ok(out)
}

impl Expr {
    pub fn eval(&self, scope: &dyn Scope, funcs: &dyn Functions) -> Result<Matrix, EvalError> {
        let ev = |e: &Expr| e.eval(scope, funcs);
        match self {
            Expr::Var(name) => scope
                .get(name)
                .cloned()
                .ok_or_else(|| EvalError::Unbound(name.clone())),
            Expr::Const(m) => Ok(m.clone()),
            Expr::Neg(a) => Ok(-ev(a)?),
            Expr::Add(a, b) => broadcast_add(&ev(a)?, &ev(b)?),
            Expr::Sub(a, b) => broadcast_sub(&ev(a)?, &ev(b)?),
            Expr::Mul(a, b) => product(&ev(a)?, &ev(b)?),
            Expr::Div(a, b) => {
                let num = ev(a)?;
                let den = ev(b)?;
                if !is_scalar(&den) {
                    return Err(EvalError::Shape {
                        op: "/",
                        left: dims(&num),
                        right: dims(&den),
                    });
                }
                let d = den[(0, 0)];
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                Ok(num / d)
            }
            Expr::Transpose(a) => Ok(ev(a)?.transpose()),
            Expr::Sat { arg, lo, hi } => {
                let v = ev(arg)?;
                let lo = ev(lo)?;
                let hi = ev(hi)?;
                let clamped = zip_broadcast("sat", &v, &lo, f64::max)?;
                zip_broadcast("sat", &clamped, &hi, f64::min)
            }
            Expr::Sin(a) => Ok(ev(a)?.map(f64::sin)),
            Expr::Cos(a) => Ok(ev(a)?.map(f64::cos)),
            Expr::Apply(name, args) => {
                let vals = args.iter().map(ev).collect::<Result<Vec<_>, _>>()?;
                funcs.call(name, &vals)
            }
            Expr::Block(rows) => {
                let vals = rows
                    .iter()
                    .map(|row| row.iter().map(ev).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<Vec<_>, _>>()?;
                hcat_vcat(&vals)
            }
        }
    }

    /// Evaluates to a plain number; the expression must be `1x1`.
    pub fn eval_scalar(&self, scope: &dyn Scope, funcs: &dyn Functions) -> Result<f64, EvalError> {
        let m = self.eval(scope, funcs)?;
        if !is_scalar(&m) {
            return Err(EvalError::Shape {
                op: "scalar",
                left: dims(&m),
                right: (1, 1),
            });
        }
        Ok(m[(0, 0)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope(pairs: &[(&str, Matrix)]) -> BTreeMap<String, Matrix> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn quadratic_form_value() {
        let s = scope(&[
            ("x", Matrix::from_column_slice(2, 1, &[1.0, 2.0])),
            ("P", Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])),
        ]);
        let v = Expr::parse("x'*P*x").unwrap().eval_scalar(&s, &NoFunctions).unwrap();
        assert_eq!(v, 14.0);
    }

    #[test]
    fn scalar_broadcast_and_sat() {
        let s = scope(&[("z", Matrix::from_column_slice(2, 1, &[2.0, -0.5]))]);
        let v = Expr::parse("sat(z) + 1").unwrap().eval(&s, &NoFunctions).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 0.5]);
        let w = Expr::parse("2*z/4").unwrap().eval(&s, &NoFunctions).unwrap();
        assert_eq!(w.as_slice(), &[1.0, -0.25]);
    }

    #[test]
    fn block_concatenation() {
        let s = scope(&[
            ("x", Matrix::from_column_slice(2, 1, &[1.0, 2.0])),
            ("u", Matrix::from_element(1, 1, 3.0)),
        ]);
        let v = Expr::parse("[x; u]").unwrap().eval(&s, &NoFunctions).unwrap();
        assert_eq!(dims(&v), (3, 1));
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0]);
        assert!(Expr::parse("[x, u]").unwrap().eval(&s, &NoFunctions).is_err());
    }

    #[test]
    fn errors() {
        let s = scope(&[("x", Matrix::from_column_slice(2, 1, &[1.0, 2.0]))]);
        assert_eq!(
            Expr::parse("y").unwrap().eval(&s, &NoFunctions),
            Err(EvalError::Unbound("y".into()))
        );
        assert!(matches!(
            Expr::parse("x*x").unwrap().eval(&s, &NoFunctions),
            Err(EvalError::Shape { .. })
        ));
        assert_eq!(
            Expr::parse("1/(x'*x - 5)").unwrap().eval(&s, &NoFunctions),
            Err(EvalError::DivisionByZero)
        );
        assert!(matches!(
            Expr::parse("g(x)").unwrap().eval(&s, &NoFunctions),
            Err(EvalError::UnknownFunction(_))
        ));
    }
}
