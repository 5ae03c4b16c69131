use std::collections::BTreeMap;

use thiserror::Error;

use super::{Expr, Predicate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { rows: 1, cols: 1 };

    pub fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn vector(n: usize) -> Self {
        Shape { rows: n, cols: 1 }
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn transposed(&self) -> Self {
        Shape::new(self.cols, self.rows)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("unknown variable `{0}`")]
    UnknownVar(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{op}` cannot combine {left} and {right} in `{expr}`")]
    Mismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
        expr: String,
    },
}

/// Shape information for variables and external function results.
pub trait ShapeEnv {
    fn var(&self, name: &str) -> Option<Shape>;
    fn function(&self, name: &str, args: &[Shape]) -> Option<Shape>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShapeMap {
    pub vars: BTreeMap<String, Shape>,
    /// Result shape of each external function.
    pub functions: BTreeMap<String, Shape>,
}

impl ShapeMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_var(mut self, name: &str, shape: Shape) -> Self {
        self.vars.insert(name.to_string(), shape);
        self
    }

    pub fn with_function(mut self, name: &str, shape: Shape) -> Self {
        self.functions.insert(name.to_string(), shape);
        self
    }
}

impl ShapeEnv for ShapeMap {
    fn var(&self, name: &str) -> Option<Shape> {
        self.vars.get(name).copied()
    }

    fn function(&self, name: &str, _args: &[Shape]) -> Option<Shape> {
        self.functions.get(name).copied()
    }
}

impl Expr {
    pub fn shape(&self, env: &dyn ShapeEnv) -> Result<Shape, ShapeError> {
        let mismatch = |op, left, right| ShapeError::Mismatch {
            op,
            left,
            right,
            expr: self.to_string(),
        };
        match self {
            Expr::Var(name) => env.var(name).ok_or_else(|| ShapeError::UnknownVar(name.clone())),
            Expr::Const(m) => Ok(Shape::new(m.nrows(), m.ncols())),
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) => a.shape(env),
            Expr::Transpose(a) => Ok(a.shape(env)?.transposed()),
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                let (l, r) = (a.shape(env)?, b.shape(env)?);
                if l == r || r.is_scalar() {
                    Ok(l)
                } else if l.is_scalar() {
                    Ok(r)
                } else {
                    Err(mismatch(if matches!(self, Expr::Add(..)) { "+" } else { "-" }, l, r))
                }
            }
            Expr::Mul(a, b) => {
                let (l, r) = (a.shape(env)?, b.shape(env)?);
                if l.is_scalar() {
                    Ok(r)
                } else if r.is_scalar() {
                    Ok(l)
                } else if l.cols == r.rows {
                    Ok(Shape::new(l.rows, r.cols))
                } else {
                    Err(mismatch("*", l, r))
                }
            }
            Expr::Div(a, b) => {
                let (l, r) = (a.shape(env)?, b.shape(env)?);
                if r.is_scalar() {
                    Ok(l)
                } else {
                    Err(mismatch("/", l, r))
                }
            }
            Expr::Sat { arg, lo, hi } => {
                let s = arg.shape(env)?;
                for bound in [lo, hi] {
                    let b = bound.shape(env)?;
                    if b != s && !b.is_scalar() {
                        return Err(mismatch("sat", s, b));
                    }
                }
                Ok(s)
            }
            Expr::Apply(name, args) => {
                let shapes = args.iter().map(|a| a.shape(env)).collect::<Result<Vec<_>, _>>()?;
                env.function(name, &shapes)
                    .ok_or_else(|| ShapeError::UnknownFunction(name.clone()))
            }
            Expr::Block(rows) => {
                let mut total: Option<Shape> = None;
                for row in rows {
                    let mut acc: Option<Shape> = None;
                    for e in row {
                        let s = e.shape(env)?;
                        acc = Some(match acc {
                            None => s,
                            Some(a) if a.rows == s.rows => Shape::new(a.rows, a.cols + s.cols),
                            Some(a) => return Err(mismatch("[,]", a, s)),
                        });
                    }
                    let r = acc.expect("block rows are nonempty");
                    total = Some(match total {
                        None => r,
                        Some(t) if t.cols == r.cols => Shape::new(t.rows + r.rows, t.cols),
                        Some(t) => return Err(mismatch("[;]", t, r)),
                    });
                }
                Ok(total.expect("blocks are nonempty"))
            }
        }
    }
}

impl Predicate {
    /// Checks every atom; the two sides must agree up to scalar broadcast.
    pub fn check_shapes(&self, env: &dyn ShapeEnv) -> Result<(), ShapeError> {
        for (l, r) in self.atoms() {
            let (ls, rs) = (l.shape(env)?, r.shape(env)?);
            if ls != rs && !ls.is_scalar() && !rs.is_scalar() {
                return Err(ShapeError::Mismatch {
                    op: "<=",
                    left: ls,
                    right: rs,
                    expr: format!("{l} <= {r}"),
                });
            }
        }
        Ok(())
    }
}
