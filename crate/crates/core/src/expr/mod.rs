//! Scalar-and-matrix expression language shared by the model, the emitted
//! program, the contracts and the verification conditions.
//!
//! Every value is a dense matrix; scalars are `1x1`. Column vectors are
//! `n x 1`. Multiplication by a `1x1` operand is scalar multiplication,
//! otherwise it is the matrix product. Addition broadcasts `1x1` operands.

mod eval;
mod parse;
mod print;
mod shape;

use std::collections::{BTreeMap, BTreeSet};

use crate::numerics::Matrix;

pub use eval::{EvalError, Functions, Layered, NoFunctions, Scope};
pub use parse::ParseError;
pub use shape::{Shape, ShapeEnv, ShapeError, ShapeMap};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(String),
    Const(Matrix),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Transpose(Box<Expr>),
    /// Elementwise clamp of `arg` to `[lo, hi]`.
    Sat {
        arg: Box<Expr>,
        lo: Box<Expr>,
        hi: Box<Expr>,
    },
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    /// Call of a declared external function.
    Apply(String, Vec<Expr>),
    /// Block matrix `[a, b; c, d]`, rows separated by `;`.
    Block(Vec<Vec<Expr>>),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn scalar(v: f64) -> Self {
        Expr::Const(Matrix::from_element(1, 1, v))
    }

    pub fn constant(m: Matrix) -> Self {
        Expr::Const(m)
    }

    pub fn transpose(self) -> Self {
        Expr::Transpose(Box::new(self))
    }

    pub fn sat(arg: Expr, lo: Expr, hi: Expr) -> Self {
        Expr::Sat {
            arg: Box::new(arg),
            lo: Box::new(lo),
            hi: Box::new(hi),
        }
    }

    pub fn apply(name: impl Into<String>, args: Vec<Expr>) -> Self {
        Expr::Apply(name.into(), args)
    }

    /// `x' * m * x`
    pub fn quadratic_form(x: Expr, m: Expr) -> Self {
        x.clone().transpose() * m * x
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        parse::parse_expr(text)
    }

    /// Returns the scalar value if this is a `1x1` constant.
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Expr::Const(m) if m.nrows() == 1 && m.ncols() == 1 => Some(m[(0, 0)]),
            _ => None,
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Expr::Const(_))
    }

    /// Immediate children in evaluation order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Var(_) | Expr::Const(_) => vec![],
            Expr::Neg(a) | Expr::Transpose(a) | Expr::Sin(a) | Expr::Cos(a) => vec![a],
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => vec![a, b],
            Expr::Sat { arg, lo, hi } => vec![arg, lo, hi],
            Expr::Apply(_, args) => args.iter().collect(),
            Expr::Block(rows) => rows.iter().flatten().collect(),
        }
    }

    /// Rebuilds the node with every child replaced by `f(child)`.
    pub fn map_children<F: FnMut(&Expr) -> Expr>(&self, mut f: F) -> Expr {
        match self {
            Expr::Var(_) | Expr::Const(_) => self.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(f(a))),
            Expr::Transpose(a) => Expr::Transpose(Box::new(f(a))),
            Expr::Sin(a) => Expr::Sin(Box::new(f(a))),
            Expr::Cos(a) => Expr::Cos(Box::new(f(a))),
            Expr::Add(a, b) => Expr::Add(Box::new(f(a)), Box::new(f(b))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(f(a)), Box::new(f(b))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(f(a)), Box::new(f(b))),
            Expr::Div(a, b) => Expr::Div(Box::new(f(a)), Box::new(f(b))),
            Expr::Sat { arg, lo, hi } => Expr::Sat {
                arg: Box::new(f(arg)),
                lo: Box::new(f(lo)),
                hi: Box::new(f(hi)),
            },
            Expr::Apply(name, args) => Expr::Apply(name.clone(), args.iter().map(&mut f).collect()),
            Expr::Block(rows) => Expr::Block(
                rows.iter()
                    .map(|row| row.iter().map(&mut f).collect())
                    .collect(),
            ),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        if let Expr::Var(name) = self {
            out.insert(name.clone());
        }
        for c in self.children() {
            c.collect_vars(out);
        }
    }

    /// Names of external functions called anywhere in the expression.
    pub fn functions(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_functions(&mut out);
        out
    }

    fn collect_functions(&self, out: &mut BTreeSet<String>) {
        if let Expr::Apply(name, _) = self {
            out.insert(name.clone());
        }
        for c in self.children() {
            c.collect_functions(out);
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        match self {
            Expr::Var(v) => v == name,
            _ => self.children().into_iter().any(|c| c.mentions(name)),
        }
    }

    /// Replaces every occurrence of variable `name` with `with`.
    ///
    /// The language has no binders, so substitution is capture-free.
    pub fn subst(&self, name: &str, with: &Expr) -> Expr {
        match self {
            Expr::Var(v) if v == name => with.clone(),
            _ => self.map_children(|c| c.subst(name, with)),
        }
    }

    /// Simultaneous substitution.
    pub fn subst_all(&self, map: &BTreeMap<String, Expr>) -> Expr {
        match self {
            Expr::Var(v) => map.get(v).cloned().unwrap_or_else(|| self.clone()),
            _ => self.map_children(|c| c.subst_all(map)),
        }
    }

    /// Number of nodes, used to bound rewriting work.
    pub fn size(&self) -> usize {
        1 + self.children().into_iter().map(Expr::size).sum::<usize>()
    }

    /// Recognizes `x' * M * x` (or `x' * x`, with `M = I`) and returns `(x, M)`.
    pub fn as_quadratic_form(&self) -> Option<(&Expr, Option<&Expr>)> {
        let Expr::Mul(left, right) = self else {
            return None;
        };
        match left.as_ref() {
            Expr::Transpose(x) if x.as_ref() == right.as_ref() => Some((right, None)),
            Expr::Mul(xt, m) => match xt.as_ref() {
                Expr::Transpose(x) if x.as_ref() == right.as_ref() => Some((right, Some(m))),
                _ => None,
            },
            _ => None,
        }
    }
}

macro_rules! bin_op {
    ($trait:ident, $method:ident, $variant:ident) => {
        impl std::ops::$trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$variant(Box::new(self), Box::new(rhs))
            }
        }
    };
}

bin_op!(Add, add, Add);
bin_op!(Sub, sub, Sub);
bin_op!(Mul, mul, Mul);
bin_op!(Div, div, Div);

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

/// `lhs <= rhs` atoms joined by conjunction. Vector comparisons hold
/// componentwise; `1x1` sides broadcast.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Le(Expr, Expr),
    And(Vec<Predicate>),
}

impl Predicate {
    pub fn le(lhs: Expr, rhs: Expr) -> Self {
        Predicate::Le(lhs, rhs)
    }

    pub fn truth() -> Self {
        Predicate::And(Vec::new())
    }

    pub fn and(parts: Vec<Predicate>) -> Self {
        Predicate::And(parts)
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        parse::parse_predicate(text)
    }

    /// Flattened list of `(lhs, rhs)` atoms.
    pub fn atoms(&self) -> Vec<(&Expr, &Expr)> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<(&'a Expr, &'a Expr)>) {
        match self {
            Predicate::Le(l, r) => out.push((l, r)),
            Predicate::And(parts) => parts.iter().for_each(|p| p.collect_atoms(out)),
        }
    }

    pub fn map_exprs<F: FnMut(&Expr) -> Expr>(&self, f: &mut F) -> Predicate {
        match self {
            Predicate::Le(l, r) => Predicate::Le(f(l), f(r)),
            Predicate::And(parts) => Predicate::And(parts.iter().map(|p| p.map_exprs(f)).collect()),
        }
    }

    pub fn subst(&self, name: &str, with: &Expr) -> Predicate {
        self.map_exprs(&mut |e| e.subst(name, with))
    }

    pub fn subst_all(&self, map: &BTreeMap<String, Expr>) -> Predicate {
        self.map_exprs(&mut |e| e.subst_all(map))
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for (l, r) in self.atoms() {
            out.extend(l.free_vars());
            out.extend(r.free_vars());
        }
        out
    }

    pub fn functions(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for (l, r) in self.atoms() {
            out.extend(l.functions());
            out.extend(r.functions());
        }
        out
    }

    pub fn mentions(&self, name: &str) -> bool {
        self.atoms()
            .into_iter()
            .any(|(l, r)| l.mentions(name) || r.mentions(name))
    }

    /// Largest value of `lhs - rhs` over all atoms and components. The
    /// predicate holds iff the result is `<= 0`. An empty conjunction
    /// yields negative infinity.
    pub fn violation(&self, scope: &dyn Scope, funcs: &dyn Functions) -> Result<f64, EvalError> {
        let mut worst = f64::NEG_INFINITY;
        for (l, r) in self.atoms() {
            let lv = l.eval(scope, funcs)?;
            let rv = r.eval(scope, funcs)?;
            let d = eval::broadcast_sub(&lv, &rv)?;
            for v in d.iter() {
                if v.is_nan() {
                    return Err(EvalError::NonFinite("predicate".into()));
                }
                worst = worst.max(*v);
            }
        }
        Ok(worst)
    }

    pub fn holds(&self, scope: &dyn Scope, funcs: &dyn Functions) -> Result<bool, EvalError> {
        Ok(self.violation(scope, funcs)? <= 0.0)
    }

    /// Recognizes the unit level set `x' * M * x <= 1` (or `x' * x <= 1`).
    pub fn as_level_set(&self) -> Option<(&Expr, Option<&Expr>)> {
        let atoms = self.atoms();
        if atoms.len() != 1 {
            return None;
        }
        let (l, r) = atoms[0];
        if r.as_scalar() != Some(1.0) {
            return None;
        }
        l.as_quadratic_form()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_replaces_only_named_var() {
        let e = Expr::parse("z + dt*torque").unwrap();
        let s = e.subst("torque", &Expr::parse("a - b").unwrap());
        assert_eq!(s, Expr::parse("z + dt*(a - b)").unwrap());
        assert_eq!(e.subst("q", &Expr::scalar(1.0)), e);
    }

    #[test]
    fn quadratic_form_recognized() {
        let p = Predicate::parse("xtilde'*P*xtilde <= 1").unwrap();
        let (x, m) = p.as_level_set().unwrap();
        assert_eq!(x, &Expr::var("xtilde"));
        assert_eq!(m, Some(&Expr::var("P")));
        let p = Predicate::parse("z'*z <= 1").unwrap();
        let (x, m) = p.as_level_set().unwrap();
        assert_eq!(x, &Expr::var("z"));
        assert!(m.is_none());
        assert!(Predicate::parse("z'*y <= 1").unwrap().as_level_set().is_none());
    }

    #[test]
    fn free_vars_exclude_function_names() {
        let e = Expr::parse("f_func(x, u)' * dphi + sat(z, -c, c)").unwrap();
        let vars: Vec<_> = e.free_vars().into_iter().collect();
        assert_eq!(vars, ["c", "dphi", "u", "x", "z"]);
        assert_eq!(e.functions().into_iter().collect::<Vec<_>>(), ["f_func"]);
    }
}
