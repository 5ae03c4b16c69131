//! Syntactic normal form: sums of monomials with like-term cancellation.
//!
//! A monomial is a numeric coefficient, a multiset of scalar factors with
//! integer exponents (commutative) and an ordered list of matrix factors.
//! Sums are flattened and like monomials merged; products distribute only
//! over single-term sums, so quadratic forms such as `(z - w)'*(z - w)`
//! keep their shape instead of expanding. Interpreted functions with
//! constant arguments are folded.

use crate::expr::{Expr, NoFunctions, Predicate, Shape, ShapeEnv};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
struct Mono {
    coef: f64,
    /// Scalar factors and exponents, sorted by printed form; no zero exponents.
    scalars: Vec<(String, Expr, i32)>,
    /// Non-scalar factors in multiplication order.
    factors: Vec<Expr>,
}

impl Mono {
    fn unit() -> Mono {
        Mono {
            coef: 1.0,
            scalars: Vec::new(),
            factors: Vec::new(),
        }
    }

    fn scalar_atom(e: Expr) -> Mono {
        Mono {
            scalars: vec![(e.to_string(), e, 1)],
            ..Mono::unit()
        }
    }

    fn factor(e: Expr) -> Mono {
        Mono {
            factors: vec![e],
            ..Mono::unit()
        }
    }

    fn is_constant(&self) -> bool {
        self.scalars.is_empty() && self.factors.iter().all(Expr::is_const)
    }

    fn same_term(&self, other: &Mono) -> bool {
        self.scalars.len() == other.scalars.len()
            && self
                .scalars
                .iter()
                .zip(&other.scalars)
                .all(|(a, b)| a.2 == b.2 && a.1 == b.1)
            && self.factors == other.factors
    }
}

#[derive(Debug, Clone)]
struct Sum {
    terms: Vec<Mono>,
    shape: Option<Shape>,
}

impl Sum {
    fn single(m: Mono, shape: Option<Shape>) -> Sum {
        Sum {
            terms: vec![m],
            shape,
        }
    }

    fn zero(shape: Option<Shape>) -> Sum {
        Sum {
            terms: Vec::new(),
            shape,
        }
    }

    fn constant(&self) -> Option<Matrix> {
        match self.terms.as_slice() {
            [] => Some(zeros(self.shape)),
            [m] if m.is_constant() => {
                let mut v = m.factors.first().map(|f| const_of(f).clone()).unwrap_or_else(|| Matrix::from_element(1, 1, 1.0));
                v *= m.coef;
                Some(v)
            }
            _ => None,
        }
    }
}

fn zeros(shape: Option<Shape>) -> Matrix {
    let s = shape.unwrap_or(Shape::SCALAR);
    Matrix::zeros(s.rows, s.cols)
}

fn add_constants(a: &Matrix, b: &Matrix) -> Option<Matrix> {
    if a.shape() == b.shape() {
        Some(a + b)
    } else if b.len() == 1 {
        Some(a.add_scalar(b[(0, 0)]))
    } else if a.len() == 1 {
        Some(b.add_scalar(a[(0, 0)]))
    } else {
        None
    }
}

fn const_of(e: &Expr) -> &Matrix {
    match e {
        Expr::Const(m) => m,
        _ => unreachable!("checked by is_constant"),
    }
}

struct Simplifier<'a> {
    env: &'a dyn ShapeEnv,
}

impl Simplifier<'_> {
    fn shape(&self, e: &Expr) -> Option<Shape> {
        e.shape(self.env).ok()
    }

    fn is_scalar(&self, e: &Expr) -> bool {
        self.shape(e).is_some_and(|s| s.is_scalar())
    }

    fn atom(&self, e: Expr) -> Sum {
        let shape = self.shape(&e);
        if let Expr::Const(m) = &e {
            return self.constant(m.clone());
        }
        if shape.is_some_and(|s| s.is_scalar()) {
            Sum::single(Mono::scalar_atom(e), shape)
        } else {
            Sum::single(Mono::factor(e), shape)
        }
    }

    fn constant(&self, m: Matrix) -> Sum {
        let shape = Some(Shape::new(m.nrows(), m.ncols()));
        if m.iter().all(|v| *v == 0.0) {
            return Sum::zero(shape);
        }
        if m.len() == 1 {
            Sum::single(
                Mono {
                    coef: m[(0, 0)],
                    ..Mono::unit()
                },
                shape,
            )
        } else {
            Sum::single(Mono::factor(Expr::Const(m)), shape)
        }
    }

    fn norm(&self, e: &Expr) -> Sum {
        match e {
            Expr::Const(m) => self.constant(m.clone()),
            Expr::Var(_) => self.atom(e.clone()),
            Expr::Neg(a) => {
                let mut s = self.norm(a);
                if s.terms.len() > 1 {
                    let shape = s.shape;
                    return self.product(self.constant(Matrix::from_element(1, 1, -1.0)), s, shape);
                }
                s.terms.iter_mut().for_each(|t| t.coef = -t.coef);
                self.canonical(s)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                let mut s = self.norm(a);
                let mut r = self.norm(b);
                if matches!(e, Expr::Sub(..)) {
                    r.terms.iter_mut().for_each(|t| t.coef = -t.coef);
                }
                s.terms.extend(r.terms);
                s.shape = self.shape(e);
                self.canonical(s)
            }
            Expr::Mul(a, b) => {
                let (sa, sb) = (self.norm(a), self.norm(b));
                self.product(sa, sb, self.shape(e))
            }
            Expr::Div(a, b) => {
                let sa = self.norm(a);
                let sb = self.norm(b);
                match self.reciprocal(&sb, b) {
                    Some(inv) => self.product(sa, inv, self.shape(e)),
                    None => self.atom(Expr::Div(Box::new(self.build(&sa)), Box::new(self.build(&sb)))),
                }
            }
            Expr::Transpose(a) => {
                if self.is_scalar(a) {
                    return self.norm(a);
                }
                let s = self.norm(a);
                if let Some(c) = s.constant() {
                    return self.constant(c.transpose());
                }
                if s.terms.len() == 1 {
                    let m = &s.terms[0];
                    let t = Mono {
                        coef: m.coef,
                        scalars: m.scalars.clone(),
                        factors: m.factors.iter().rev().map(transpose_factor).collect(),
                    };
                    return self.canonical(Sum::single(t, self.shape(e)));
                }
                self.atom(Expr::Transpose(Box::new(self.build(&s))))
            }
            Expr::Sat { arg, lo, hi } => {
                let parts = [self.norm(arg), self.norm(lo), self.norm(hi)];
                let consts: Vec<Option<Matrix>> = parts.iter().map(Sum::constant).collect();
                let rebuilt = Expr::sat(self.build(&parts[0]), self.build(&parts[1]), self.build(&parts[2]));
                if consts.iter().all(Option::is_some) {
                    if let Ok(v) = rebuilt.eval(&std::collections::BTreeMap::new(), &NoFunctions) {
                        return self.constant(v);
                    }
                }
                self.atom(rebuilt)
            }
            Expr::Sin(a) | Expr::Cos(a) => {
                let s = self.norm(a);
                if let Some(c) = s.constant() {
                    let f = if matches!(e, Expr::Sin(_)) { f64::sin } else { f64::cos };
                    return self.constant(c.map(f));
                }
                let inner = Box::new(self.build(&s));
                self.atom(if matches!(e, Expr::Sin(_)) { Expr::Sin(inner) } else { Expr::Cos(inner) })
            }
            Expr::Apply(name, args) => {
                let args = args.iter().map(|a| simplify(a, self.env)).collect();
                self.atom(Expr::Apply(name.clone(), args))
            }
            Expr::Block(rows) => {
                let rows: Vec<Vec<Expr>> = rows
                    .iter()
                    .map(|r| r.iter().map(|x| simplify(x, self.env)).collect())
                    .collect();
                let block = Expr::Block(rows);
                if block.children().iter().all(|c| c.is_const()) {
                    if let Ok(v) = block.eval(&std::collections::BTreeMap::new(), &NoFunctions) {
                        return self.constant(v);
                    }
                }
                self.atom(block)
            }
        }
    }

    /// `1/b` as a single monomial when `b` is a nonzero scalar.
    fn reciprocal(&self, sb: &Sum, b: &Expr) -> Option<Sum> {
        if !self.is_scalar(b) || sb.terms.is_empty() {
            return None;
        }
        if let [m] = sb.terms.as_slice() {
            if m.factors.is_empty() && m.coef != 0.0 {
                let inv = Mono {
                    coef: 1.0 / m.coef,
                    scalars: m.scalars.iter().map(|(k, e, p)| (k.clone(), e.clone(), -p)).collect(),
                    factors: Vec::new(),
                };
                return Some(Sum::single(inv, Some(Shape::SCALAR)));
            }
        }
        let denom = self.build(sb);
        Some(Sum::single(
            Mono {
                scalars: vec![(denom.to_string(), denom, -1)],
                ..Mono::unit()
            },
            Some(Shape::SCALAR),
        ))
    }

    fn product(&self, a: Sum, b: Sum, shape: Option<Shape>) -> Sum {
        if a.terms.is_empty() || b.terms.is_empty() {
            return Sum::zero(shape);
        }
        let ma = self.as_mono(a);
        let mb = self.as_mono(b);
        let mut out = Mono {
            coef: ma.coef * mb.coef,
            scalars: ma.scalars,
            factors: ma.factors,
        };
        for (key, e, p) in mb.scalars {
            match out.scalars.iter_mut().find(|s| s.1 == e) {
                Some(s) => s.2 += p,
                None => out.scalars.push((key, e, p)),
            }
        }
        out.factors.extend(mb.factors);
        self.canonical(Sum::single(out, shape))
    }

    /// Collapses a multi-term sum into a single atom monomial.
    /// The atom's sign is normalised so its leading term is positive.
    fn as_mono(&self, mut s: Sum) -> Mono {
        if s.terms.len() == 1 {
            return s.terms.into_iter().next().expect("one term");
        }
        let sign = if s.terms.first().is_some_and(|t| t.coef < 0.0) {
            s.terms.iter_mut().for_each(|t| t.coef = -t.coef);
            -1.0
        } else {
            1.0
        };
        let e = self.build(&s);
        let m = if s.shape.is_some_and(|sh| sh.is_scalar()) {
            Mono::scalar_atom(e)
        } else {
            Mono::factor(e)
        };
        Mono { coef: sign, ..m }
    }

    fn canonical_mono(&self, mut m: Mono) -> Mono {
        m.scalars.retain(|s| s.2 != 0);
        m.scalars.sort_by(|a, b| a.0.cmp(&b.0));
        // Fold adjacent constant factors.
        let mut folded: Vec<Expr> = Vec::with_capacity(m.factors.len());
        for f in m.factors.drain(..) {
            match (folded.last_mut(), &f) {
                (Some(Expr::Const(prev)), Expr::Const(cur)) if prev.ncols() == cur.nrows() => {
                    *prev = &*prev * cur;
                }
                _ => folded.push(f),
            }
        }
        m.factors = folded;
        if let Some(Expr::Const(first)) = m.factors.first_mut() {
            if m.coef != 1.0 {
                *first *= m.coef;
                m.coef = 1.0;
            }
        }
        // A scalar-valued matrix chain is itself a scalar factor.
        if !m.factors.is_empty() {
            let chain = chain_expr(&m.factors);
            if self.is_scalar(&chain) {
                m.factors.clear();
                if let Expr::Const(c) = &chain {
                    m.coef *= c[(0, 0)];
                } else {
                    m.scalars.push((chain.to_string(), chain, 1));
                    m.scalars.sort_by(|a, b| a.0.cmp(&b.0));
                }
            }
        }
        m
    }

    fn canonical(&self, s: Sum) -> Sum {
        let mut terms: Vec<Mono> = Vec::new();
        let mut constant: Option<(usize, Matrix)> = None;
        let mut flat = Vec::with_capacity(s.terms.len());
        for t in s.terms {
            let sum_atom = match (t.scalars.as_slice(), t.factors.as_slice()) {
                ([(_, e, 1)], []) | ([], [e]) if t.coef.abs() == 1.0 && matches!(e, Expr::Add(..) | Expr::Sub(..)) => {
                    Some(e.clone())
                }
                _ => None,
            };
            match sum_atom {
                Some(e) => flat.extend(self.norm(&e).terms.into_iter().map(|m| Mono { coef: m.coef * t.coef, ..m })),
                None => flat.push(t),
            }
        }
        for t in flat {
            let t = self.canonical_mono(t);
            if t.coef == 0.0 {
                continue;
            }
            if t.is_constant() {
                let mut v = t.factors.first().map(|f| const_of(f).clone()).unwrap_or_else(|| Matrix::from_element(1, 1, 1.0));
                v *= t.coef;
                constant = match constant {
                    None => {
                        terms.push(Mono::unit());
                        Some((terms.len() - 1, v))
                    }
                    Some((at, acc)) => match add_constants(&acc, &v) {
                        Some(sum) => Some((at, sum)),
                        None => {
                            terms.push(t);
                            Some((at, acc))
                        }
                    },
                };
                continue;
            }
            match terms.iter_mut().find(|m| m.same_term(&t)) {
                Some(m) => m.coef += t.coef,
                None => terms.push(t),
            }
        }
        if let Some((at, v)) = constant {
            terms[at] = match self.constant(v).terms.pop() {
                Some(m) => m,
                None => Mono {
                    coef: 0.0,
                    ..Mono::unit()
                },
            };
        }
        terms.retain(|t| t.coef != 0.0);
        Sum {
            terms,
            shape: s.shape,
        }
    }

    fn build(&self, s: &Sum) -> Expr {
        let mut out: Option<Expr> = None;
        for t in &s.terms {
            out = Some(match out {
                None => build_mono(t, t.coef < 0.0),
                Some(acc) if t.coef < 0.0 => acc - build_mono(t, false),
                Some(acc) => acc + build_mono(t, false),
            });
        }
        out.unwrap_or_else(|| Expr::Const(zeros(s.shape)))
    }
}

fn chain_expr(factors: &[Expr]) -> Expr {
    factors
        .iter()
        .cloned()
        .reduce(|a, b| a * b)
        .expect("nonempty chain")
}

fn transpose_factor(f: &Expr) -> Expr {
    match f {
        Expr::Const(m) => Expr::Const(m.transpose()),
        Expr::Transpose(inner) => (**inner).clone(),
        _ => f.clone().transpose(),
    }
}

/// Prints `|coef| * num / den * factors`, negated when `negate` is set.
fn build_mono(m: &Mono, negate: bool) -> Expr {
    let c = m.coef.abs();
    let mut num: Vec<Expr> = Vec::new();
    let mut den: Vec<Expr> = Vec::new();
    for (_, e, p) in &m.scalars {
        let target = if *p > 0 { &mut num } else { &mut den };
        target.extend(std::iter::repeat_n(e.clone(), p.unsigned_abs() as usize));
    }
    let need_coef = c != 1.0 || (num.is_empty() && (!den.is_empty() || m.factors.is_empty()));
    if need_coef {
        num.insert(0, Expr::scalar(c));
    }
    let mut factors = m.factors.clone();
    if negate {
        let first = if !num.is_empty() { &mut num[0] } else { &mut factors[0] };
        let negated = match &*first {
            Expr::Const(v) => Expr::Const(-v.clone()),
            other => -other.clone(),
        };
        *first = negated;
    }
    let mut scalar = num.into_iter().reduce(|a, b| a * b);
    if let Some(d) = den.into_iter().reduce(|a, b| a * b) {
        scalar = Some(scalar.unwrap_or_else(|| Expr::scalar(1.0)) / d);
    }
    let mut out = scalar;
    for f in factors {
        out = Some(match out {
            None => f,
            Some(acc) => acc * f,
        });
    }
    out.expect("monomials have at least one factor")
}

/// Normal form of `e`. Shapes from `env` decide which factors commute;
/// factors of unknown shape are treated as matrices.
pub fn simplify(e: &Expr, env: &dyn ShapeEnv) -> Expr {
    let s = Simplifier { env };
    let sum = s.norm(e);
    s.build(&sum)
}

pub fn simplify_predicate(p: &Predicate, env: &dyn ShapeEnv) -> Predicate {
    p.map_exprs(&mut |e| simplify(e, env))
}
