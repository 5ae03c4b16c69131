//! Closed intervals and their extension to the expression language.
//!
//! Arithmetic is over the reals; endpoints are not rounded outward.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use thiserror::Error;

use crate::expr::{Expr, Scope};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("no interval extension for `{0}`")]
    Unsupported(String),
    #[error("divisor interval contains zero")]
    DivisionByZero,
    #[error("shape mismatch in `{op}`: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
}

/// Rounded result of `op(a, b)` and the sign of its rounding error.
type ErrFn = fn(f64, f64) -> (f64, f64);

fn sum_err(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn mul_err(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `a/b ≈ q` with remainder `a - q·b`; the error has the remainder's sign
/// over `b`'s.
fn div_err(a: f64, b: f64) -> (f64, f64) {
    let q = a / b;
    let r = (-q).mul_add(b, a);
    (q, if b > 0.0 { r } else { -r })
}

/// `op(a, b)` rounded down (`up = false`) or up. Exact results are kept.
fn round(a: f64, b: f64, op: ErrFn, up: bool) -> f64 {
    let (v, err) = op(a, b);
    if !v.is_finite() || err == 0.0 || err.is_nan() {
        return v;
    }
    match (up, err > 0.0) {
        (true, true) => v.next_up(),
        (false, false) => v.next_down(),
        _ => v,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[allow(clippy::should_implement_trait)]
impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan(), "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    /// `None` when the intersection is empty.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn widen(&self, by: f64) -> Interval {
        Interval::new(self.lo - by, self.hi + by)
    }

    pub fn add(self, o: Interval) -> Interval {
        Interval::new(round(self.lo, o.lo, sum_err, false), round(self.hi, o.hi, sum_err, true))
    }

    pub fn sub(self, o: Interval) -> Interval {
        self.add(o.neg())
    }

    pub fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }

    pub fn mul(self, o: Interval) -> Interval {
        let c = [(self.lo, o.lo), (self.lo, o.hi), (self.hi, o.lo), (self.hi, o.hi)];
        let lo = c.iter().map(|&(a, b)| round(a, b, mul_err, false)).fold(f64::INFINITY, f64::min);
        let hi = c.iter().map(|&(a, b)| round(a, b, mul_err, true)).fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    }

    /// `{x² : x ∈ self}`, tighter than `self.mul(self)` across zero.
    pub fn sqr(self) -> Interval {
        let m = self.lo.abs().max(self.hi.abs());
        let hi = round(m, m, mul_err, true);
        if self.lo <= 0.0 && self.hi >= 0.0 {
            Interval::new(0.0, hi)
        } else {
            let n = self.lo.abs().min(self.hi.abs());
            Interval::new(round(n, n, mul_err, false), hi)
        }
    }

    pub fn div(self, o: Interval) -> Result<Interval, IntervalError> {
        if o.lo <= 0.0 && o.hi >= 0.0 {
            return Err(IntervalError::DivisionByZero);
        }
        let c = [(self.lo, o.lo), (self.lo, o.hi), (self.hi, o.lo), (self.hi, o.hi)];
        let lo = c.iter().map(|&(a, b)| round(a, b, div_err, false)).fold(f64::INFINITY, f64::min);
        let hi = c.iter().map(|&(a, b)| round(a, b, div_err, true)).fold(f64::NEG_INFINITY, f64::max);
        Ok(Interval::new(lo, hi))
    }

    pub fn sin(self) -> Interval {
        if !(self.width() < TAU) {
            return Interval::new(-1.0, 1.0);
        }
        let (a, b) = (self.lo.sin(), self.hi.sin());
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        // Does [lo, hi] contain a point of the form c + 2kπ?
        let hits = |c: f64| {
            let k = ((self.lo - c) / TAU).ceil();
            c + k * TAU <= self.hi
        };
        if hits(FRAC_PI_2) {
            hi = 1.0;
        }
        if hits(-FRAC_PI_2) {
            lo = -1.0;
        }
        Interval::unit_clamped(lo, hi)
    }

    pub fn cos(self) -> Interval {
        if !(self.width() < TAU) {
            return Interval::new(-1.0, 1.0);
        }
        let (a, b) = (self.lo.cos(), self.hi.cos());
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        let hits = |c: f64| {
            let k = ((self.lo - c) / TAU).ceil();
            c + k * TAU <= self.hi
        };
        if hits(0.0) {
            hi = 1.0;
        }
        if hits(PI) {
            lo = -1.0;
        }
        Interval::unit_clamped(lo, hi)
    }

    /// Library sine and cosine are not correctly rounded; one ulp outward.
    fn unit_clamped(lo: f64, hi: f64) -> Interval {
        Interval::new(lo.next_down().max(-1.0), hi.next_up().min(1.0))
    }

    /// `min(max(x, lo), hi)`, monotone in every argument.
    pub fn sat(self, lo: Interval, hi: Interval) -> Interval {
        Interval::new(self.lo.max(lo.lo).min(hi.lo), self.hi.max(lo.hi).min(hi.hi))
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Column-major matrix of intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Interval>,
}

impl IntervalMatrix {
    pub fn from_matrix(m: &Matrix) -> Self {
        IntervalMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().map(|&v| Interval::point(v)).collect(),
        }
    }

    pub fn column(data: Vec<Interval>) -> Self {
        IntervalMatrix {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn scalar(i: Interval) -> Self {
        IntervalMatrix::column(vec![i])
    }

    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn get(&self, r: usize, c: usize) -> Interval {
        self.data[c * self.rows + r]
    }

    fn map(&self, f: impl Fn(Interval) -> Interval) -> Self {
        IntervalMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                data.push(self.get(r, c));
            }
        }
        IntervalMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

fn zip(
    op: &'static str,
    a: &IntervalMatrix,
    b: &IntervalMatrix,
    f: impl Fn(Interval, Interval) -> Interval,
) -> Result<IntervalMatrix, IntervalError> {
    if a.shape() == b.shape() {
        Ok(IntervalMatrix {
            rows: a.rows,
            cols: a.cols,
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    } else if a.is_scalar() {
        Ok(b.map(|y| f(a.data[0], y)))
    } else if b.is_scalar() {
        Ok(a.map(|x| f(x, b.data[0])))
    } else {
        Err(IntervalError::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        })
    }
}

fn product(a: &IntervalMatrix, b: &IntervalMatrix) -> Result<IntervalMatrix, IntervalError> {
    if a.is_scalar() {
        return Ok(b.map(|y| a.data[0].mul(y)));
    }
    if b.is_scalar() {
        return Ok(a.map(|x| x.mul(b.data[0])));
    }
    if a.cols != b.rows {
        return Err(IntervalError::Shape {
            op: "*",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut data = Vec::with_capacity(a.rows * b.cols);
    for c in 0..b.cols {
        for r in 0..a.rows {
            let mut acc = Interval::point(0.0);
            for k in 0..a.cols {
                acc = acc.add(a.get(r, k).mul(b.get(k, c)));
            }
            data.push(acc);
        }
    }
    Ok(IntervalMatrix {
        rows: a.rows,
        cols: b.cols,
        data,
    })
}

/// `vᵀv` for a column of intervals, using exact squares.
fn gram(v: &IntervalMatrix) -> IntervalMatrix {
    let acc = v.data.iter().fold(Interval::point(0.0), |acc, x| acc.add(x.sqr()));
    IntervalMatrix::scalar(acc)
}

fn concat(blocks: Vec<Vec<IntervalMatrix>>) -> Result<IntervalMatrix, IntervalError> {
    let mut rows_out: Vec<IntervalMatrix> = Vec::new();
    for row in blocks {
        let h = row[0].rows;
        if let Some(bad) = row.iter().find(|m| m.rows != h) {
            return Err(IntervalError::Shape {
                op: "[,]",
                left: row[0].shape(),
                right: bad.shape(),
            });
        }
        let mut data = Vec::new();
        let mut cols = 0;
        for m in &row {
            data.extend_from_slice(&m.data);
            cols += m.cols;
        }
        rows_out.push(IntervalMatrix { rows: h, cols, data });
    }
    let w = rows_out[0].cols;
    if let Some(bad) = rows_out.iter().find(|m| m.cols != w) {
        return Err(IntervalError::Shape {
            op: "[;]",
            left: rows_out[0].shape(),
            right: bad.shape(),
        });
    }
    let h: usize = rows_out.iter().map(|m| m.rows).sum();
    let mut data = Vec::with_capacity(h * w);
    for c in 0..w {
        for m in &rows_out {
            for r in 0..m.rows {
                data.push(m.get(r, c));
            }
        }
    }
    Ok(IntervalMatrix { rows: h, cols: w, data })
}

/// Interval extension of `e`. Program variables come from `vars`, the
/// remaining names from the point-valued `params`.
pub fn eval_interval(
    e: &Expr,
    vars: &BTreeMap<String, IntervalMatrix>,
    params: &dyn Scope,
) -> Result<IntervalMatrix, IntervalError> {
    let ev = |x: &Expr| eval_interval(x, vars, params);
    Ok(match e {
        Expr::Var(v) => match vars.get(v) {
            Some(m) => m.clone(),
            None => IntervalMatrix::from_matrix(params.get(v).ok_or_else(|| IntervalError::Unbound(v.clone()))?),
        },
        Expr::Const(m) => IntervalMatrix::from_matrix(m),
        Expr::Neg(a) => ev(a)?.map(Interval::neg),
        Expr::Add(a, b) => zip("+", &ev(a)?, &ev(b)?, Interval::add)?,
        Expr::Sub(a, b) => zip("-", &ev(a)?, &ev(b)?, Interval::sub)?,
        Expr::Mul(a, b) => match &**a {
            Expr::Transpose(inner) if inner == b => {
                let v = ev(b)?;
                if v.cols == 1 {
                    gram(&v)
                } else {
                    product(&v.transpose(), &v)?
                }
            }
            _ => product(&ev(a)?, &ev(b)?)?,
        },
        Expr::Div(a, b) => {
            let d = ev(b)?;
            if !d.is_scalar() {
                return Err(IntervalError::Shape {
                    op: "/",
                    left: (1, 1),
                    right: d.shape(),
                });
            }
            let d = d.data[0];
            let n = ev(a)?;
            let mut out = Vec::with_capacity(n.data.len());
            for x in &n.data {
                out.push(x.div(d)?);
            }
            IntervalMatrix {
                rows: n.rows,
                cols: n.cols,
                data: out,
            }
        }
        Expr::Transpose(a) => ev(a)?.transpose(),
        Expr::Sat { arg, lo, hi } => {
            let x = ev(arg)?;
            let l = ev(lo)?;
            let h = ev(hi)?;
            let lo_b = zip("sat", &x, &l, |x, l| x.sat(l, Interval::point(f64::INFINITY)))?;
            zip("sat", &lo_b, &h, |x, h| x.sat(Interval::point(f64::NEG_INFINITY), h))?
        }
        Expr::Sin(a) => ev(a)?.map(Interval::sin),
        Expr::Cos(a) => ev(a)?.map(Interval::cos),
        Expr::Apply(name, _) => return Err(IntervalError::Unsupported(format!("{name}(..)"))),
        Expr::Block(rows) => {
            let mut out = Vec::with_capacity(rows.len());
            for row in rows {
                out.push(row.iter().map(ev).collect::<Result<Vec<_>, _>>()?);
            }
            concat(out)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::NoFunctions;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi)
    }

    #[test]
    fn basic_operations() {
        assert_eq!(iv(1.0, 2.0).add(iv(-1.0, 3.0)), iv(0.0, 5.0));
        assert_eq!(iv(1.0, 2.0).sub(iv(-1.0, 3.0)), iv(-2.0, 3.0));
        assert_eq!(iv(-1.0, 2.0).mul(iv(-3.0, 1.0)), iv(-6.0, 3.0));
        assert_eq!(iv(-1.0, 2.0).sqr(), iv(0.0, 4.0));
        assert_eq!(iv(1.0, 2.0).div(iv(2.0, 4.0)).unwrap(), iv(0.25, 1.0));
        assert_eq!(iv(1.0, 2.0).div(iv(-1.0, 1.0)), Err(IntervalError::DivisionByZero));
    }

    #[test]
    fn trig_extrema() {
        let s = iv(0.0, PI).sin();
        assert_eq!(s.hi, 1.0);
        assert!(s.lo.abs() < 1e-15);
        let c = iv(3.0, 3.5).cos();
        assert_eq!(c.lo, -1.0);
        assert_eq!(iv(0.0, 7.0).sin(), iv(-1.0, 1.0));
    }

    #[test]
    fn sat_clamps_endpoints() {
        let c = iv(1.0, 1.0);
        assert_eq!(iv(-3.0, 0.5).sat(c.neg(), c), iv(-1.0, 0.5));
        assert_eq!(iv(2.0, 3.0).sat(c.neg(), c), iv(1.0, 1.0));
    }

    #[test]
    fn quadratic_form_is_nonnegative() {
        let e = Expr::parse("z'*z").unwrap();
        let mut vars = BTreeMap::new();
        vars.insert("z".to_string(), IntervalMatrix::column(vec![iv(-1.0, 1.0), iv(-0.5, 0.25)]));
        let r = eval_interval(&e, &vars, &BTreeMap::<String, Matrix>::new()).unwrap();
        assert_eq!(r.data[0], iv(0.0, 1.25));
    }

    #[test]
    fn point_boxes_agree_with_evaluation() {
        let e = Expr::parse("[a; 2*a]'*M*[a; sin(a)] - sat(a/3, -c, c)").unwrap();
        let mut params = BTreeMap::new();
        params.insert("M".to_string(), crate::numerics::matrix(2, 2, &[1.0, 2.0, 0.5, -1.0]));
        params.insert("c".to_string(), Matrix::from_element(1, 1, 0.1));
        let mut vars = BTreeMap::new();
        vars.insert("a".to_string(), IntervalMatrix::scalar(Interval::point(0.7)));
        let r = eval_interval(&e, &vars, &params).unwrap().data[0];
        let mut scope = params.clone();
        scope.insert("a".to_string(), Matrix::from_element(1, 1, 0.7));
        let v = e.eval_scalar(&scope, &NoFunctions).unwrap();
        assert!((r.lo - v).abs() < 1e-12 && (r.hi - v).abs() < 1e-12);
    }
}
