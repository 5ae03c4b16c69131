//! Infix printing. The output reparses to the same tree.

use std::fmt::{self, Display, Formatter, Write};

use super::{Expr, Predicate};
use crate::numerics::Matrix;

pub(crate) fn fmt_number(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(_) => 3,
        Expr::Const(m) if m.len() == 1 && m[(0, 0)].is_sign_negative() => 3,
        Expr::Transpose(_) => 4,
        _ => 5,
    }
}

fn write_const(f: &mut Formatter<'_>, m: &Matrix) -> fmt::Result {
    if m.len() == 1 {
        return f.write_str(&fmt_number(m[(0, 0)]));
    }
    f.write_char('[')?;
    for r in 0..m.nrows() {
        if r > 0 {
            f.write_str("; ")?;
        }
        for c in 0..m.ncols() {
            if c > 0 {
                f.write_str(", ")?;
            }
            f.write_str(&fmt_number(m[(r, c)]))?;
        }
    }
    f.write_char(']')
}

fn write_at(f: &mut Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_args(f: &mut Formatter<'_>, args: &[&Expr]) -> fmt::Result {
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{a}")?;
    }
    Ok(())
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(name) => f.write_str(name),
            Expr::Const(m) => write_const(f, m),
            Expr::Neg(a) => {
                f.write_char('-')?;
                match a.as_ref() {
                    // `-2` would reparse as a literal rather than a negation.
                    Expr::Const(m) if m.len() == 1 && !m[(0, 0)].is_sign_negative() => {
                        write!(f, "({a})")
                    }
                    _ => write_at(f, a, 3),
                }
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                write_at(f, a, 1)?;
                f.write_str(if matches!(self, Expr::Add(..)) { " + " } else { " - " })?;
                write_at(f, b, 2)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                write_at(f, a, 2)?;
                f.write_char(if matches!(self, Expr::Mul(..)) { '*' } else { '/' })?;
                write_at(f, b, 3)
            }
            Expr::Transpose(a) => {
                write_at(f, a, 4)?;
                f.write_char('\'')
            }
            Expr::Sat { arg, lo, hi } => {
                if lo.as_scalar() == Some(-1.0) && hi.as_scalar() == Some(1.0) {
                    write!(f, "sat({arg})")
                } else {
                    write!(f, "sat({arg}, {lo}, {hi})")
                }
            }
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Apply(name, args) => {
                write!(f, "{name}(")?;
                write_args(f, &args.iter().collect::<Vec<_>>())?;
                f.write_char(')')
            }
            Expr::Block(rows) => {
                f.write_char('[')?;
                for (i, row) in rows.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write_args(f, &row.iter().collect::<Vec<_>>())?;
                }
                f.write_char(']')
            }
        }
    }
}

impl Display for Predicate {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        let atoms = self.atoms();
        if atoms.is_empty() {
            return f.write_str("true");
        }
        for (i, (l, r)) in atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(" && ")?;
            }
            write!(f, "{l} <= {r}")?;
        }
        Ok(())
    }
}
