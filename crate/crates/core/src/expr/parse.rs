use thiserror::Error;

use super::{Expr, Predicate};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at byte {pos}")]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Quote,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Le,
    Ge,
    AndAnd,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '\'' => Tok::Quote,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            '<' | '>' => {
                // `<` and `>` are read as their non-strict forms: all sets are closed.
                let ge = c == '>';
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                }
                if ge {
                    Tok::Ge
                } else {
                    Tok::Le
                }
            }
            '&' => {
                if bytes.get(i + 1) != Some(&b'&') {
                    return Err(err(i, "expected `&&`"));
                }
                i += 1;
                Tok::AndAnd
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                while j < bytes.len() && ((bytes[j] as char).is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && (bytes[k] as char).is_ascii_digit() {
                        while k < bytes.len() && (bytes[k] as char).is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let lit = &text[i..j];
                let v: f64 = lit
                    .parse()
                    .map_err(|_| err(i, &format!("bad number `{lit}`")))?;
                i = j;
                out.push((start, Tok::Num(v)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < bytes.len() && ((bytes[j] as char).is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push((start, Tok::Ident(text[i..j].to_string())));
                i = j;
                continue;
            }
            other => return Err(err(i, &format!("unexpected character `{other}`"))),
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

fn err(pos: usize, message: &str) -> ParseError {
    ParseError {
        pos,
        message: message.to_string(),
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: tokenize(text)?,
            pos: 0,
            end: text.len(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), ParseError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(err(self.here(), &format!("expected {what}")))
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            Err(err(self.here(), "unexpected trailing input"))
        } else {
            Ok(())
        }
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let mut parts = vec![self.comparison()?];
        while self.eat(&Tok::AndAnd) {
            parts.push(self.comparison()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Predicate::And(parts)
        })
    }

    fn comparison(&mut self) -> Result<Predicate, ParseError> {
        if let Some(Tok::Ident(name)) = self.peek() {
            if name == "true" {
                self.pos += 1;
                return Ok(Predicate::truth());
            }
        }
        let lhs = self.expr()?;
        match self.bump() {
            Some(Tok::Le) => Ok(Predicate::Le(lhs, self.expr()?)),
            Some(Tok::Ge) => {
                let rhs = self.expr()?;
                Ok(Predicate::Le(rhs, lhs))
            }
            _ => Err(err(self.here(), "expected `<=` or `>=`")),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            if self.eat(&Tok::Plus) {
                acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
            } else if self.eat(&Tok::Minus) {
                acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat(&Tok::Star) {
                acc = Expr::Mul(Box::new(acc), Box::new(self.unary()?));
            } else if self.eat(&Tok::Slash) {
                acc = Expr::Div(Box::new(acc), Box::new(self.unary()?));
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(&Tok::Minus) {
            // A minus sign directly on a literal is part of the literal.
            if let Some(Tok::Num(v)) = self.peek() {
                let v = *v;
                self.pos += 1;
                return self.postfix(Expr::scalar(-v));
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let atom = self.primary()?;
        self.postfix(atom)
    }

    fn postfix(&mut self, mut e: Expr) -> Result<Expr, ParseError> {
        while self.eat(&Tok::Quote) {
            e = Expr::Transpose(Box::new(e));
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::scalar(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::LBracket) => self.block(at),
            Some(Tok::Ident(name)) => {
                if self.eat(&Tok::LParen) {
                    let mut args = Vec::new();
                    if !self.eat(&Tok::RParen) {
                        loop {
                            args.push(self.expr()?);
                            if self.eat(&Tok::RParen) {
                                break;
                            }
                            self.expect(&Tok::Comma, "`,` or `)`")?;
                        }
                    }
                    call(&name, args, at)
                } else {
                    Ok(Expr::Var(name))
                }
            }
            _ => Err(err(at, "expected an expression")),
        }
    }

    fn block(&mut self, at: usize) -> Result<Expr, ParseError> {
        let mut rows: Vec<Vec<Expr>> = vec![Vec::new()];
        if self.eat(&Tok::RBracket) {
            return Err(err(at, "empty matrix literal"));
        }
        loop {
            rows.last_mut().unwrap().push(self.expr()?);
            if self.eat(&Tok::Comma) {
                continue;
            }
            if self.eat(&Tok::Semi) {
                rows.push(Vec::new());
                continue;
            }
            self.expect(&Tok::RBracket, "`]`")?;
            break;
        }
        Ok(fold_block(rows))
    }
}

/// A block whose entries are all scalar literals is a constant matrix.
pub(crate) fn fold_block(rows: Vec<Vec<Expr>>) -> Expr {
    let ncols = rows[0].len();
    let rect = rows.iter().all(|r| r.len() == ncols);
    if rect {
        let scalars: Option<Vec<f64>> = rows.iter().flatten().map(Expr::as_scalar).collect();
        if let Some(vals) = scalars {
            return Expr::Const(Matrix::from_row_slice(rows.len(), ncols, &vals));
        }
    }
    Expr::Block(rows)
}

fn call(name: &str, mut args: Vec<Expr>, at: usize) -> Result<Expr, ParseError> {
    let arity = |n: usize| -> Result<(), ParseError> {
        if args.len() == n {
            Ok(())
        } else {
            Err(err(at, &format!("`{name}` takes {n} argument(s), got {}", args.len())))
        }
    };
    match name {
        "sin" | "cos" => {
            arity(1)?;
            let a = Box::new(args.pop().unwrap());
            Ok(if name == "sin" { Expr::Sin(a) } else { Expr::Cos(a) })
        }
        "sat" => match args.len() {
            1 => Ok(Expr::sat(args.pop().unwrap(), Expr::scalar(-1.0), Expr::scalar(1.0))),
            3 => {
                let hi = args.pop().unwrap();
                let lo = args.pop().unwrap();
                Ok(Expr::sat(args.pop().unwrap(), lo, hi))
            }
            n => Err(err(at, &format!("`sat` takes 1 or 3 arguments, got {n}"))),
        },
        _ => Ok(Expr::Apply(name.to_string(), args)),
    }
}

pub(super) fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

pub(super) fn parse_predicate(text: &str) -> Result<Predicate, ParseError> {
    let mut p = Parser::new(text)?;
    let e = p.predicate()?;
    p.finish()?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expr("a - b - c*d/e").unwrap();
        let expected = (Expr::var("a") - Expr::var("b"))
            - (Expr::var("c") * Expr::var("d")) / Expr::var("e");
        assert_eq!(e, expected);
    }

    #[test]
    fn unary_minus_binds_tighter_than_product() {
        assert_eq!(
            parse_expr("-K*x").unwrap(),
            (-Expr::var("K")) * Expr::var("x")
        );
        assert_eq!(parse_expr("-2*x").unwrap(), Expr::scalar(-2.0) * Expr::var("x"));
    }

    #[test]
    fn transpose_and_blocks() {
        let e = parse_expr("[x; u]'*Q1*[x; u]").unwrap();
        let v = Expr::Block(vec![vec![Expr::var("x")], vec![Expr::var("u")]]);
        assert_eq!(e, v.clone().transpose() * Expr::var("Q1") * v);
        let c = parse_expr("[1, 2; 3, -4]").unwrap();
        assert_eq!(c, Expr::Const(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, -4.0])));
    }

    #[test]
    fn predicates() {
        let p = parse_predicate("-0.95 <= u && u <= 2").unwrap();
        assert_eq!(p.atoms().len(), 2);
        let g = parse_predicate("a >= b").unwrap();
        assert_eq!(g, Predicate::Le(Expr::var("b"), Expr::var("a")));
        assert_eq!(parse_predicate("true").unwrap(), Predicate::truth());
    }

    #[test]
    fn errors_carry_position() {
        let e = parse_expr("a + * b").unwrap_err();
        assert_eq!(e.pos, 4);
        assert!(parse_expr("sin(a, b)").is_err());
        assert!(parse_expr("a $ b").is_err());
        assert!(parse_expr("(a + b").is_err());
        assert!(parse_predicate("a + b").is_err());
    }

    #[test]
    fn exponent_literals() {
        assert_eq!(parse_expr("1e-7").unwrap().as_scalar(), Some(1e-7));
        assert_eq!(parse_expr("2.5E3").unwrap().as_scalar(), Some(2500.0));
    }
}
