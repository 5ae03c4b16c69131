use std::collections::BTreeMap;

use credo::expr::{Expr, NoFunctions, Predicate, Shape, ShapeMap};
use credo::numerics::Matrix;
use credo::propagation::{simplify, wp_assign};
use proptest::prelude::*;

const VARS: [&str; 3] = ["a", "b", "c"];

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (1u32..40).prop_map(|k| Expr::scalar(k as f64 / 8.0)),
        prop::sample::select(VARS.to_vec()).prop_map(Expr::var),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| {
                let den = Expr::Add(Box::new(Expr::scalar(2.0)), Box::new(Expr::Mul(Box::new(b.clone()), Box::new(b))));
                Expr::Div(Box::new(a), Box::new(den))
            }),
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            inner.clone().prop_map(|a| Expr::Sin(Box::new(a))),
            inner.clone().prop_map(|a| Expr::Cos(Box::new(a))),
            inner.clone().prop_map(|a| Expr::sat(a, Expr::Neg(Box::new(Expr::scalar(1.0))), Expr::scalar(1.0))),
        ]
    })
}

fn point() -> impl Strategy<Value = BTreeMap<String, Matrix>> {
    prop::array::uniform3(-2.0f64..2.0).prop_map(|v| {
        VARS.iter()
            .zip(v)
            .map(|(n, x)| (n.to_string(), Matrix::from_element(1, 1, x)))
            .collect()
    })
}

fn shapes() -> ShapeMap {
    VARS.iter().fold(ShapeMap::new(), |m, v| m.with_var(v, Shape::SCALAR))
}

fn value(e: &Expr, at: &BTreeMap<String, Matrix>) -> f64 {
    e.eval(at, &NoFunctions).unwrap()[(0, 0)]
}

/// Largest magnitude met while evaluating `e`; bounds the rounding error
/// of any re-association of it.
fn magnitude(e: &Expr, at: &BTreeMap<String, Matrix>) -> f64 {
    e.children()
        .into_iter()
        .map(|c| magnitude(c, at))
        .fold(value(e, at).abs(), f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn print_parse_is_a_fixpoint(e in expr(), at in point()) {
        let text = e.to_string();
        let back = Expr::parse(&text).unwrap();
        prop_assert_eq!(back.to_string(), text);
        prop_assert_eq!(value(&back, &at).to_bits(), value(&e, &at).to_bits());
    }

    #[test]
    fn simplify_preserves_values(e in expr(), pts in prop::collection::vec(point(), 8)) {
        let s = simplify(&e, &shapes());
        for at in &pts {
            let (v, w) = (value(&e, at), value(&s, at));
            prop_assert!((v - w).abs() <= 1e-12 * (1.0 + magnitude(&e, at)), "{} -> {}: {} vs {}", e, s, v, w);
        }
    }

    #[test]
    fn simplify_is_idempotent(e in expr()) {
        let once = simplify(&e, &shapes());
        prop_assert_eq!(simplify(&once, &shapes()), once);
    }

    #[test]
    fn chained_wp_matches_execution(
        e1 in expr(),
        e2 in expr(),
        lhs in expr(),
        v1 in prop::sample::select(VARS.to_vec()),
        v2 in prop::sample::select(VARS.to_vec()),
        pts in prop::collection::vec(point(), 4),
    ) {
        let post = Predicate::le(lhs, Expr::scalar(0.0));
        let pre = wp_assign(&wp_assign(&post, v2, &e2), v1, &e1);
        for at in &pts {
            let mut s = at.clone();
            let x1 = e1.eval(&s, &NoFunctions).unwrap();
            s.insert(v1.to_string(), x1);
            let x2 = e2.eval(&s, &NoFunctions).unwrap();
            s.insert(v2.to_string(), x2);
            let after = post.violation(&s, &NoFunctions).unwrap();
            let before = pre.violation(at, &NoFunctions).unwrap();
            prop_assert_eq!(before.to_bits(), after.to_bits());
        }
    }

    #[test]
    fn substituting_an_absent_variable_is_identity(e in expr()) {
        let p = Predicate::le(e, Expr::scalar(1.0));
        prop_assert_eq!(wp_assign(&p, "d", &Expr::scalar(3.0)), p);
    }
}

#[test]
fn term_cancellation_examples() {
    let env = shapes();
    let e = Expr::parse("(a + b) - a").unwrap();
    assert_eq!(simplify(&e, &env), Expr::var("b"));
    let env = ShapeMap::new()
        .with_var("z", Shape::vector(2))
        .with_var("fx", Shape::vector(2))
        .with_var("dphi", Shape::new(3, 2))
        .with_var("f", Shape::vector(3))
        .with_var("r", Shape::SCALAR)
        .with_var("Iw", Shape::SCALAR)
        .with_var("dt", Shape::SCALAR);
    let e = Expr::parse("z + dt/Iw*(fx*r + Iw*dphi'*f - sat(z, -1, 1) - fx*r - Iw*dphi'*f)").unwrap();
    assert_eq!(simplify(&e, &env), Expr::parse("z - dt/Iw*sat(z, -1, 1)").unwrap());
}
