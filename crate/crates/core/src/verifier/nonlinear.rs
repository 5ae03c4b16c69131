use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::interval::{eval_interval, Interval, IntervalError, IntervalMatrix};
use super::{program_vars, Budget, Context, Effort, Point, Vc, Verdict, CERT_MARGIN};
use crate::expr::{Expr, Layered, Predicate};
use crate::numerics::Matrix;

/// Upper limit on boxes evaluated in one bisection run.
pub const MAX_BOXES: usize = 4_000_000;

/// Hypothesis points drawn per requested sample before giving up on
/// filling the budget.
const ATTEMPTS_PER_SAMPLE: usize = 20;

struct Layout {
    vars: Vec<(String, usize)>,
    root: Vec<Interval>,
}

impl Layout {
    fn point(&self, values: &[f64]) -> Point {
        let mut p = Point::new();
        let mut i = 0;
        for (name, len) in &self.vars {
            p.insert(name.clone(), Matrix::from_column_slice(*len, 1, &values[i..i + len]));
            i += len;
        }
        p
    }

    fn boxed(&self, b: &[Interval]) -> BTreeMap<String, IntervalMatrix> {
        let mut m = BTreeMap::new();
        let mut i = 0;
        for (name, len) in &self.vars {
            m.insert(name.clone(), IntervalMatrix::column(b[i..i + len].to_vec()));
            i += len;
        }
        m
    }
}

fn is_tautology(vc: &Vc) -> bool {
    let hyp = vc.hypothesis.atoms();
    let concl = vc.conclusion.atoms();
    !concl.is_empty() && concl.iter().all(|c| hyp.contains(c))
}

/// Level-set hypothesis `v' * M * v <= 1` on a single variable, used to
/// push half of the samples onto the boundary.
fn boundary_var(vc: &Vc) -> Option<(&str, Option<&Expr>)> {
    match vc.hypothesis.as_level_set()? {
        (Expr::Var(v), m) => Some((v.as_str(), m)),
        _ => None,
    }
}

/// Seeded sampling of the hypothesis set, then interval bisection of the
/// domain box to `budget.depth` halvings per dimension.
pub fn check_nonlinear_implication(vc: &Vc, budget: &Budget, ctx: &Context<'_>, stream: u64) -> Verdict {
    let mut effort = Effort::default();
    if is_tautology(vc) {
        return Verdict::verified(effort);
    }
    let mut vars = program_vars(&vc.hypothesis, ctx.params);
    vars.extend(program_vars(&vc.conclusion, ctx.params));
    let mut layout = Layout {
        vars: Vec::new(),
        root: Vec::new(),
    };
    for v in &vars {
        let Some(b) = vc.domain.get(v) else {
            return Verdict::unknown(format!("unbounded: no domain fact for `{v}`"), effort);
        };
        if b.intervals.iter().any(|i| !i.lo.is_finite() || !i.hi.is_finite()) {
            return Verdict::unknown(format!("unbounded: infinite domain for `{v}`"), effort);
        }
        layout.vars.push((v.clone(), b.intervals.len()));
        layout.root.extend_from_slice(&b.intervals);
    }

    if let Some(point) = sample(vc, budget, ctx, stream, &layout, &mut effort) {
        return Verdict::falsified(vc, point, ctx, effort);
    }
    bisect(vc, budget, ctx, &layout, &mut effort)
}

fn sample(
    vc: &Vc,
    budget: &Budget,
    ctx: &Context<'_>,
    stream: u64,
    layout: &Layout,
    effort: &mut Effort,
) -> Option<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    rng.set_stream(stream);
    let push = boundary_var(vc).and_then(|(v, m)| {
        let offset: usize = layout.vars.iter().take_while(|(n, _)| n != v).map(|(_, l)| l).sum();
        let len = layout.vars.iter().find(|(n, _)| n == v)?.1;
        let m = match m {
            Some(m) => m.eval(ctx.params, ctx.funcs).ok()?,
            None => Matrix::identity(len, len),
        };
        (m.shape() == (len, len)).then_some((offset, len, m))
    });
    let mut best: Option<(f64, Point)> = None;
    let mut values = vec![0.0; layout.root.len()];
    let mut attempts = 0;
    while effort.samples < budget.samples && attempts < budget.samples * ATTEMPTS_PER_SAMPLE {
        for (v, i) in values.iter_mut().zip(&layout.root) {
            *v = if i.width() > 0.0 { rng.random_range(i.lo..=i.hi) } else { i.lo };
        }
        if let Some((offset, len, m)) = &push {
            if attempts % 2 == 1 {
                let x = Matrix::from_column_slice(*len, 1, &values[*offset..offset + len]);
                let q = (x.transpose() * m * &x)[(0, 0)];
                if q > 0.0 {
                    let s = ((1.0 - 1e-12) / q).sqrt();
                    values[*offset..offset + len].iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        attempts += 1;
        let point = layout.point(&values);
        let scope = Layered(&point, ctx.params);
        match vc.hypothesis.violation(&scope, ctx.funcs) {
            Ok(h) if h <= 0.0 => {}
            _ => continue,
        }
        effort.samples += 1;
        let Ok(c) = vc.conclusion.violation(&scope, ctx.funcs) else {
            continue;
        };
        effort.max_violation = Some(effort.max_violation.map_or(c, |m| m.max(c)));
        if c > 0.0 && best.as_ref().is_none_or(|(b, _)| c > *b) {
            best = Some((c, point));
        }
    }
    best.map(|(_, p)| p)
}

/// `lhs - rhs` of every atom, as expressions.
fn gaps(p: &Predicate) -> Vec<Expr> {
    p.atoms()
        .into_iter()
        .map(|(l, r)| Expr::Sub(Box::new(l.clone()), Box::new(r.clone())))
        .collect()
}

enum BoxOutcome {
    Refuted,
    Certified,
    Open(f64),
    Undecidable(String),
}

fn classify(
    hyp: &[Expr],
    concl: &[Expr],
    relative: &[Vec<Expr>],
    vars: &BTreeMap<String, IntervalMatrix>,
    ctx: &Context<'_>,
) -> Result<BoxOutcome, IntervalError> {
    let mut hyp_scalar = Vec::with_capacity(hyp.len());
    for h in hyp {
        let g = match eval_interval(h, vars, ctx.params) {
            Ok(g) => g,
            Err(IntervalError::DivisionByZero) => return Ok(BoxOutcome::Undecidable("division by an interval containing 0".into())),
            Err(e) => return Err(e),
        };
        if g.data.iter().any(|i| i.lo > 0.0) {
            return Ok(BoxOutcome::Refuted);
        }
        hyp_scalar.push(g.data.len() == 1);
    }
    let mut worst = f64::NEG_INFINITY;
    for (ci, c) in concl.iter().enumerate() {
        let g = match eval_interval(c, vars, ctx.params) {
            Ok(g) => g,
            Err(IntervalError::DivisionByZero) => return Ok(BoxOutcome::Undecidable("division by an interval containing 0".into())),
            Err(e) => return Err(e),
        };
        let direct = g.data.iter().all(|i| i.hi <= -CERT_MARGIN);
        worst = worst.max(g.data.iter().map(|i| i.hi).fold(f64::NEG_INFINITY, f64::max));
        if direct {
            continue;
        }
        // The W - V reduction: with V - c_h <= 0 on the box, W - c <= (W - c) - (V - c_h).
        let mut relative_ok = false;
        if g.data.len() == 1 {
            for (hi, rel) in relative[ci].iter().enumerate() {
                if !hyp_scalar[hi] {
                    continue;
                }
                match eval_interval(rel, vars, ctx.params) {
                    Ok(r) if r.data.len() == 1 && r.data[0].hi <= -CERT_MARGIN => {
                        relative_ok = true;
                        break;
                    }
                    Ok(_) | Err(IntervalError::DivisionByZero) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        if !relative_ok {
            return Ok(BoxOutcome::Open(worst));
        }
    }
    Ok(BoxOutcome::Certified)
}

fn bisect(vc: &Vc, budget: &Budget, ctx: &Context<'_>, layout: &Layout, effort: &mut Effort) -> Verdict {
    let hyp = gaps(&vc.hypothesis);
    let concl = gaps(&vc.conclusion);
    let relative: Vec<Vec<Expr>> = concl
        .iter()
        .map(|c| {
            hyp.iter()
                .map(|h| Expr::Sub(Box::new(c.clone()), Box::new(h.clone())))
                .collect()
        })
        .collect();
    let dims = layout.root.len();
    let mut stack: Vec<(Vec<Interval>, Vec<usize>)> = vec![(layout.root.clone(), vec![0; dims])];
    let mut open_leaves = 0usize;
    let mut worst: Option<(f64, Vec<Interval>, String)> = None;
    while let Some((b, splits)) = stack.pop() {
        if effort.boxes == MAX_BOXES {
            return Verdict::unknown(format!("box budget of {MAX_BOXES} exhausted"), *effort);
        }
        effort.boxes += 1;
        let outcome = match classify(&hyp, &concl, &relative, &layout.boxed(&b), ctx) {
            Ok(o) => o,
            Err(e) => return Verdict::unknown(format!("interval evaluation: {e}"), *effort),
        };
        let (score, why) = match outcome {
            BoxOutcome::Refuted | BoxOutcome::Certified => continue,
            BoxOutcome::Undecidable(why) => (f64::INFINITY, why),
            BoxOutcome::Open(score) => (score, "conclusion not certified".to_string()),
        };
        let next = (0..dims)
            .filter(|&d| splits[d] < budget.depth && b[d].width() > 0.0)
            .min_by_key(|&d| splits[d]);
        if let Some(d) = next {
            let mid = b[d].mid();
            let mut lo = b.clone();
            let mut hi = b;
            lo[d] = Interval::new(lo[d].lo, mid);
            hi[d] = Interval::new(mid, hi[d].hi);
            let mut s = splits;
            s[d] += 1;
            stack.push((hi, s.clone()));
            stack.push((lo, s));
            continue;
        }
        open_leaves += 1;
        if worst.as_ref().is_none_or(|(w, _, _)| score > *w) {
            worst = Some((score, b, why));
        }
    }
    match worst {
        None => Verdict::verified(*effort),
        Some((score, b, why)) => {
            let boxed: Vec<String> = b.iter().map(|i| i.to_string()).collect();
            Verdict::unknown(
                format!(
                    "{open_leaves} undecided leaf box(es) at depth {}; worst {} (conclusion upper bound {score}): {why}",
                    budget.depth,
                    boxed.join(" x "),
                ),
                *effort,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{DomainBox, Status, VcKind};
    use super::*;
    use crate::expr::NoFunctions;

    fn vc(hyp: &str, concl: &str, domain: &[(&str, Vec<(f64, f64)>)]) -> Vc {
        let mut d = DomainBox::default();
        for (v, ivs) in domain {
            d.insert(v, ivs.iter().map(|&(a, b)| Interval::new(a, b)).collect(), "test").unwrap();
        }
        Vc {
            id: "t".into(),
            loop_id: None,
            kind: VcKind::Implication,
            hypothesis: Predicate::parse(hyp).unwrap(),
            conclusion: Predicate::parse(concl).unwrap(),
            domain: d,
            origin: "test".into(),
        }
    }

    fn run(vc: &Vc, samples: usize, depth: usize) -> Verdict {
        let params = BTreeMap::from([("c".to_string(), Matrix::from_element(1, 1, 0.1))]);
        let ctx = Context {
            params: &params,
            funcs: &NoFunctions,
        };
        check_nonlinear_implication(vc, &Budget { samples, depth, seed: 7 }, &ctx, 0)
    }

    #[test]
    fn tautology_needs_no_budget() {
        let v = vc("z'*z <= 1", "z'*z <= 1", &[]);
        let r = run(&v, 0, 0);
        assert_eq!(r.status, Status::Verified);
        assert_eq!(r.effort.boxes, 0);
    }

    #[test]
    fn contraction_certified() {
        let v = vc("z'*z <= 1", "((1 - c)*z)'*((1 - c)*z) <= 1", &[("z", vec![(-1.0, 1.0); 2])]);
        assert_eq!(run(&v, 1000, 10).status, Status::Verified);
    }

    #[test]
    fn expansion_falsified() {
        let v = vc("z'*z <= 1", "((1 + c)*z)'*((1 + c)*z) <= 1", &[("z", vec![(-1.0, 1.0); 2])]);
        let r = run(&v, 1000, 10);
        let Status::Falsified(w) = r.status else { panic!("{:?}", r.status) };
        assert!(w.conclusion > 0.0 && w.hypothesis <= 0.0);
    }

    #[test]
    fn missing_domain_is_unknown() {
        let r = run(&vc("a <= 1", "a <= 2", &[]), 10, 2);
        assert!(matches!(r.status, Status::Unknown(ref m) if m.contains("unbounded")));
    }

    #[test]
    fn zero_budget_is_unknown() {
        let v = vc("z'*z <= 1", "((1 - c)*z)'*((1 - c)*z) <= 1", &[("z", vec![(-1.0, 1.0); 2])]);
        let r = run(&v, 0, 0);
        assert!(matches!(r.status, Status::Unknown(_)), "{:?}", r.status);
        assert_eq!(r.effort.boxes, 1);
    }

    #[test]
    fn division_through_zero_is_unknown_not_a_crash() {
        let v = vc("a <= 1", "1/a <= 5", &[("a", vec![(-1.0, 1.0)])]);
        let r = run(&v, 0, 3);
        assert!(matches!(r.status, Status::Unknown(ref m) if m.contains("division")), "{:?}", r.status);
    }
}
