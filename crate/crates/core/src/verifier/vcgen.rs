use std::collections::{BTreeMap, BTreeSet};

use super::interval::Interval;
use super::{level_set_matrix, program_vars, DomainBox, Vc, VcKind, VerifierError};
use crate::codegen::{AnnotatedProgram, Contract, ContractKind, Origin};
use crate::expr::{Expr, NoFunctions, Predicate, Scope, ShapeEnv};
use crate::numerics::{Ellipsoid, Matrix};
use crate::propagation::simplify_predicate;

fn constant(e: &Expr, params: &dyn Scope) -> Option<Matrix> {
    if e.free_vars().iter().any(|v| params.get(v).is_none()) {
        return None;
    }
    e.eval(params, &NoFunctions).ok()
}

fn rows_of(v: &str, shapes: &dyn ShapeEnv) -> usize {
    shapes.var(v).map_or(1, |s| s.rows)
}

/// Componentwise bounds on program variables that `p` implies on its own:
/// axis-aligned boxes of unit level sets and constant comparisons
/// `c <= v`, `v <= c`.
pub fn facts_from_predicate(p: &Predicate, params: &dyn Scope, shapes: &dyn ShapeEnv) -> Vec<(String, Vec<Interval>)> {
    let mut out = Vec::new();
    if let Some((x, m)) = level_set_matrix(p, params) {
        let names: Option<Vec<&str>> = match x {
            Expr::Var(v) => Some(vec![v.as_str()]),
            Expr::Block(rows) => rows
                .iter()
                .map(|r| match r.as_slice() {
                    [Expr::Var(v)] => Some(v.as_str()),
                    _ => None,
                })
                .collect(),
            _ => None,
        };
        if let Some(names) = names {
            let n: usize = names.iter().map(|v| rows_of(v, shapes)).sum();
            let m = m.unwrap_or_else(|| Matrix::identity(n, n));
            if let Ok(e) = Ellipsoid::new(m) {
                if e.dim() == n {
                    let h = e.half_widths();
                    let mut at = 0;
                    for v in names {
                        let len = rows_of(v, shapes);
                        out.push((v.to_string(), h[at..at + len].iter().map(|&w| Interval::new(-w, w)).collect()));
                        at += len;
                    }
                }
            }
        }
        return out;
    }
    let mut lo: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut hi: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (l, r) in p.atoms() {
        let (v, c, upper) = match (l, r) {
            (Expr::Var(v), c) if params.get(v).is_none() => (v, c, true),
            (c, Expr::Var(v)) if params.get(v).is_none() => (v, c, false),
            _ => continue,
        };
        let Some(c) = constant(c, params) else { continue };
        let n = rows_of(v, shapes);
        let vals: Vec<f64> = if c.len() == 1 { vec![c[0]; n] } else { c.iter().copied().collect() };
        if vals.len() != n {
            continue;
        }
        let (map, init, pick): (_, f64, fn(f64, f64) -> f64) = if upper {
            (&mut hi, f64::INFINITY, f64::min)
        } else {
            (&mut lo, f64::NEG_INFINITY, f64::max)
        };
        let e = map.entry(v.clone()).or_insert_with(|| vec![init; n]);
        for (a, b) in e.iter_mut().zip(vals) {
            *a = pick(*a, b);
        }
    }
    let names: BTreeSet<&String> = lo.keys().chain(hi.keys()).collect();
    for v in names {
        let n = rows_of(v, shapes);
        let l = lo.get(v).cloned().unwrap_or_else(|| vec![f64::NEG_INFINITY; n]);
        let h = hi.get(v).cloned().unwrap_or_else(|| vec![f64::INFINITY; n]);
        out.push((v.clone(), l.into_iter().zip(h).map(|(a, b)| Interval { lo: a, hi: b }).collect()));
    }
    out
}

fn pred_of(c: &Contract) -> Result<&Predicate, VerifierError> {
    c.body
        .pred()
        .ok_or_else(|| VerifierError::Unmatched(c.describe()))
}

/// One VC per forward image against the loop-end invariant and per
/// loop-start invariant against the backward precondition.
pub fn gen_vcs(
    prog: &AnnotatedProgram,
    facts: &DomainBox,
    params: &BTreeMap<String, Matrix>,
    shapes: &dyn ShapeEnv,
) -> Result<Vec<Vc>, VerifierError> {
    let loops: BTreeSet<usize> = prog.contracts.iter().filter_map(|c| c.origin.loop_id()).collect();
    let mut vcs = Vec::new();
    let mut push = |loop_id: usize, hyp: &Contract, hyp_pred: Predicate, concl: &Contract, concl_pred: Predicate| {
        let mut vars = program_vars(&hyp_pred, params);
        vars.extend(program_vars(&concl_pred, params));
        let kind = match (level_set_matrix(&hyp_pred, params), level_set_matrix(&concl_pred, params)) {
            (Some((a, Some(_))), Some((b, Some(_)))) if a == b => VcKind::Containment,
            _ => VcKind::Implication,
        };
        vcs.push(Vc {
            id: format!("vc{}", vcs.len() + 1),
            loop_id: Some(loop_id),
            kind,
            domain: facts.restrict(&vars),
            hypothesis: hyp_pred,
            conclusion: concl_pred,
            origin: format!("{}=>{}", hyp.origin, concl.origin),
        });
    };
    for id in loops {
        let find = |origin: Origin, kind| prog.find(&origin, kind);
        let inv_req = find(Origin::Invariant { loop_id: id }, ContractKind::Require);
        let inv_ens = find(Origin::Invariant { loop_id: id }, ContractKind::Ensure);
        let fwd1 = find(Origin::Forward { loop_id: id, stage: 1 }, ContractKind::Ensure);
        let fwd2 = find(Origin::Forward { loop_id: id, stage: 2 }, ContractKind::Ensure);
        let bwd = find(Origin::Backward { loop_id: id, at_start: true }, ContractKind::Require);
        match (fwd1, fwd2) {
            (_, Some(f2)) => {
                let ens = inv_ens.ok_or_else(|| VerifierError::Unmatched(f2.describe()))?;
                push(id, f2, pred_of(f2)?.clone(), ens, pred_of(ens)?.clone());
            }
            (Some(f1), None) => return Err(VerifierError::Unmatched(f1.describe())),
            (None, None) => {}
        }
        if let Some(b) = bwd {
            let req = inv_req.ok_or_else(|| VerifierError::Unmatched(b.describe()))?;
            let concl = simplify_predicate(pred_of(b)?, shapes);
            let concl_vars = program_vars(&concl, params);
            let mut parts = vec![pred_of(req)?.clone()];
            for a in prog.contracts.iter().filter(|c| matches!(c.origin, Origin::Assumption { .. })) {
                let Some(p) = a.body.pred() else { continue };
                let vars = program_vars(p, params);
                if !vars.is_empty() && vars.is_subset(&concl_vars) && a.anchor.position() <= b.anchor.position() {
                    parts.push(p.clone());
                }
            }
            let hyp = if parts.len() == 1 { parts.remove(0) } else { Predicate::and(parts) };
            push(id, req, hyp, b, concl);
        }
        if fwd2.is_none() && bwd.is_none() {
            if let Some(c) = inv_req.or(inv_ens) {
                return Err(VerifierError::Unmatched(c.describe()));
            }
        }
    }
    Ok(vcs)
}
