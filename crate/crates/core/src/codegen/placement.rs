use std::collections::{BTreeMap, BTreeSet};

use super::{Anchor, AnnotatedProgram, CodegenError, Contract, ContractBody, ContractKind, Origin};
use crate::expr::{Expr, Predicate};
use crate::model::{watched_vector, Analysis, Annotation, Model};

/// Predicates placed at the start and end of a loop span. They coincide
/// for an inductive invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopContracts {
    pub require: Predicate,
    pub ensure: Predicate,
}

impl LoopContracts {
    pub fn inductive(p: Predicate) -> Self {
        LoopContracts {
            require: p.clone(),
            ensure: p,
        }
    }
}

/// Places loop invariants around their spans, plant models as end-of-span
/// assumptions, and every other observer right after its watched signals
/// are first assigned. Placing twice has no further effect.
pub fn place_annotations(
    prog: &mut AnnotatedProgram,
    m: &Model,
    a: &Analysis,
    invariants: &BTreeMap<usize, LoopContracts>,
) -> Result<(), CodegenError> {
    for l in &a.loops {
        let Some(&(_, last)) = prog.spans.get(&l.id) else {
            continue;
        };
        let start = match prog.span_body_start(l.id) {
            Some(i) => Anchor::Before(i),
            None => Anchor::After(last),
        };
        if let Some(inv) = invariants.get(&l.id) {
            prog.add_contract(Contract {
                kind: ContractKind::Require,
                body: ContractBody::Pred(inv.require.clone()),
                anchor: start,
                origin: Origin::Invariant { loop_id: l.id },
            });
            prog.add_contract(Contract {
                kind: ContractKind::Ensure,
                body: ContractBody::Pred(inv.ensure.clone()),
                anchor: Anchor::After(last),
                origin: Origin::Invariant { loop_id: l.id },
            });
        }
        prog.add_contract(Contract {
            kind: ContractKind::Assume,
            body: plant_update(&m.annotations[l.plant]),
            anchor: Anchor::After(last),
            origin: Origin::Plant { loop_id: l.id },
        });
    }
    for &i in &a.assumptions {
        let obs = &m.annotations[i];
        let pred = obs.observer_predicate().expect("assumptions are observers");
        let mut at = None;
        for w in obs.watched().unwrap_or_default() {
            let def = prog.first_definition(w).ok_or_else(|| CodegenError::Unassigned {
                var: w.clone(),
                contract: format!("observer `{}`", obs.name()),
            })?;
            at = at.max(Some(def));
        }
        let Some(at) = at else { continue };
        prog.add_contract(Contract {
            kind: ContractKind::Assume,
            body: ContractBody::Pred(pred),
            anchor: Anchor::After(at),
            origin: Origin::Assumption {
                observer: obs.name().to_string(),
            },
        });
    }
    check_def_before_use(prog)
}

/// The plant's discrete update as an assignment to its outputs.
pub(crate) fn plant_update(p: &Annotation) -> ContractBody {
    match p {
        Annotation::LinearPlant(p) => {
            let x = watched_vector(&p.outputs);
            let u = watched_vector(&p.inputs);
            ContractBody::Update {
                target: x.clone(),
                expr: p.a.clone() * x + p.b.clone() * u,
            }
        }
        Annotation::GeneralPlant(p) => ContractBody::Update {
            target: Expr::var(&p.outputs[0]),
            expr: p.update.clone(),
        },
        _ => unreachable!("loops pair with plants"),
    }
}

/// Every program variable a contract mentions is assigned at or before the
/// contract's anchor.
pub fn check_def_before_use(prog: &AnnotatedProgram) -> Result<(), CodegenError> {
    let defined: BTreeSet<&str> = prog.statements.iter().filter_map(|s| s.defines()).collect();
    for c in &prog.contracts {
        let vars = match &c.body {
            ContractBody::Pred(p) => p.free_vars(),
            ContractBody::Update { target, expr } => {
                let mut v = target.free_vars();
                v.extend(expr.free_vars());
                v
            }
        };
        for v in vars.iter().filter(|v| defined.contains(v.as_str())) {
            let def = prog.first_definition(v).expect("defined");
            let ok = match c.anchor {
                Anchor::Before(i) => def < i,
                Anchor::After(i) => def <= i,
            };
            if !ok {
                return Err(CodegenError::UseBeforeDef {
                    var: v.clone(),
                    contract: c.describe(),
                });
            }
        }
    }
    Ok(())
}
