use std::collections::BTreeMap;

use super::{Direction, PropagationError, PropagationStep};
use crate::codegen::{Anchor, AnnotatedProgram, Contract, ContractBody, ContractKind, Origin, StatementKind};
use crate::expr::{Expr, Layered, NoFunctions, Predicate, Scope, ShapeEnv};
use crate::model::{watched_vector, LinearPlant};
use crate::numerics::{ellipsoid_affine_image, Ellipsoid, Matrix};

/// Parameter names under which the two forward images are published.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardNames {
    pub q1: String,
    pub q2: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Image of the invariant on the stacked vector `[outputs; inputs]`.
    pub q1: Ellipsoid,
    /// Image of `q1` under the plant update, on the plant outputs.
    pub q2: Ellipsoid,
    pub steps: Vec<PropagationStep>,
}

/// Polynomial degree in the tracked variables, `None` if not polynomial of
/// degree at most one.
fn degree(e: &Expr, tracked: &BTreeMap<String, Matrix>) -> Option<u8> {
    let d = |x: &Expr| degree(x, tracked);
    match e {
        Expr::Var(v) => Some(u8::from(tracked.contains_key(v))),
        Expr::Const(_) => Some(0),
        Expr::Neg(a) | Expr::Transpose(a) => d(a),
        Expr::Add(a, b) | Expr::Sub(a, b) => Some(d(a)?.max(d(b)?)),
        Expr::Mul(a, b) => {
            let s = d(a)? + d(b)?;
            (s <= 1).then_some(s)
        }
        Expr::Div(a, b) => (d(b)? == 0).then(|| d(a)).flatten(),
        Expr::Block(_) => e.children().into_iter().map(d).try_fold(0, |acc, x| Some(acc.max(x?))),
        _ => e
            .children()
            .into_iter()
            .all(|c| d(c) == Some(0))
            .then_some(0),
    }
}

fn eval(e: &Expr, scope: &dyn Scope) -> Result<Matrix, PropagationError> {
    e.eval(scope, &NoFunctions).map_err(|source| PropagationError::Eval {
        expr: e.to_string(),
        source,
    })
}

/// Pushes the loop invariant `p` (on the plant outputs) forward through the
/// loop's linear statements and the plant update, adding the `ensures` for
/// both images to `prog`.
pub fn propagate_linear_forward(
    prog: &mut AnnotatedProgram,
    loop_id: usize,
    plant: &LinearPlant,
    shapes: &dyn ShapeEnv,
    params: &dyn Scope,
    p: &Ellipsoid,
    names: &ForwardNames,
) -> Result<Forward, PropagationError> {
    let &(first, last) = prog.spans.get(&loop_id).ok_or(PropagationError::EmptySpan(loop_id))?;
    let dim = |v: &str| shapes.var(v).map_or(1, |s| s.rows);
    let n: usize = plant.outputs.iter().map(|v| dim(v)).sum();
    if p.dim() != n {
        return Err(crate::numerics::NumericsError::Dimension {
            what: "loop invariant",
            expected: (n, n),
            got: (p.dim(), p.dim()),
        }
        .into());
    }
    let mut tracked: BTreeMap<String, Matrix> = BTreeMap::new();
    let mut row = 0;
    for v in &plant.outputs {
        let d = dim(v);
        let mut sel = Matrix::zeros(d, n);
        for i in 0..d {
            sel[(i, row + i)] = 1.0;
        }
        row += d;
        tracked.insert(v.clone(), sel);
    }

    let state = watched_vector(&plant.outputs);
    let inputs = watched_vector(&plant.inputs);
    let augmented = Expr::Block(vec![vec![state.clone()], vec![inputs.clone()]]);
    let invariant_text = prog
        .find(&Origin::Invariant { loop_id }, ContractKind::Require)
        .map(|c| c.body.to_string())
        .unwrap_or_default();

    let mut last_input_def = None;
    for i in first..=last {
        let StatementKind::Assign(v, e) = &prog.statements[i].kind else {
            continue;
        };
        match degree(e, &tracked) {
            Some(0) => continue,
            Some(_) => {}
            None => {
                return Err(PropagationError::Nonlinear {
                    statement: i,
                    var: v.clone(),
                })
            }
        }
        let zero: BTreeMap<String, Matrix> = tracked
            .iter()
            .map(|(k, m)| (k.clone(), Matrix::zeros(m.nrows(), 1)))
            .collect();
        let offset = eval(e, &Layered(&zero, params))?;
        if offset.iter().any(|x| *x != 0.0) {
            return Err(PropagationError::Offset {
                statement: i,
                var: v.clone(),
            });
        }
        let mut map = Matrix::zeros(offset.nrows(), n);
        for j in 0..n {
            let basis: BTreeMap<String, Matrix> = tracked
                .iter()
                .map(|(k, m)| (k.clone(), Matrix::from_column_slice(m.nrows(), 1, m.column(j).as_slice())))
                .collect();
            map.set_column(j, &eval(e, &Layered(&basis, params))?.column(0));
        }
        tracked.insert(v.clone(), map);
        if plant.inputs.contains(v) {
            last_input_def = Some(i);
        }
    }

    let mut lift_rows: Vec<Matrix> = Vec::new();
    for v in plant.outputs.iter().chain(&plant.inputs) {
        lift_rows.push(
            tracked
                .get(v)
                .cloned()
                .ok_or_else(|| PropagationError::PlantInput(v.clone()))?,
        );
    }
    let total: usize = lift_rows.iter().map(|m| m.nrows()).sum();
    let mut lift = Matrix::zeros(total, n);
    let mut r = 0;
    for m in &lift_rows {
        lift.view_mut((r, 0), (m.nrows(), n)).copy_from(m);
        r += m.nrows();
    }
    let q1 = ellipsoid_affine_image(p, &lift)?;

    let a = eval(&plant.a, params)?;
    let b = eval(&plant.b, params)?;
    let mut ab = Matrix::zeros(n, total);
    ab.view_mut((0, 0), (n, n)).copy_from(&a);
    ab.view_mut((0, n), (n, total - n)).copy_from(&b);
    let q2 = ellipsoid_affine_image(&q1, &ab)?;

    let q1_pred = Predicate::le(Expr::quadratic_form(augmented, Expr::var(&names.q1)), Expr::scalar(1.0));
    let q2_pred = Predicate::le(Expr::quadratic_form(state, Expr::var(&names.q2)), Expr::scalar(1.0));
    let at = last_input_def.ok_or_else(|| PropagationError::PlantInput(plant.inputs.join(", ")))?;
    prog.add_contract(Contract {
        kind: ContractKind::Ensure,
        body: ContractBody::Pred(q1_pred.clone()),
        anchor: Anchor::After(at),
        origin: Origin::Forward { loop_id, stage: 1 },
    });
    prog.add_contract(Contract {
        kind: ContractKind::Ensure,
        body: ContractBody::Pred(q2_pred.clone()),
        anchor: Anchor::After(last),
        origin: Origin::Forward { loop_id, stage: 2 },
    });
    let steps = vec![
        PropagationStep {
            loop_id,
            statement: Some(at),
            direction: Direction::Forward,
            input: invariant_text,
            output: q1_pred.to_string(),
        },
        PropagationStep {
            loop_id,
            statement: None,
            direction: Direction::Forward,
            input: q1_pred.to_string(),
            output: q2_pred.to_string(),
        },
    ];
    Ok(Forward { q1, q2, steps })
}
