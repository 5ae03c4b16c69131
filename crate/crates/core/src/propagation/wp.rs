use super::{Direction, PropagationError, PropagationStep};
use crate::codegen::{Anchor, AnnotatedProgram, Contract, ContractBody, ContractKind, Origin, StatementKind};
use crate::expr::{Expr, Predicate};

/// Weakest precondition of `post` under `var := e`.
pub fn wp_assign(post: &Predicate, var: &str, e: &Expr) -> Predicate {
    post.subst(var, e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    /// Precondition of the plant update, anchored after the last statement.
    pub at_plant: Predicate,
    /// Precondition at the start of the span body.
    pub at_start: Predicate,
    pub steps: Vec<PropagationStep>,
}

/// Folds [`wp_assign`] from `post` back through the plant update and the
/// span's assignments, and anchors both preconditions as `requires`.
pub fn propagate_backward(
    prog: &mut AnnotatedProgram,
    loop_id: usize,
    post: &Predicate,
    plant: &ContractBody,
) -> Result<Backward, PropagationError> {
    let &(_, last) = prog.spans.get(&loop_id).ok_or(PropagationError::EmptySpan(loop_id))?;
    let start = prog.span_body_start(loop_id);
    let mut steps = Vec::new();
    let mut cur = post.clone();
    if let ContractBody::Update { target, expr } = plant {
        let Expr::Var(v) = target else {
            return Err(PropagationError::StackedUpdate(target.to_string()));
        };
        let next = wp_assign(&cur, v, expr);
        steps.push(PropagationStep {
            loop_id,
            statement: None,
            direction: Direction::Backward,
            input: cur.to_string(),
            output: next.to_string(),
        });
        cur = next;
    }
    let at_plant = cur.clone();
    if let Some(start) = start {
        for i in (start..=last).rev() {
            let StatementKind::Assign(v, e) = &prog.statements[i].kind else {
                continue;
            };
            let next = wp_assign(&cur, v, e);
            if next != cur {
                steps.push(PropagationStep {
                    loop_id,
                    statement: Some(i),
                    direction: Direction::Backward,
                    input: cur.to_string(),
                    output: next.to_string(),
                });
            }
            cur = next;
        }
    }
    prog.add_contract(Contract {
        kind: ContractKind::Require,
        body: ContractBody::Pred(at_plant.clone()),
        anchor: Anchor::After(last),
        origin: Origin::Backward { loop_id, at_start: false },
    });
    prog.add_contract(Contract {
        kind: ContractKind::Require,
        body: ContractBody::Pred(cur.clone()),
        anchor: start.map_or(Anchor::After(last), Anchor::Before),
        origin: Origin::Backward { loop_id, at_start: true },
    });
    Ok(Backward {
        at_plant,
        at_start: cur,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unrelated_post_unchanged() {
        let p = Predicate::parse("a <= 1").unwrap();
        assert_eq!(wp_assign(&p, "b", &Expr::parse("a + 1").unwrap()), p);
    }

    #[test]
    fn plant_update_substitution() {
        let post = Predicate::parse("z'*z <= 1").unwrap();
        let upd = Expr::parse("z + dt*(1/Iw*(torque - friction_func(x, u)*r))").unwrap();
        let pre = wp_assign(&post, "z", &upd);
        assert_eq!(
            pre.to_string(),
            "(z + dt*(1/Iw*(torque - friction_func(x, u)*r)))'*(z + dt*(1/Iw*(torque - friction_func(x, u)*r))) <= 1"
        );
    }
}
