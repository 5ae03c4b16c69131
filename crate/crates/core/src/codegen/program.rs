use std::collections::{BTreeMap, BTreeSet};

use super::{AnnotatedProgram, CodegenError, Statement, StatementKind};
use crate::expr::Expr;
use crate::model::{Analysis, Io, Model};

/// A unit of scheduling: a whole loop cluster or a single statement.
struct Unit {
    loop_id: Option<usize>,
    /// Io inputs read first, in declaration order.
    inputs: Vec<String>,
    /// Indices into `Analysis::nodes`.
    nodes: Vec<usize>,
    key: usize,
}

/// One assignment per statement-level block in dependency order, inputs
/// and outputs for boundary signals. Each loop's statements are kept
/// contiguous; ties are broken by declaration order.
pub fn generate_program(m: &Model, a: &Analysis) -> Result<AnnotatedProgram, CodegenError> {
    let sig_index = |s: &str| m.signal_index(s).unwrap_or(usize::MAX);
    let mut units: Vec<Unit> = Vec::new();
    let mut unit_of_signal: BTreeMap<String, usize> = BTreeMap::new();
    let mut claimed: BTreeSet<usize> = BTreeSet::new();

    for l in &a.loops {
        let (_, outs) = m.annotations[l.plant].plant_ports().expect("loop plants have ports");
        let mut inputs: Vec<String> = outs
            .iter()
            .filter(|s| m.signal(s).is_some_and(|s| s.io == Some(Io::Input)))
            .cloned()
            .collect();
        inputs.sort_by_key(|s| sig_index(s));
        let blocks = l.controller_blocks();
        let nodes: Vec<usize> = a
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| blocks.contains(&n.block))
            .map(|(i, _)| i)
            .collect();
        claimed.extend(nodes.iter().copied());
        let key = inputs
            .iter()
            .map(|s| sig_index(s))
            .chain(nodes.iter().map(|&n| sig_index(&a.nodes[n].signal)))
            .min()
            .unwrap_or(usize::MAX);
        let u = units.len();
        for s in inputs.iter().chain(nodes.iter().map(|&n| &a.nodes[n].signal)) {
            unit_of_signal.insert(s.clone(), u);
        }
        units.push(Unit {
            loop_id: Some(l.id),
            inputs,
            nodes,
            key,
        });
    }
    for s in &m.signals {
        if s.io == Some(Io::Input) && !unit_of_signal.contains_key(&s.name) {
            unit_of_signal.insert(s.name.clone(), units.len());
            units.push(Unit {
                loop_id: None,
                inputs: vec![s.name.clone()],
                nodes: Vec::new(),
                key: sig_index(&s.name),
            });
        }
    }
    for (i, n) in a.nodes.iter().enumerate() {
        if !claimed.contains(&i) {
            unit_of_signal.insert(n.signal.clone(), units.len());
            units.push(Unit {
                loop_id: None,
                inputs: Vec::new(),
                nodes: vec![i],
                key: sig_index(&n.signal),
            });
        }
    }

    // Kahn's algorithm over units, smallest declaration key first.
    let deps: Vec<BTreeSet<usize>> = units
        .iter()
        .enumerate()
        .map(|(ui, u)| {
            u.nodes
                .iter()
                .flat_map(|&n| a.nodes[n].deps.iter())
                .filter_map(|s| unit_of_signal.get(s).copied())
                .filter(|&d| d != ui)
                .collect()
        })
        .collect();
    let mut done = vec![false; units.len()];
    let mut order = Vec::with_capacity(units.len());
    while order.len() < units.len() {
        let next = (0..units.len())
            .filter(|&u| !done[u] && deps[u].iter().all(|&d| done[d]))
            .min_by_key(|&u| units[u].key);
        match next {
            Some(u) => {
                done[u] = true;
                order.push(u);
            }
            None => {
                let stuck = (0..units.len()).find(|&u| !done[u]).expect("some unit remains");
                return Err(CodegenError::NotContiguous(units[stuck].loop_id.unwrap_or(0)));
            }
        }
    }

    let mut prog = AnnotatedProgram {
        name: m.name.clone(),
        ..Default::default()
    };
    for u in order {
        let unit = &units[u];
        let first = prog.statements.len();
        for s in &unit.inputs {
            prog.statements.push(Statement {
                kind: StatementKind::Input(s.clone()),
                block: None,
            });
        }
        for n in schedule_within(a, &unit.nodes)? {
            let node = &a.nodes[n];
            prog.statements.push(Statement {
                kind: StatementKind::Assign(node.signal.clone(), node.expr.clone()),
                block: Some(node.block),
            });
            if m.signal(&node.signal).is_some_and(|s| s.io == Some(Io::Output)) {
                prog.statements.push(Statement {
                    kind: StatementKind::Output(Expr::var(&node.signal)),
                    block: Some(node.block),
                });
            }
        }
        if let Some(id) = unit.loop_id {
            if prog.statements.len() > first {
                prog.spans.insert(id, (first, prog.statements.len() - 1));
            }
        }
    }
    Ok(prog)
}

/// Topological order of nodes inside a unit, by block declaration order.
fn schedule_within(a: &Analysis, nodes: &[usize]) -> Result<Vec<usize>, CodegenError> {
    let signals: BTreeSet<&str> = nodes.iter().map(|&n| a.nodes[n].signal.as_str()).collect();
    let mut done: BTreeSet<&str> = BTreeSet::new();
    let mut out = Vec::with_capacity(nodes.len());
    while out.len() < nodes.len() {
        let next = nodes
            .iter()
            .copied()
            .filter(|n| !out.contains(n))
            .filter(|&n| {
                a.nodes[n]
                    .deps
                    .iter()
                    .all(|d| !signals.contains(d.as_str()) || done.contains(d.as_str()))
            })
            .min_by_key(|&n| a.nodes[n].block)
            .ok_or(CodegenError::NotContiguous(0))?;
        done.insert(a.nodes[next].signal.as_str());
        out.push(next);
    }
    Ok(out)
}
