//! Structural validation and loop detection.
//!
//! After inlining, every non-inline block output is a statement-level node.
//! A loop pairs a plant with the nodes on dataflow paths from the plant's
//! outputs to its inputs (the core), plus nodes that feed only the core
//! (the support). Observers watching only a loop's plant outputs become
//! that loop's invariant; all other observers are assumptions.

use std::collections::{BTreeMap, BTreeSet};

use super::bindings::CAR_SCALARS;
use super::{Annotation, Bindings, Diagnostic, Io, Model, ModelError};
use crate::expr::{Expr, Shape, ShapeMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopInvariant {
    /// Index of an ellipsoid observer in `Model::annotations`.
    Ellipsoid(usize),
    /// Index of a general observer in `Model::annotations`.
    Predicate(usize),
}

impl LoopInvariant {
    pub fn observer(&self) -> usize {
        match self {
            LoopInvariant::Ellipsoid(i) | LoopInvariant::Predicate(i) => *i,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loop {
    /// 1-based, in plant declaration order.
    pub id: usize,
    /// Index of the plant in `Model::annotations`.
    pub plant: usize,
    /// Statement-level blocks on paths from plant outputs to plant inputs.
    pub core: Vec<usize>,
    /// Statement-level blocks consumed only by the core.
    pub support: Vec<usize>,
    pub invariant: Option<LoopInvariant>,
}

impl Loop {
    /// Core and support blocks in declaration order.
    pub fn controller_blocks(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.core.iter().chain(&self.support).copied().collect();
        all.sort_unstable();
        all
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub block: usize,
    pub signal: String,
    /// Block expression with inline signals folded in.
    pub expr: Expr,
    /// Statement-level signals the expression reads.
    pub deps: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub loops: Vec<Loop>,
    /// Observers not attached to any loop, as annotation indices.
    pub assumptions: Vec<usize>,
    /// Statement-level nodes in declaration order.
    pub nodes: Vec<Node>,
    pub bindings: Bindings,
    /// Shapes of signals, parameters and external functions.
    pub shapes: ShapeMap,
}

impl Analysis {
    pub fn node_of_block(&self, block: usize) -> Option<&Node> {
        self.nodes.iter().find(|n| n.block == block)
    }

    pub fn node_of_signal(&self, signal: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.signal == signal)
    }

    pub fn loop_of_block(&self, block: usize) -> Option<&Loop> {
        self.loops
            .iter()
            .find(|l| l.core.contains(&block) || l.support.contains(&block))
    }
}

struct Checker<'a> {
    m: &'a Model,
    diags: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn err(&mut self, path: String, message: impl Into<String>) {
        let d = self.m.diag(path, message);
        self.diags.push(d);
    }
}

/// Shapes of parameters defined or derived by the bindings.
fn binding_shapes(m: &Model, b: &Bindings, shapes: &mut ShapeMap, ck: &mut Checker<'_>) {
    if b.dt.is_some() {
        shapes.vars.insert("dt".into(), Shape::SCALAR);
    }
    if b.car_params().is_some() {
        for name in CAR_SCALARS {
            shapes.vars.insert(name.into(), Shape::SCALAR);
        }
    }
    if let Some(eq) = &b.equilibrium {
        let n = eq.x_ss.len();
        let k = eq.u_ss.len();
        shapes.vars.insert("xss".into(), Shape::vector(n));
        shapes.vars.insert("uss".into(), Shape::vector(k));
        shapes.vars.insert("A".into(), Shape::new(n, n));
        shapes.vars.insert("B".into(), Shape::new(n, k));
    }
    for (name, f) in &b.functions {
        let (r, c) = f.result_shape();
        shapes.functions.insert(name.clone(), Shape::new(r, c));
    }
    let mut pending: Vec<(&String, Expr)> = Vec::new();
    for (name, spec) in &b.params {
        match spec.to_expr() {
            Ok(e) => pending.push((name, e)),
            Err(msg) => ck.err(format!("bindings.params.{name}"), msg),
        }
    }
    // Expression parameters may refer to each other in any order.
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|(name, e)| match e.shape(shapes) {
            Ok(s) => {
                shapes.vars.insert((*name).clone(), s);
                false
            }
            Err(_) => true,
        });
        if pending.len() == before {
            for (name, e) in &pending {
                if let Err(err) = e.shape(shapes) {
                    ck.err(format!("bindings.params.{name}"), err.to_string());
                }
            }
            break;
        }
    }
    // Gains designed by LQR and shapes synthesized for ellipsoid observers.
    for (i, a) in m.annotations.iter().enumerate() {
        match a {
            Annotation::LinearPlant(p) => {
                if let Some(g) = &p.gain {
                    let n: usize = p.outputs.iter().filter_map(|s| m.signal(s)).map(|s| s.shape.rows).sum();
                    let k: usize = p.inputs.iter().filter_map(|s| m.signal(s)).map(|s| s.shape.rows).sum();
                    if b.lqr.is_none() && !shapes.vars.contains_key(g) {
                        ck.err(format!("plants[{}].gain", plant_index(m, i)), format!("gain `{g}` needs a `bindings.lqr` section"));
                    }
                    shapes.vars.entry(g.clone()).or_insert(Shape::new(k, n));
                }
            }
            Annotation::EllipsoidObserver(o) => {
                if let Expr::Var(name) = &o.p {
                    let n: usize = o.watch.iter().filter_map(|s| m.signal(s)).map(|s| s.shape.rows).sum();
                    shapes.vars.entry(name.clone()).or_insert(Shape::new(n, n));
                }
            }
            _ => {}
        }
    }
}

fn plant_index(m: &Model, annotation: usize) -> usize {
    m.annotations[..annotation].iter().filter(|a| a.is_plant()).count()
}

fn observer_index(m: &Model, annotation: usize) -> usize {
    m.annotations[..annotation].iter().filter(|a| !a.is_plant()).count()
}

fn annotation_path(m: &Model, i: usize) -> String {
    if m.annotations[i].is_plant() {
        format!("plants[{}]", plant_index(m, i))
    } else {
        format!("observers[{}]", observer_index(m, i))
    }
}

pub fn validate_model(m: &Model) -> Result<Analysis, ModelError> {
    let bindings = Bindings::from_table(&m.bindings)?;
    let mut ck = Checker {
        m,
        diags: Vec::new(),
    };

    // Signals: unique names, one producer each.
    let mut shapes = ShapeMap::new();
    binding_shapes(m, &bindings, &mut shapes, &mut ck);
    let params: BTreeSet<String> = shapes.vars.keys().cloned().collect();
    let mut producers: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (i, s) in m.signals.iter().enumerate() {
        if shapes.vars.insert(s.name.clone(), s.shape).is_some() {
            let what = if params.contains(&s.name) { "a parameter" } else { "another signal" };
            ck.err(format!("signals[{i}].name"), format!("signal `{}` has the same name as {what}", s.name));
        }
        if s.io == Some(Io::Input) {
            producers.entry(&s.name).or_default().push("io input".into());
        }
        if s.inline && s.io.is_some() {
            ck.err(format!("signals[{i}].inline"), format!("boundary signal `{}` cannot be inline", s.name));
        }
    }
    for b in &m.blocks {
        if let BlockKindExt::External(name) = BlockKindExt::of(b) {
            if !shapes.functions.contains_key(name) {
                if let Some(s) = m.signal(&b.output) {
                    shapes.functions.insert(name.to_string(), s.shape);
                }
            }
        }
    }
    let declared = |name: &str| m.signal(name).is_some();
    for (i, b) in m.blocks.iter().enumerate() {
        if !declared(&b.output) {
            ck.err(format!("blocks[{i}].output"), format!("unknown signal `{}`", b.output));
        }
        producers.entry(&b.output).or_default().push(format!("block `{}`", b.name));
        for (j, input) in b.inputs.iter().enumerate() {
            if !declared(input) {
                ck.err(format!("blocks[{i}].inputs[{j}]"), format!("unknown signal `{input}`"));
            }
        }
    }
    for (i, a) in m.annotations.iter().enumerate() {
        let path = annotation_path(m, i);
        if let Some((inputs, outputs)) = a.plant_ports() {
            for (j, s) in inputs.iter().enumerate() {
                if !declared(s) {
                    ck.err(format!("{path}.inputs[{j}]"), format!("unknown signal `{s}`"));
                }
            }
            for (j, s) in outputs.iter().enumerate() {
                if !declared(s) {
                    ck.err(format!("{path}.outputs[{j}]"), format!("unknown signal `{s}`"));
                }
                // A plant output read by the controller arrives through an io input.
                if m.signal(s).is_some_and(|s| s.io != Some(Io::Input)) {
                    producers.entry(s).or_default().push(format!("plant `{}`", a.name()));
                }
            }
        }
        if let Some(watch) = a.watched() {
            for (j, s) in watch.iter().enumerate() {
                if !declared(s) {
                    ck.err(format!("{path}.watch[{j}]"), format!("observer watches unknown signal `{s}`"));
                }
            }
        }
    }
    for (i, s) in m.signals.iter().enumerate() {
        match producers.get(s.name.as_str()).map(Vec::as_slice) {
            None | Some([]) => {
                let consumed = m.blocks.iter().any(|b| b.inputs.contains(&s.name))
                    || m.annotations
                        .iter()
                        .any(|a| a.plant_ports().is_some_and(|(ins, _)| ins.contains(&s.name)));
                if consumed {
                    ck.err(format!("signals[{i}]"), format!("signal `{}` is consumed but never produced", s.name));
                } else {
                    ck.err(format!("signals[{i}]"), format!("signal `{}` is never produced", s.name));
                }
            }
            Some([_]) => {}
            Some(many) => ck.err(
                format!("signals[{i}]"),
                format!("signal `{}` has {} producers: {}", s.name, many.len(), many.join(", ")),
            ),
        }
    }
    if !ck.diags.is_empty() {
        return Err(ModelError::Invalid(ck.diags));
    }

    // Port dimensions, via shape inference on block expressions.
    for (i, b) in m.blocks.iter().enumerate() {
        let out = m.signal(&b.output).expect("checked above").shape;
        match b.expr().shape(&shapes) {
            Ok(s) if s == out => {}
            Ok(s) => ck.err(
                format!("blocks[{i}]"),
                format!("{} block `{}` produces {s} but `{}` is {out}", b.kind.name(), b.name, b.output),
            ),
            Err(e) => ck.err(format!("blocks[{i}]"), format!("{} block `{}`: {e}", b.kind.name(), b.name)),
        }
        if let super::BlockKind::Saturation { lo, hi } = &b.kind {
            if let (Some(l), Some(h)) = (lo.as_scalar(), hi.as_scalar()) {
                if !(l < h) {
                    ck.err(format!("blocks[{i}]"), format!("saturation bounds must satisfy lo < hi, got {l} and {h}"));
                }
            }
        }
    }
    let total = |names: &[String]| -> usize { names.iter().filter_map(|s| m.signal(s)).map(|s| s.shape.rows).sum() };
    for (i, a) in m.annotations.iter().enumerate() {
        let path = annotation_path(m, i);
        match a {
            Annotation::LinearPlant(p) => {
                let n = total(&p.outputs);
                let k = total(&p.inputs);
                let mut check = |field: &str, e: &Expr, want: Shape| match e.shape(&shapes) {
                    Ok(s) if s == want => {}
                    Ok(s) => ck.err(format!("{path}.{field}"), format!("linear plant `{}`: {field} is {s}, expected {want}", p.name)),
                    Err(err) => ck.err(format!("{path}.{field}"), format!("linear plant `{}`: {err}", p.name)),
                };
                check("A", &p.a, Shape::new(n, n));
                check("B", &p.b, Shape::new(n, k));
                if let Some(c) = &p.c {
                    check("C", c, Shape::new(n, n));
                }
                if let Some(d) = &p.d {
                    check("D", d, Shape::new(n, k));
                }
                for (j, s) in p.inputs.iter().chain(&p.outputs).enumerate() {
                    if m.signal(s).is_some_and(|s| s.shape.cols != 1) {
                        ck.err(path.to_string(), format!("plant port {j} `{s}` must be a column vector"));
                    }
                }
            }
            Annotation::GeneralPlant(p) => {
                if p.outputs.len() != 1 {
                    ck.err(format!("{path}.outputs"), "general plant must have exactly one output (its state)");
                } else {
                    let want = Shape::vector(p.state_dim);
                    if m.signal(&p.outputs[0]).map(|s| s.shape) != Some(want) {
                        ck.err(format!("{path}.state_dim"), format!("state `{}` must be {want}", p.outputs[0]));
                    }
                    match p.update.shape(&shapes) {
                        Ok(s) if s == want => {}
                        Ok(s) => ck.err(format!("{path}.update"), format!("update has shape {s}, expected {want}")),
                        Err(e) => ck.err(format!("{path}.update"), e.to_string()),
                    }
                }
            }
            Annotation::EllipsoidObserver(o) => {
                let n = total(&o.watch);
                match o.p.shape(&shapes) {
                    Ok(s) if s == Shape::new(n, n) => {}
                    Ok(s) => ck.err(format!("{path}.P"), format!("P is {s}, watched vector has {n} entries")),
                    Err(e) => ck.err(format!("{path}.P"), e.to_string()),
                }
                if let Expr::Const(pm) = &o.p {
                    if !crate::numerics::is_positive_definite(pm).unwrap_or(false) {
                        ck.err(format!("{path}.P"), "P must be symmetric positive definite");
                    }
                }
            }
            Annotation::GeneralObserver(o) => {
                let allowed: BTreeSet<&str> = o.watch.iter().map(String::as_str).chain(params.iter().map(String::as_str)).collect();
                for v in o.predicate.free_vars() {
                    if !allowed.contains(v.as_str()) {
                        ck.err(format!("{path}.predicate"), format!("predicate mentions `{v}`, which is not watched"));
                    }
                }
                if let Err(e) = o.predicate.check_shapes(&shapes) {
                    ck.err(format!("{path}.predicate"), e.to_string());
                }
            }
        }
    }
    if !ck.diags.is_empty() {
        return Err(ModelError::Invalid(ck.diags));
    }

    let nodes = fold_nodes(m, &mut ck)?;
    let loops = detect_loops(m, &nodes, &mut ck);
    if !ck.diags.is_empty() {
        return Err(ModelError::Invalid(ck.diags));
    }
    let mut loops = loops;
    let mut assumptions = Vec::new();
    for (i, a) in m.annotations.iter().enumerate() {
        let Some(watch) = a.watched() else { continue };
        let owner = loops.iter_mut().find(|l| {
            let (_, outs) = m.annotations[l.plant].plant_ports().expect("loops pair with plants");
            l.invariant.is_none() && watch.iter().all(|w| outs.contains(w))
        });
        match owner {
            Some(l) => {
                l.invariant = Some(match a {
                    Annotation::EllipsoidObserver(_) => LoopInvariant::Ellipsoid(i),
                    _ => LoopInvariant::Predicate(i),
                })
            }
            None => assumptions.push(i),
        }
    }
    Ok(Analysis {
        loops,
        assumptions,
        nodes,
        bindings,
        shapes,
    })
}

enum BlockKindExt<'a> {
    External(&'a str),
    Other,
}

impl<'a> BlockKindExt<'a> {
    fn of(b: &'a super::Block) -> Self {
        match &b.kind {
            super::BlockKind::External { function, .. } => BlockKindExt::External(function),
            _ => BlockKindExt::Other,
        }
    }
}

/// Folds inline signals and orders blocks topologically; reports cycles.
fn fold_nodes(m: &Model, ck: &mut Checker<'_>) -> Result<Vec<Node>, ModelError> {
    let mut done: BTreeMap<String, Expr> = BTreeMap::new();
    let mut state = vec![0u8; m.blocks.len()];
    fn visit(
        m: &Model,
        i: usize,
        state: &mut [u8],
        done: &mut BTreeMap<String, Expr>,
        stack: &mut Vec<usize>,
    ) -> Result<(), Vec<usize>> {
        match state[i] {
            2 => return Ok(()),
            1 => {
                let at = stack.iter().position(|&b| b == i).unwrap_or(0);
                return Err(stack[at..].to_vec());
            }
            _ => {}
        }
        state[i] = 1;
        stack.push(i);
        let b = &m.blocks[i];
        let mut subst = BTreeMap::new();
        for input in &b.inputs {
            if let Some(p) = m.producer(input) {
                visit(m, p, state, done, stack)?;
                if m.signal(input).is_some_and(|s| s.inline) {
                    subst.insert(input.clone(), done[input].clone());
                }
            }
        }
        done.insert(b.output.clone(), b.expr().subst_all(&subst));
        stack.pop();
        state[i] = 2;
        Ok(())
    }
    for i in 0..m.blocks.len() {
        let mut stack = Vec::new();
        if let Err(cycle) = visit(m, i, &mut state, &mut done, &mut stack) {
            let names: Vec<&str> = cycle.iter().map(|&b| m.blocks[b].name.as_str()).collect();
            ck.err(format!("blocks[{}]", cycle[0]), format!("computation blocks form a cycle: {}", names.join(" -> ")));
            return Err(ModelError::Invalid(std::mem::take(&mut ck.diags)));
        }
    }
    let signal_names: BTreeSet<&str> = m.signals.iter().map(|s| s.name.as_str()).collect();
    Ok(m.blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| !m.signal(&b.output).is_some_and(|s| s.inline))
        .map(|(i, b)| {
            let expr = done[&b.output].clone();
            let deps = expr
                .free_vars()
                .into_iter()
                .filter(|v| signal_names.contains(v.as_str()))
                .collect();
            Node {
                block: i,
                signal: b.output.clone(),
                expr,
                deps,
            }
        })
        .collect())
}

fn detect_loops(m: &Model, nodes: &[Node], ck: &mut Checker<'_>) -> Vec<Loop> {
    let consumers = |signal: &str| -> Vec<usize> {
        nodes.iter().enumerate().filter(|(_, n)| n.deps.contains(signal)).map(|(i, _)| i).collect()
    };
    let mut loops: Vec<Loop> = Vec::new();
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    for (ai, a) in m.plants() {
        let (inputs, outputs) = a.plant_ports().expect("plants have ports");
        // Forward from the plant outputs.
        let mut fwd: BTreeSet<usize> = BTreeSet::new();
        let mut work: Vec<String> = outputs.to_vec();
        while let Some(s) = work.pop() {
            for c in consumers(&s) {
                if fwd.insert(c) {
                    work.push(nodes[c].signal.clone());
                }
            }
        }
        // Backward from the plant inputs.
        let mut bwd: BTreeSet<usize> = BTreeSet::new();
        let mut work: Vec<String> = inputs.to_vec();
        while let Some(s) = work.pop() {
            if let Some(n) = nodes.iter().position(|n| n.signal == s) {
                if bwd.insert(n) {
                    work.extend(nodes[n].deps.iter().cloned());
                }
            }
        }
        let core: BTreeSet<usize> = fwd.intersection(&bwd).copied().collect();
        if core.is_empty() {
            ck.err(annotation_path(m, ai), format!("plant `{}` does not close a loop with the controller", a.name()));
            continue;
        }
        if let Some(&clash) = core.iter().find(|n| taken.contains(n)) {
            ck.err(
                annotation_path(m, ai),
                format!("block `{}` belongs to more than one loop", m.blocks[nodes[clash].block].name),
            );
            continue;
        }
        taken.extend(core.iter().copied());
        loops.push(Loop {
            id: loops.len() + 1,
            plant: ai,
            core: core.iter().map(|&n| nodes[n].block).collect(),
            support: Vec::new(),
            invariant: None,
        });
    }
    for l in &mut loops {
        let core_nodes: BTreeSet<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| l.core.contains(&n.block))
            .map(|(i, _)| i)
            .collect();
        for (i, n) in nodes.iter().enumerate() {
            if taken.contains(&i) {
                continue;
            }
            let cs = consumers(&n.signal);
            if !cs.is_empty() && cs.iter().all(|c| core_nodes.contains(c)) {
                l.support.push(n.block);
            }
        }
        taken.extend(
            nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| l.support.contains(&n.block))
                .map(|(i, _)| i),
        );
    }
    loops
}
