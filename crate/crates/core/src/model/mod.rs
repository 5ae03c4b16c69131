//! Controller model: computation blocks over typed signals, plus plant and
//! observer annotation blocks.
//!
//! Blocks have a single output signal. A signal marked `inline` is not
//! assigned in the generated program; its defining expression is folded
//! into every consumer.

mod bindings;
mod file;
mod validate;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::expr::{Expr, Predicate, Shape};

pub use bindings::{apply_override, Bindings, CAR_SCALARS, EquilibriumBinding, LqrBinding, SynthesisBinding};
pub use file::{parse_model, print_model, MatrixSpec};
pub use validate::{validate_model, Analysis, Loop, LoopInvariant};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    /// Dotted location inside the document, e.g. `blocks[2].inputs`.
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{}", join_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

impl ModelError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            ModelError::Invalid(d) => d,
            ModelError::Syntax(_) => &[],
        }
    }
}

fn join_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Io {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub name: String,
    pub shape: Shape,
    pub io: Option<Io>,
    pub inline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrigFn {
    Sin,
    Cos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    /// `output = matrix * input`
    Gain(Expr),
    /// Signed sum of the inputs, one sign per input.
    Sum(Vec<bool>),
    /// Product of the inputs left to right, each optionally transposed.
    Product(Vec<bool>),
    Saturation { lo: Expr, hi: Expr },
    Trig(TrigFn),
    Constant(Expr),
    External { function: String, arity: usize },
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::Gain(_) => "gain",
            BlockKind::Sum(_) => "sum",
            BlockKind::Product(_) => "product",
            BlockKind::Saturation { .. } => "saturation",
            BlockKind::Trig(_) => "trig",
            BlockKind::Constant(_) => "constant",
            BlockKind::External { .. } => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub inputs: Vec<String>,
    pub output: String,
}

impl Block {
    /// The block's output in terms of its input signal names.
    pub fn expr(&self) -> Expr {
        let ins: Vec<Expr> = self.inputs.iter().map(Expr::var).collect();
        match &self.kind {
            BlockKind::Gain(m) => m.clone() * ins[0].clone(),
            BlockKind::Sum(signs) => {
                let mut acc: Option<Expr> = None;
                for (e, &plus) in ins.into_iter().zip(signs) {
                    acc = Some(match acc {
                        None if plus => e,
                        None => -e,
                        Some(a) if plus => a + e,
                        Some(a) => a - e,
                    });
                }
                acc.expect("sum blocks have inputs")
            }
            BlockKind::Product(transpose) => ins
                .into_iter()
                .zip(transpose)
                .map(|(e, &t)| if t { e.transpose() } else { e })
                .reduce(|a, b| a * b)
                .expect("product blocks have inputs"),
            BlockKind::Saturation { lo, hi } => Expr::sat(ins[0].clone(), lo.clone(), hi.clone()),
            BlockKind::Trig(TrigFn::Sin) => Expr::Sin(Box::new(ins[0].clone())),
            BlockKind::Trig(TrigFn::Cos) => Expr::Cos(Box::new(ins[0].clone())),
            BlockKind::Constant(v) => v.clone(),
            BlockKind::External { function, .. } => Expr::apply(function.clone(), ins),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub name: String,
    pub a: Expr,
    pub b: Expr,
    pub c: Option<Expr>,
    pub d: Option<Expr>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Parameter that receives the LQR gain designed for this plant.
    pub gain: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralPlant {
    pub name: String,
    /// Next value of the state, which is the plant's single output signal.
    pub update: Expr,
    pub state_dim: usize,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidObserver {
    pub name: String,
    /// Shape matrix, usually a parameter name such as `P`.
    pub p: Expr,
    pub watch: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralObserver {
    pub name: String,
    pub predicate: Predicate,
    pub watch: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    LinearPlant(LinearPlant),
    GeneralPlant(GeneralPlant),
    EllipsoidObserver(EllipsoidObserver),
    GeneralObserver(GeneralObserver),
}

impl Annotation {
    pub fn name(&self) -> &str {
        match self {
            Annotation::LinearPlant(p) => &p.name,
            Annotation::GeneralPlant(p) => &p.name,
            Annotation::EllipsoidObserver(o) => &o.name,
            Annotation::GeneralObserver(o) => &o.name,
        }
    }

    pub fn is_plant(&self) -> bool {
        matches!(self, Annotation::LinearPlant(_) | Annotation::GeneralPlant(_))
    }

    pub fn plant_ports(&self) -> Option<(&[String], &[String])> {
        match self {
            Annotation::LinearPlant(p) => Some((&p.inputs, &p.outputs)),
            Annotation::GeneralPlant(p) => Some((&p.inputs, &p.outputs)),
            _ => None,
        }
    }

    pub fn watched(&self) -> Option<&[String]> {
        match self {
            Annotation::EllipsoidObserver(o) => Some(&o.watch),
            Annotation::GeneralObserver(o) => Some(&o.watch),
            _ => None,
        }
    }

    /// The predicate an observer asserts.
    pub fn observer_predicate(&self) -> Option<Predicate> {
        match self {
            Annotation::EllipsoidObserver(o) => {
                let x = watched_vector(&o.watch);
                Some(Predicate::le(Expr::quadratic_form(x, o.p.clone()), Expr::scalar(1.0)))
            }
            Annotation::GeneralObserver(o) => Some(o.predicate.clone()),
            _ => None,
        }
    }
}

/// A single watched signal, or the stacked vector `[a; b; ...]`.
pub fn watched_vector(watch: &[String]) -> Expr {
    if watch.len() == 1 {
        Expr::var(&watch[0])
    } else {
        Expr::Block(watch.iter().map(|w| vec![Expr::var(w)]).collect())
    }
}

/// Source lines of model elements, keyed by document path. Ignored by
/// equality so that reprinted models compare equal.
#[derive(Debug, Clone, Default)]
pub struct SourceLines(pub BTreeMap<String, usize>);

impl PartialEq for SourceLines {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

impl SourceLines {
    pub fn get(&self, path: &str) -> Option<usize> {
        let mut p = path;
        loop {
            if let Some(l) = self.0.get(p) {
                return Some(*l);
            }
            p = &p[..p.rfind('.')?];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub signals: Vec<Signal>,
    pub blocks: Vec<Block>,
    pub annotations: Vec<Annotation>,
    /// Raw `bindings` table; interpreted by [`Bindings::from_table`].
    pub bindings: toml::Table,
    pub lines: SourceLines,
}

impl Model {
    pub fn signal(&self, name: &str) -> Option<&Signal> {
        self.signals.iter().find(|s| s.name == name)
    }

    pub fn signal_index(&self, name: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.name == name)
    }

    pub fn producer(&self, signal: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.output == signal)
    }

    pub fn plants(&self) -> impl Iterator<Item = (usize, &Annotation)> {
        self.annotations.iter().enumerate().filter(|(_, a)| a.is_plant())
    }

    pub(crate) fn diag(&self, path: String, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            line: self.lines.get(&path),
            path,
            message: message.into(),
        }
    }
}
