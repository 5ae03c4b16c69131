//! Straight-line programs generated from a validated model, with
//! require/assume/ensure contracts anchored before or after statements.

mod emit;
mod placement;
mod program;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::expr::{Expr, Predicate};

pub use emit::{emit_text, parse_program, Style};
pub use placement::{check_def_before_use, place_annotations, LoopContracts};
pub(crate) use emit::{parse_pred_field, parse_program_record, write_program_records};
pub(crate) use placement::plant_update;
pub use program::generate_program;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodegenError {
    #[error("loop {0}: controller code cannot be scheduled contiguously")]
    NotContiguous(usize),
    #[error("{contract}: variable `{var}` is never assigned")]
    Unassigned { var: String, contract: String },
    #[error("{contract}: `{var}` is used before it is assigned")]
    UseBeforeDef { var: String, contract: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatementKind {
    Input(String),
    Assign(String, Expr),
    Output(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub kind: StatementKind,
    /// Index of the model block the statement was generated from.
    pub block: Option<usize>,
}

impl Statement {
    /// Variable defined by the statement, if any.
    pub fn defines(&self) -> Option<&str> {
        match &self.kind {
            StatementKind::Input(v) | StatementKind::Assign(v, _) => Some(v),
            StatementKind::Output(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ContractKind {
    Require,
    Assume,
    Ensure,
}

impl ContractKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            ContractKind::Require => "requires",
            ContractKind::Assume => "assumes",
            ContractKind::Ensure => "ensures",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Before(usize),
    After(usize),
}

impl Anchor {
    /// Position in program order: `Before(i) < After(i) < Before(i + 1)`.
    pub fn position(&self) -> usize {
        match self {
            Anchor::Before(i) => 2 * i,
            Anchor::After(i) => 2 * i + 1,
        }
    }

    pub fn statement(&self) -> usize {
        match self {
            Anchor::Before(i) | Anchor::After(i) => *i,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContractBody {
    Pred(Predicate),
    /// Plant state update `target = expr`; `target` is a variable or a
    /// stacked vector of variables.
    Update { target: Expr, expr: Expr },
}

impl ContractBody {
    pub fn pred(&self) -> Option<&Predicate> {
        match self {
            ContractBody::Pred(p) => Some(p),
            ContractBody::Update { .. } => None,
        }
    }
}

impl std::fmt::Display for ContractBody {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ContractBody::Pred(p) => write!(f, "{p}"),
            ContractBody::Update { target, expr } => write!(f, "{target} = {expr}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    /// Inductive invariant of a loop.
    Invariant { loop_id: usize },
    /// Plant model of a loop.
    Plant { loop_id: usize },
    /// Observer that is not a loop invariant.
    Assumption { observer: String },
    /// Forward image: stage 1 on the controller output, stage 2 after the
    /// plant update.
    Forward { loop_id: usize, stage: u8 },
    /// Weakest precondition, at the plant update or at the span start.
    Backward { loop_id: usize, at_start: bool },
}

impl Origin {
    pub fn loop_id(&self) -> Option<usize> {
        match self {
            Origin::Invariant { loop_id }
            | Origin::Plant { loop_id }
            | Origin::Forward { loop_id, .. }
            | Origin::Backward { loop_id, .. } => Some(*loop_id),
            Origin::Assumption { .. } => None,
        }
    }
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::Invariant { loop_id } => write!(f, "invariant:{loop_id}"),
            Origin::Plant { loop_id } => write!(f, "plant:{loop_id}"),
            Origin::Assumption { observer } => write!(f, "assumption:{observer}"),
            Origin::Forward { loop_id, stage } => write!(f, "forward{stage}:{loop_id}"),
            Origin::Backward { loop_id, at_start: true } => write!(f, "backward-start:{loop_id}"),
            Origin::Backward { loop_id, at_start: false } => write!(f, "backward-plant:{loop_id}"),
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (tag, arg) = s.split_once(':').ok_or_else(|| format!("bad origin `{s}`"))?;
        let id = || arg.parse::<usize>().map_err(|_| format!("bad loop id in `{s}`"));
        Ok(match tag {
            "invariant" => Origin::Invariant { loop_id: id()? },
            "plant" => Origin::Plant { loop_id: id()? },
            "assumption" => Origin::Assumption { observer: arg.to_string() },
            "forward1" => Origin::Forward { loop_id: id()?, stage: 1 },
            "forward2" => Origin::Forward { loop_id: id()?, stage: 2 },
            "backward-start" => Origin::Backward { loop_id: id()?, at_start: true },
            "backward-plant" => Origin::Backward { loop_id: id()?, at_start: false },
            _ => return Err(format!("unknown origin `{tag}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contract {
    pub kind: ContractKind,
    pub body: ContractBody,
    pub anchor: Anchor,
    pub origin: Origin,
}

impl Contract {
    /// Order of contracts sharing an anchor: the forward image of the
    /// controller output first, then hypotheses, the plant, and the
    /// conclusions.
    fn rank(&self) -> u8 {
        match (&self.kind, &self.origin) {
            (ContractKind::Ensure, Origin::Forward { stage: 1, .. }) => 0,
            (ContractKind::Require, Origin::Invariant { .. }) | (_, Origin::Assumption { .. }) => 1,
            (ContractKind::Require, _) => 2,
            (ContractKind::Assume, _) => 3,
            (ContractKind::Ensure, Origin::Invariant { .. }) => 4,
            (ContractKind::Ensure, _) => 5,
        }
    }

    pub fn describe(&self) -> String {
        format!("{} {} ({})", self.kind.keyword(), self.body, self.origin)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotatedProgram {
    pub name: String,
    pub statements: Vec<Statement>,
    /// Sorted by anchor position, then by contract rank.
    pub contracts: Vec<Contract>,
    /// Loop id to first and last statement index.
    pub spans: BTreeMap<usize, (usize, usize)>,
}

impl AnnotatedProgram {
    /// Adds a contract unless an identical one is present. Returns whether
    /// the program changed.
    pub fn add_contract(&mut self, c: Contract) -> bool {
        if self.contracts.contains(&c) {
            return false;
        }
        self.contracts.push(c);
        self.contracts
            .sort_by_key(|c| (c.anchor.position(), c.rank()));
        true
    }

    pub fn contracts_at(&self, anchor: Anchor) -> impl Iterator<Item = &Contract> {
        self.contracts.iter().filter(move |c| c.anchor == anchor)
    }

    pub fn find(&self, origin: &Origin, kind: ContractKind) -> Option<&Contract> {
        self.contracts.iter().find(|c| &c.origin == origin && c.kind == kind)
    }

    /// Index of the first statement defining `var`.
    pub fn first_definition(&self, var: &str) -> Option<usize> {
        self.statements.iter().position(|s| s.defines() == Some(var))
    }

    /// First statement of a loop span that is not an input.
    pub fn span_body_start(&self, loop_id: usize) -> Option<usize> {
        let (first, last) = *self.spans.get(&loop_id)?;
        (first..=last).find(|&i| !matches!(self.statements[i].kind, StatementKind::Input(_)))
    }
}
