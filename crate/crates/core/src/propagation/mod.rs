//! Transport of invariants through generated code: forward ellipsoid images
//! for affine statements, weakest preconditions for everything else.

mod affine;
mod simplify;
mod wp;

use thiserror::Error;

use crate::expr::EvalError;
use crate::numerics::NumericsError;

pub use affine::{propagate_linear_forward, Forward, ForwardNames};
pub use simplify::{simplify, simplify_predicate};
pub use wp::{propagate_backward, wp_assign, Backward};

pub use crate::numerics::ellipsoid_affine_image;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropagationError {
    #[error("loop {0} has no statements")]
    EmptySpan(usize),
    #[error("statement {statement} (`{var}`) is not linear in the loop state")]
    Nonlinear { statement: usize, var: String },
    #[error("statement {statement} (`{var}`) has a constant offset; only linear maps are propagated")]
    Offset { statement: usize, var: String },
    #[error("plant input `{0}` is not a linear function of the plant state")]
    PlantInput(String),
    #[error("plant update with stacked target `{0}` cannot be propagated backward")]
    StackedUpdate(String),
    #[error("evaluating `{expr}`: {source}")]
    Eval {
        expr: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

/// One transfer of a predicate across a statement or a plant update.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationStep {
    pub loop_id: usize,
    /// `None` for the plant update at the end of the span.
    pub statement: Option<usize>,
    pub direction: Direction,
    pub input: String,
    pub output: String,
}
