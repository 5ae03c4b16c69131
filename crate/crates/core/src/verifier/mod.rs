//! Verification conditions and their discharge.
//!
//! Ellipsoid pairs are decided exactly by an eigenvalue test. Other
//! implications go through seeded sampling (falsification) and interval
//! bisection (certification); whatever neither settles is `UNKNOWN`.

mod bounds;
mod containment;
pub mod interval;
mod nonlinear;
mod report;
mod synthesis;
mod vcgen;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{Expr, Functions, Layered, Predicate, Scope};
use crate::numerics::{Matrix, NumericsError};

pub use bounds::{extract_bounds, phi_interval, BoundInputs, Bounds};
pub use containment::check_ellipsoid_containment;
pub use interval::{eval_interval, Interval, IntervalError, IntervalMatrix};
pub use nonlinear::check_nonlinear_implication;
pub use report::{render_report, ReportEntry, Summary};
pub use synthesis::{synthesize_linear_invariant, DEFAULT_LYAPUNOV_Q};
pub use vcgen::{facts_from_predicate, gen_vcs};

/// Tolerance of the eigenvalue containment test.
pub const ELLIPSOID_TOL: f64 = 1e-9;
/// Required strict margin when an interval bound certifies an inequality.
pub const CERT_MARGIN: f64 = 1e-7;
/// Default upper end of the slip range used for the domain box.
pub const DEFAULT_SLIP_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifierError {
    #[error("closed loop is unstable (spectral radius {0})")]
    Unstable(f64),
    #[error("{0} has no matching propagated predicate")]
    Unmatched(String),
    #[error("empty domain for `{0}`")]
    EmptyDomain(String),
    #[error("bound extraction needs the slip range of `{0}` as a physical assumption, e.g. `-0.95 <= u && u <= 2`")]
    MissingSlipFact(String),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("evaluating {what}: {message}")]
    Eval { what: String, message: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Per-variable componentwise bounds with the facts they came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DomainBox {
    pub vars: BTreeMap<String, VarBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarBox {
    pub intervals: Vec<Interval>,
    pub provenance: String,
}

impl DomainBox {
    /// Adds bounds for `var`, intersecting with any already present.
    pub fn insert(&mut self, var: &str, intervals: Vec<Interval>, provenance: &str) -> Result<(), VerifierError> {
        match self.vars.get_mut(var) {
            None => {
                if intervals.iter().any(|i| !(i.lo <= i.hi)) {
                    return Err(VerifierError::EmptyDomain(var.to_string()));
                }
                self.vars.insert(
                    var.to_string(),
                    VarBox {
                        intervals,
                        provenance: provenance.to_string(),
                    },
                );
            }
            Some(b) => {
                if b.intervals.len() != intervals.len() {
                    return Err(VerifierError::Dimension {
                        what: "domain fact",
                        expected: b.intervals.len(),
                        got: intervals.len(),
                    });
                }
                for (old, new) in b.intervals.iter_mut().zip(&intervals) {
                    *old = old
                        .intersect(new)
                        .ok_or_else(|| VerifierError::EmptyDomain(var.to_string()))?;
                }
                if !b.provenance.split(',').any(|p| p == provenance) {
                    b.provenance = format!("{},{provenance}", b.provenance);
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, var: &str) -> Option<&VarBox> {
        self.vars.get(var)
    }

    /// The facts about `names` only.
    pub fn restrict<'a>(&self, names: impl IntoIterator<Item = &'a String>) -> DomainBox {
        DomainBox {
            vars: names
                .into_iter()
                .filter_map(|n| self.vars.get(n).map(|b| (n.clone(), b.clone())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcKind {
    /// Both sides are unit level sets of constant quadratic forms over the
    /// same vector.
    Containment,
    Implication,
}

impl std::fmt::Display for VcKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VcKind::Containment => "containment",
            VcKind::Implication => "implication",
        })
    }
}

impl std::str::FromStr for VcKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "containment" => Ok(VcKind::Containment),
            "implication" => Ok(VcKind::Implication),
            _ => Err(format!("unknown VC kind `{s}`")),
        }
    }
}

/// `hypothesis ⇒ conclusion` over the domain box.
#[derive(Debug, Clone, PartialEq)]
pub struct Vc {
    pub id: String,
    pub loop_id: Option<usize>,
    pub kind: VcKind,
    pub hypothesis: Predicate,
    pub conclusion: Predicate,
    pub domain: DomainBox,
    /// Contract origins of the two sides, `hypothesis=>conclusion`.
    pub origin: String,
}

/// A point given as values of the program variables.
pub type Point = BTreeMap<String, Matrix>;

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub point: Point,
    /// Violation `lhs - rhs` of the hypothesis at the point, at most the
    /// ellipsoid tolerance.
    pub hypothesis: f64,
    /// Violation of the conclusion, strictly positive.
    pub conclusion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Verified,
    Falsified(Witness),
    Unknown(String),
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Verified => "VERIFIED",
            Status::Falsified(_) => "FALSIFIED",
            Status::Unknown(_) => "UNKNOWN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Effort {
    /// Hypothesis points sampled.
    pub samples: usize,
    /// Boxes evaluated by bisection.
    pub boxes: usize,
    /// Largest conclusion violation seen at a sampled hypothesis point.
    pub max_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub status: Status,
    pub effort: Effort,
}

impl Verdict {
    pub fn verified(effort: Effort) -> Self {
        Verdict {
            status: Status::Verified,
            effort,
        }
    }

    pub fn unknown(reason: impl Into<String>, effort: Effort) -> Self {
        Verdict {
            status: Status::Unknown(reason.into()),
            effort,
        }
    }

    /// Re-evaluates both sides at `point`. The verdict is FALSIFIED only if
    /// the hypothesis holds (up to [`ELLIPSOID_TOL`]) and the conclusion
    /// fails; otherwise UNKNOWN.
    pub fn falsified(vc: &Vc, point: Point, ctx: &Context<'_>, effort: Effort) -> Self {
        let scope = Layered(&point, ctx.params);
        let hyp = vc.hypothesis.violation(&scope, ctx.funcs);
        let concl = vc.conclusion.violation(&scope, ctx.funcs);
        match (hyp, concl) {
            (Ok(h), Ok(c)) if h <= ELLIPSOID_TOL && c > 0.0 => Verdict {
                status: Status::Falsified(Witness {
                    point,
                    hypothesis: h,
                    conclusion: c,
                }),
                effort,
            },
            _ => Verdict::unknown("candidate witness failed re-evaluation", effort),
        }
    }
}

/// Parameter values and external functions shared by all checks.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub params: &'a BTreeMap<String, Matrix>,
    pub funcs: &'a dyn Functions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub samples: usize,
    /// Bisection depth per dimension.
    pub depth: usize,
    pub seed: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            samples: 100_000,
            depth: 12,
            seed: 42,
        }
    }
}

/// Program variables of a predicate: free names not bound as parameters.
pub(crate) fn program_vars(p: &Predicate, params: &dyn Scope) -> BTreeSet<String> {
    p.free_vars().into_iter().filter(|v| params.get(v).is_none()).collect()
}

/// The vector and constant matrix of a unit level set `x' * M * x <= 1`;
/// `None` stands for the identity in `x' * x <= 1`.
pub(crate) fn level_set_matrix<'p>(p: &'p Predicate, params: &dyn Scope) -> Option<(&'p Expr, Option<Matrix>)> {
    let (x, m) = p.as_level_set()?;
    let Some(m) = m else {
        return Some((x, None));
    };
    if m.free_vars().iter().any(|v| params.get(v).is_none()) {
        return None;
    }
    let m = m.eval(params, &crate::expr::NoFunctions).ok()?;
    (m.nrows() == m.ncols()).then_some((x, Some(m)))
}

/// Discharges one VC. `stream` selects an independent random stream so
/// results do not depend on scheduling.
pub fn check_vc(vc: &Vc, budget: &Budget, ctx: &Context<'_>, stream: u64) -> Verdict {
    match vc.kind {
        VcKind::Containment => containment::check_vc(vc, ctx),
        VcKind::Implication => check_nonlinear_implication(vc, budget, ctx, stream),
    }
}

/// Checks all VCs in parallel; the i-th VC uses stream `i`.
pub fn check_all(vcs: &[Vc], budget: &Budget, ctx: &Context<'_>) -> Vec<Verdict> {
    vcs.par_iter()
        .enumerate()
        .map(|(i, vc)| check_vc(vc, budget, ctx, i as u64))
        .collect()
}
