//! The whole autocoding chain: bindings to parameter values, program
//! generation, contract placement, propagation and VC generation.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::codegen::{
    check_def_before_use, emit_text, generate_program, place_annotations, plant_update, AnnotatedProgram, CodegenError,
    ContractKind, LoopContracts, Origin, Style,
};
use crate::expr::{Expr, NoFunctions, Predicate, Shape, ShapeMap};
use crate::model::{
    apply_override, parse_model, validate_model, watched_vector, Analysis, Annotation, BlockKind, LoopInvariant, Model,
    ModelError, CAR_SCALARS,
};
use crate::numerics::{jacobian_fd, lqr_gain, Ellipsoid, Lqr, Matrix, NumericsError, Vector};
use crate::propagation::{propagate_backward, propagate_linear_forward, ForwardNames, PropagationError, PropagationStep};
use crate::vehicle::{plant_f, verify_equilibrium, CarFunctions, CarParams, Equilibrium, VehicleError, VehicleFn};
use crate::verifier::{
    extract_bounds, facts_from_predicate, gen_vcs, synthesize_linear_invariant, BoundInputs, Bounds, DomainBox, Vc,
    VerifierError, DEFAULT_SLIP_MAX,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("override: {0}")]
    Override(String),
    #[error("bindings: {0}")]
    Binding(String),
    #[error("parameter `{name}`: {message}")]
    Param { name: String, message: String },
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

impl PipelineError {
    /// Errors in the input itself, as opposed to failures of the analysis.
    pub fn is_input_error(&self) -> bool {
        matches!(self, PipelineError::Model(_) | PipelineError::Override(_))
    }
}

/// Parses a model and applies `key=value` overrides to its bindings.
pub fn load_model(text: &str, overrides: &[String]) -> Result<Model, PipelineError> {
    let mut m = parse_model(text)?;
    for o in overrides {
        apply_override(&mut m.bindings, o).map_err(PipelineError::Override)?;
    }
    Ok(m)
}

/// Parameter values after equilibrium refinement, linearization, LQR
/// design and invariant synthesis.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub params: BTreeMap<String, Matrix>,
    pub car: Option<CarParams>,
    pub functions: Vec<(String, VehicleFn)>,
    pub equilibrium: Option<Equilibrium>,
    /// LQR design per linear plant, keyed by annotation index.
    pub lqr: BTreeMap<usize, Lqr>,
    /// Synthesized ellipsoid per invariant observer, keyed by annotation index.
    pub synthesized: BTreeMap<usize, Ellipsoid>,
}

impl Resolved {
    pub fn car_functions(&self) -> CarFunctions {
        CarFunctions {
            params: self.car.clone().unwrap_or_default(),
            bindings: self.functions.clone(),
        }
    }

    fn eval(&self, e: &Expr, what: &str) -> Result<Matrix, PipelineError> {
        e.eval(&self.params, &NoFunctions).map_err(|err| PipelineError::Param {
            name: what.to_string(),
            message: err.to_string(),
        })
    }
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

fn column(v: &Vector) -> Matrix {
    Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn car_scalar(p: &CarParams, name: &str) -> f64 {
    match name {
        "r" => p.r,
        "Iw" => p.i_w,
        "lf" => p.lf,
        "lr" => p.lr,
        "m" => p.m,
        "Iz" => p.i_z,
        "delta" => p.delta,
        "csat" => p.csat,
        _ => unreachable!("not a car scalar: {name}"),
    }
}

pub fn resolve(m: &Model, a: &Analysis) -> Result<Resolved, PipelineError> {
    let b = &a.bindings;
    let mut r = Resolved {
        params: BTreeMap::new(),
        car: b.car_params(),
        functions: b.functions.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        equilibrium: None,
        lqr: BTreeMap::new(),
        synthesized: BTreeMap::new(),
    };
    if let Some(dt) = b.dt {
        if !(dt > 0.0) {
            return Err(PipelineError::Binding(format!("dt must be positive, got {dt}")));
        }
        r.params.insert("dt".into(), scalar(dt));
    }
    if let Some(car) = &r.car {
        car.validate()?;
        for name in CAR_SCALARS {
            r.params.insert(name.into(), scalar(car_scalar(car, name)));
        }
    }
    if let Some(eq) = &b.equilibrium {
        let car = r.car.clone().expect("equilibrium implies car parameters");
        let dt = b
            .dt
            .ok_or_else(|| PipelineError::Binding("equilibrium linearization needs `dt`".into()))?;
        let e = verify_equilibrium(&Vector::from_column_slice(&eq.x_ss), &Vector::from_column_slice(&eq.u_ss), &car)?;
        let (ac, bc) = jacobian_fd(|x: &Vector, u: &Vector| plant_f(x, u, &car), &e.x_ss, &e.u_ss, None)?;
        let n = ac.nrows();
        r.params.insert("xss".into(), column(&e.x_ss));
        r.params.insert("uss".into(), column(&e.u_ss));
        r.params.insert("A".into(), Matrix::identity(n, n) + ac * dt);
        r.params.insert("B".into(), bc * dt);
        r.equilibrium = Some(e);
    }
    let mut pending: Vec<(String, Expr)> = Vec::new();
    for (name, spec) in &b.params {
        let e = spec.to_expr().map_err(|message| PipelineError::Param {
            name: name.clone(),
            message,
        })?;
        pending.push((name.clone(), e));
    }
    while !pending.is_empty() {
        let before = pending.len();
        let mut rest = Vec::new();
        for (name, e) in pending {
            match e.eval(&r.params, &NoFunctions) {
                Ok(v) => {
                    r.params.insert(name, v);
                }
                Err(_) => rest.push((name, e)),
            }
        }
        if rest.len() == before {
            let (name, e) = &rest[0];
            return Err(PipelineError::Param {
                name: name.clone(),
                message: e.eval(&r.params, &NoFunctions).unwrap_err().to_string(),
            });
        }
        pending = rest;
    }

    for (i, ann) in m.annotations.iter().enumerate() {
        let Annotation::LinearPlant(p) = ann else { continue };
        let Some(gain) = &p.gain else { continue };
        if r.params.contains_key(gain) {
            continue;
        }
        let lqr = b
            .lqr
            .as_ref()
            .ok_or_else(|| PipelineError::Binding(format!("gain `{gain}` needs a `bindings.lqr` section")))?;
        let am = r.eval(&p.a, &format!("{}.A", p.name))?;
        let bm = r.eval(&p.b, &format!("{}.B", p.name))?;
        let q = r.eval(&lqr.q.to_expr().map_err(PipelineError::Binding)?, "lqr.Q")?;
        let rr = r.eval(&lqr.r.to_expr().map_err(PipelineError::Binding)?, "lqr.R")?;
        let design = lqr_gain(&am, &bm, &q, &rr)?;
        r.params.insert(gain.clone(), design.k.clone());
        r.lqr.insert(i, design);
    }

    for l in &a.loops {
        let Some(LoopInvariant::Ellipsoid(o)) = l.invariant else { continue };
        let Annotation::EllipsoidObserver(obs) = &m.annotations[o] else { continue };
        let Expr::Var(name) = &obs.p else { continue };
        if r.params.contains_key(name) {
            continue;
        }
        let Annotation::LinearPlant(p) = &m.annotations[l.plant] else {
            return Err(PipelineError::Binding(format!(
                "ellipsoid `{name}` of observer `{}` is unbound and its loop plant is not linear",
                obs.name
            )));
        };
        let gain = p.gain.as_ref().ok_or_else(|| {
            PipelineError::Binding(format!("ellipsoid `{name}` is unbound and plant `{}` has no gain", p.name))
        })?;
        let am = r.eval(&p.a, &format!("{}.A", p.name))?;
        let bm = r.eval(&p.b, &format!("{}.B", p.name))?;
        let k = r.params[gain].clone();
        let syn = b.synthesis.as_ref();
        let lyap_q = match syn.and_then(|s| s.lyap_q.as_ref()) {
            Some(spec) => Some(r.eval(&spec.to_expr().map_err(PipelineError::Binding)?, "synthesis.lyap_q")?),
            None => None,
        };
        let initial_box = syn.and_then(|s| s.initial_box.clone());
        let e = synthesize_linear_invariant(&am, &bm, &k, lyap_q.as_ref(), initial_box.as_deref())?;
        r.params.insert(name.clone(), e.p().clone());
        r.synthesized.insert(o, e);
    }
    Ok(r)
}

/// Output of [`autocode`].
#[derive(Debug, Clone)]
pub struct Autocoded {
    pub model: Model,
    pub analysis: Analysis,
    pub resolved: Resolved,
    pub program: AnnotatedProgram,
    pub steps: Vec<PropagationStep>,
    /// Shapes including the propagated ellipsoid parameters.
    pub shapes: ShapeMap,
    pub facts: DomainBox,
    /// Present for car models; an error if a physical assumption is missing.
    pub bounds: Option<Result<Bounds, VerifierError>>,
    pub vcs: Vec<Vc>,
}

impl Autocoded {
    pub fn annotated_text(&self) -> String {
        emit_text(&self.program, Style::MatlabLike)
    }
}

/// Names of the state and slip arguments of the vehicle functions.
fn car_arguments(m: &Model, r: &Resolved) -> Option<(String, String)> {
    m.blocks.iter().find_map(|b| match &b.kind {
        BlockKind::External { function, .. } if b.inputs.len() == 2 && r.functions.iter().any(|(n, _)| n == function) => {
            Some((b.inputs[0].clone(), b.inputs[1].clone()))
        }
        _ => None,
    })
}

fn car_bounds(m: &Model, a: &Analysis, r: &Resolved, facts: &DomainBox) -> Option<Result<Bounds, VerifierError>> {
    let car = r.car.as_ref()?;
    let eq = r.equilibrium.as_ref()?;
    let (_, u_name) = car_arguments(m, r)?;
    let mut ellipsoid = None;
    let mut z = None;
    for l in &a.loops {
        match (&m.annotations[l.plant], l.invariant) {
            (Annotation::LinearPlant(p), Some(LoopInvariant::Ellipsoid(o))) => {
                let Annotation::EllipsoidObserver(obs) = &m.annotations[o] else { continue };
                let pm = obs.p.eval(&r.params, &NoFunctions).ok()?;
                let k = r.params.get(p.gain.as_ref()?)?.clone();
                ellipsoid = Some((Ellipsoid::new(pm).ok()?, k));
            }
            (Annotation::GeneralPlant(p), _) => z = facts.get(&p.outputs[0]).map(|b| b.intervals.clone()),
            _ => {}
        }
    }
    let (inv, k) = ellipsoid?;
    let z = z?;
    let slip = facts.get(&u_name).map(|b| b.intervals.clone());
    Some(
        extract_bounds(&BoundInputs {
            invariant: &inv,
            gain: &k,
            x_ss: &eq.x_ss,
            u_ss: &eq.u_ss,
            z: &z,
            slip: slip.as_deref(),
            slip_max: DEFAULT_SLIP_MAX,
            car,
        })
        .map_err(|e| match e {
            VerifierError::MissingSlipFact(_) => VerifierError::MissingSlipFact(u_name.clone()),
            e => e,
        }),
    )
}

/// Loop-end requirement: the invariant itself, or `s·P` when the synthesis
/// bindings ask for a strictly smaller target.
fn loop_contracts(m: &Model, a: &Analysis, invariant: LoopInvariant) -> LoopContracts {
    let obs = &m.annotations[invariant.observer()];
    let pred = obs.observer_predicate().expect("loop invariants are observers");
    let scale = a.bindings.synthesis.as_ref().map_or(1.0, |s| s.ensure_scale);
    match obs {
        Annotation::EllipsoidObserver(e) if scale != 1.0 => LoopContracts {
            require: pred,
            ensure: Predicate::le(
                Expr::quadratic_form(watched_vector(&e.watch), Expr::scalar(scale) * e.p.clone()),
                Expr::scalar(1.0),
            ),
        },
        _ => LoopContracts::inductive(pred),
    }
}

pub fn autocode(m: Model) -> Result<Autocoded, PipelineError> {
    let a = validate_model(&m)?;
    let mut r = resolve(&m, &a)?;
    let mut prog = generate_program(&m, &a)?;
    let invariants: BTreeMap<usize, LoopContracts> =
        a.loops.iter().filter_map(|l| Some((l.id, loop_contracts(&m, &a, l.invariant?)))).collect();
    place_annotations(&mut prog, &m, &a, &invariants)?;

    let mut shapes = a.shapes.clone();
    let mut steps = Vec::new();
    let mut linear_seen = 0;
    for l in &a.loops {
        match (&m.annotations[l.plant], l.invariant) {
            (Annotation::LinearPlant(p), Some(LoopInvariant::Ellipsoid(o))) => {
                let Annotation::EllipsoidObserver(obs) = &m.annotations[o] else { unreachable!() };
                let names = if linear_seen == 0 {
                    ForwardNames {
                        q1: "Q1".into(),
                        q2: "Q2".into(),
                    }
                } else {
                    ForwardNames {
                        q1: format!("Q1_{}", l.id),
                        q2: format!("Q2_{}", l.id),
                    }
                };
                linear_seen += 1;
                let pm = Ellipsoid::new(r.eval(&obs.p, &obs.name)?)?;
                let fwd = propagate_linear_forward(&mut prog, l.id, p, &shapes, &r.params, &pm, &names)?;
                let n1 = fwd.q1.dim();
                let n2 = fwd.q2.dim();
                shapes.vars.insert(names.q1.clone(), Shape::new(n1, n1));
                shapes.vars.insert(names.q2.clone(), Shape::new(n2, n2));
                r.params.insert(names.q1, fwd.q1.p().clone());
                r.params.insert(names.q2, fwd.q2.p().clone());
                steps.extend(fwd.steps);
            }
            (_, None) => {}
            (plant, Some(_)) => {
                let post = &invariants[&l.id].ensure;
                let bwd = propagate_backward(&mut prog, l.id, post, &plant_update(plant))?;
                steps.extend(bwd.steps);
            }
        }
    }
    check_def_before_use(&prog)?;

    let mut facts = DomainBox::default();
    for c in &prog.contracts {
        let relevant = matches!(
            (&c.origin, c.kind),
            (Origin::Invariant { .. }, ContractKind::Require) | (Origin::Assumption { .. }, _)
        );
        let Some(p) = c.body.pred().filter(|_| relevant) else { continue };
        for (var, ivs) in facts_from_predicate(p, &r.params, &shapes) {
            facts.insert(&var, ivs, &c.origin.to_string())?;
        }
    }
    let bounds = car_bounds(&m, &a, &r, &facts);
    if let (Some(Ok(b)), Some((x, u))) = (&bounds, car_arguments(&m, &r)) {
        facts.insert(&x, b.x.clone(), "bounds")?;
        facts.insert(&u, b.u.clone(), "bounds")?;
    }
    let vcs = gen_vcs(&prog, &facts, &r.params, &shapes)?;
    Ok(Autocoded {
        model: m,
        analysis: a,
        resolved: r,
        program: prog,
        steps,
        shapes,
        facts,
        bounds,
        vcs,
    })
}
