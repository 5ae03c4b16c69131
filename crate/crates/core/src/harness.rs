//! Explicit-Euler closed-loop simulation of the car under both controllers,
//! with invariant monitors.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Annotation, LoopInvariant};
use crate::pipeline::Autocoded;
use crate::expr::{EvalError, Functions, Layered, NoFunctions, Predicate, Scope};
use crate::numerics::{cholesky, inverse, Ellipsoid, Matrix, Vector};
use crate::vehicle::{
    friction, linear_control, longitudinal_slips, phi, plant_f, torque_with_friction, wheel_dynamics, CarParams,
    VehicleError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("step {step}: {source}")]
    Vehicle { step: usize, source: VehicleError },
    #[error("step {step}: non-finite state")]
    NonFinite { step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("monitor `{name}`: {source}")]
    Monitor { name: String, source: EvalError },
}

/// The controlled car around one equilibrium.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub car: CarParams,
    pub k: Matrix,
    pub x_ss: Vector,
    pub u_ss: Vector,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarState {
    /// `[V, β, ψ̇]`
    pub x: Vector,
    /// Wheel speeds.
    pub omega: Vector,
}

/// Everything computed from one state: the commands and the signals the
/// monitors see.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub x: Vector,
    pub xtilde: Vector,
    /// Commanded slips.
    pub u: Vector,
    pub omega: Vector,
    /// Commanded wheel speeds.
    pub phi: Vector,
    pub z: Vector,
    pub torque: Vector,
    pub monitors: Vec<f64>,
}

impl Record {
    pub fn scope(&self) -> BTreeMap<String, Matrix> {
        let col = |v: &Vector| Matrix::from_column_slice(v.len(), 1, v.as_slice());
        BTreeMap::from([
            ("x".to_string(), col(&self.x)),
            ("xtilde".to_string(), col(&self.xtilde)),
            ("u".to_string(), col(&self.u)),
            ("omega".to_string(), col(&self.omega)),
            ("phi".to_string(), col(&self.phi)),
            ("z".to_string(), col(&self.z)),
            ("torque".to_string(), col(&self.torque)),
        ])
    }
}

impl ClosedLoop {
    /// State with tracking error `xtilde` and manifold offset `z`.
    pub fn state_at(&self, xtilde: &Vector, z: &Vector) -> Result<CarState, VehicleError> {
        let x = &self.x_ss + xtilde;
        let u = &self.u_ss + linear_control(xtilde, &self.k)?;
        Ok(CarState {
            omega: phi(&x, &u, &self.car)? + z,
            x,
        })
    }

    pub fn equilibrium_state(&self) -> Result<CarState, VehicleError> {
        self.state_at(&Vector::zeros(self.x_ss.len()), &Vector::zeros(self.u_ss.len()))
    }

    /// Controller outputs at `s`, without monitor values.
    pub fn observe(&self, s: &CarState) -> Result<Record, VehicleError> {
        let xtilde = &s.x - &self.x_ss;
        let u = &self.u_ss + linear_control(&xtilde, &self.k)?;
        let phi = phi(&s.x, &u, &self.car)?;
        let z = &s.omega - &phi;
        let slips = longitudinal_slips(&s.x, &s.omega, &self.car)?;
        let fx = friction(&slips, &self.car)?;
        let torque = torque_with_friction(&z, &s.x, &u, &fx, &self.car)?;
        Ok(Record {
            x: s.x.clone(),
            xtilde,
            u,
            omega: s.omega.clone(),
            phi,
            z,
            torque,
            monitors: Vec::new(),
        })
    }

    /// One Euler step: the torque law drives the wheels, the tires act on
    /// the body through the realized slips.
    pub fn step(&self, s: &CarState) -> Result<CarState, VehicleError> {
        let r = self.observe(s)?;
        let slips = longitudinal_slips(&s.x, &s.omega, &self.car)?;
        let fx = friction(&slips, &self.car)?;
        let omega = &s.omega + wheel_dynamics(&r.torque, &fx, &self.car) * self.dt;
        let x = &s.x + plant_f(&s.x, &slips, &self.car)? * self.dt;
        Ok(CarState { x, omega })
    }
}

pub fn step_closed_loop(s: &CarState, cl: &ClosedLoop) -> Result<CarState, VehicleError> {
    cl.step(s)
}

#[derive(Debug, Clone)]
pub struct Monitor {
    pub name: String,
    pub predicate: Predicate,
}

impl Monitor {
    /// `1 + max(lhs - rhs)`: at most 1 iff the predicate holds, and equal
    /// to the level-set value for `v'*M*v <= 1`.
    pub fn value(&self, r: &Record, params: &dyn Scope, funcs: &dyn Functions) -> Result<f64, HarnessError> {
        let scope = r.scope();
        self.predicate
            .violation(&Layered(&scope, params), funcs)
            .map(|v| 1.0 + v)
            .map_err(|source| HarnessError::Monitor {
                name: self.name.clone(),
                source,
            })
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub steps: usize,
    pub initial: CarState,
    pub monitors: Vec<Monitor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub monitor_names: Vec<String>,
    /// `steps + 1` records, the first at the initial state.
    pub records: Vec<Record>,
}

fn finite(r: &Record) -> bool {
    [&r.x, &r.omega, &r.z, &r.torque].iter().all(|v| v.iter().all(|c| c.is_finite()))
}

pub fn run(
    cl: &ClosedLoop,
    cfg: &SimConfig,
    params: &dyn Scope,
    funcs: &dyn Functions,
) -> Result<Trace, HarnessError> {
    if !(cl.dt > 0.0) {
        return Err(HarnessError::Config(format!("dt must be positive, got {}", cl.dt)));
    }
    if cfg.steps == 0 {
        return Err(HarnessError::Config("at least one step is required".into()));
    }
    let mut records = Vec::with_capacity(cfg.steps + 1);
    let mut s = cfg.initial.clone();
    for step in 0..=cfg.steps {
        let mut r = cl.observe(&s).map_err(|source| HarnessError::Vehicle { step, source })?;
        if !finite(&r) {
            return Err(HarnessError::NonFinite { step });
        }
        r.monitors = cfg
            .monitors
            .iter()
            .map(|m| m.value(&r, params, funcs))
            .collect::<Result<_, _>>()?;
        records.push(r);
        if step < cfg.steps {
            s = cl.step(&s).map_err(|source| HarnessError::Vehicle { step, source })?;
        }
    }
    Ok(Trace {
        monitor_names: cfg.monitors.iter().map(|m| m.name.clone()).collect(),
        records,
    })
}

/// Independent runs in parallel; results keep the order of `configs`.
pub fn sweep(
    cl: &ClosedLoop,
    configs: &[SimConfig],
    params: &(dyn Scope + Sync),
    funcs: &dyn Functions,
) -> Vec<Result<Trace, HarnessError>> {
    configs.par_iter().map(|c| run(cl, c, params, funcs)).collect()
}

/// Uniform sample from `{v : v'Pv <= level}`, by rejection from the
/// enclosing cube of the unit ball.
pub fn sample_in_ellipsoid<R: Rng>(rng: &mut R, e: &Ellipsoid, level: f64) -> Vector {
    let n = e.dim();
    let w = loop {
        let w = Vector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        if w.norm_squared() <= 1.0 {
            break w;
        }
    };
    let l = cholesky(e.p()).expect("ellipsoid matrices are positive definite");
    let l_inv_t = inverse(&l, "sample").expect("Cholesky factors are invertible").transpose();
    l_inv_t * w * level.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorSummary {
    pub name: String,
    pub max: f64,
    pub first_violation: Option<usize>,
}

/// Largest value and first step above `1 + tol` of each monitor.
pub fn monitor_report(
    trace: &Trace,
    monitors: &[Monitor],
    params: &dyn Scope,
    funcs: &dyn Functions,
    tol: f64,
) -> Result<Vec<MonitorSummary>, HarnessError> {
    monitors
        .iter()
        .map(|m| {
            let mut out = MonitorSummary {
                name: m.name.clone(),
                max: f64::NEG_INFINITY,
                first_violation: None,
            };
            for (i, r) in trace.records.iter().enumerate() {
                let v = m.value(r, params, funcs)?;
                out.max = out.max.max(v);
                if v > 1.0 + tol && out.first_violation.is_none() {
                    out.first_violation = Some(i);
                }
            }
            Ok(out)
        })
        .collect()
}

impl Trace {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.records.first() else { return out };
        let mut header = vec!["step".to_string()];
        let fields: [(&str, &Vector); 7] = [
            ("x", &first.x),
            ("xtilde", &first.xtilde),
            ("u", &first.u),
            ("omega", &first.omega),
            ("phi", &first.phi),
            ("z", &first.z),
            ("torque", &first.torque),
        ];
        for (name, v) in fields {
            header.extend((0..v.len()).map(|i| format!("{name}{i}")));
        }
        header.extend(self.monitor_names.iter().cloned());
        let _ = writeln!(out, "{}", header.join("\t"));
        for (k, r) in self.records.iter().enumerate() {
            let _ = write!(out, "{k}");
            for v in [&r.x, &r.xtilde, &r.u, &r.omega, &r.phi, &r.z, &r.torque] {
                for c in v.iter() {
                    let _ = write!(out, "\t{c}");
                }
            }
            for m in &r.monitors {
                let _ = write!(out, "\t{m}");
            }
            out.push('\n');
        }
        out
    }
}

/// The car closed loop and its loop-invariant monitors, from an autocoded
/// car model.
pub fn closed_loop(a: &Autocoded) -> Result<(ClosedLoop, Vec<Monitor>), HarnessError> {
    let r = &a.resolved;
    let missing = |what: &str| HarnessError::Config(format!("model has no {what}"));
    let car = r.car.clone().ok_or_else(|| missing("car parameters"))?;
    let eq = r.equilibrium.as_ref().ok_or_else(|| missing("equilibrium"))?;
    let dt = r.params.get("dt").map(|m| m[0]).ok_or_else(|| missing("dt"))?;
    let gain = a
        .analysis
        .loops
        .iter()
        .find_map(|l| match &a.model.annotations[l.plant] {
            Annotation::LinearPlant(p) => p.gain.as_ref(),
            _ => None,
        })
        .ok_or_else(|| missing("linear loop with a gain"))?;
    let monitors = a
        .analysis
        .loops
        .iter()
        .filter_map(|l| l.invariant)
        .map(|inv| {
            let obs = &a.model.annotations[inv.observer()];
            Monitor {
                name: obs.name().to_string(),
                predicate: obs.observer_predicate().expect("loop invariants are observers"),
            }
        })
        .collect();
    Ok((
        ClosedLoop {
            car,
            k: r.params[gain].clone(),
            x_ss: eq.x_ss.clone(),
            u_ss: eq.u_ss.clone(),
            dt,
        },
        monitors,
    ))
}

/// Ellipsoid bounding the tracking error of the linear loop.
pub fn tracking_invariant(a: &Autocoded) -> Option<Ellipsoid> {
    a.analysis.loops.iter().find_map(|l| {
        let (Annotation::LinearPlant(_), Some(LoopInvariant::Ellipsoid(o))) = (&a.model.annotations[l.plant], l.invariant)
        else {
            return None;
        };
        let Annotation::EllipsoidObserver(obs) = &a.model.annotations[o] else { return None };
        let p = obs.p.eval(&a.resolved.params, &NoFunctions).ok()?;
        Ellipsoid::new(p).ok()
    })
}

/// How to pick the initial state of a run.
#[derive(Debug, Clone, Default)]
pub struct StartSpec {
    pub xtilde: Option<Vec<f64>>,
    pub z: Option<Vec<f64>>,
    /// Rescale the tracking error to this value of `x̃ᵀPx̃`.
    pub xtilde_level: Option<f64>,
    /// Seed for drawing unspecified values from the invariant sets.
    pub random: Option<u64>,
}

pub fn initial_state(cl: &ClosedLoop, invariant: &Ellipsoid, spec: &StartSpec) -> Result<CarState, HarnessError> {
    let n = cl.x_ss.len();
    let k = cl.u_ss.len();
    let mut rng = spec.random.map(ChaCha8Rng::seed_from_u64);
    let given = |v: &Option<Vec<f64>>, len: usize, what: &str| -> Result<Option<Vector>, HarnessError> {
        match v {
            Some(v) if v.len() != len => Err(HarnessError::Config(format!("{what} needs {len} values, got {}", v.len()))),
            Some(v) => Ok(Some(Vector::from_column_slice(v))),
            None => Ok(None),
        }
    };
    if invariant.dim() != n {
        return Err(HarnessError::Config(format!("invariant has dimension {}, state has {n}", invariant.dim())));
    }
    let mut xtilde = match (given(&spec.xtilde, n, "xtilde")?, rng.as_mut()) {
        (Some(v), _) => v,
        (None, Some(r)) => sample_in_ellipsoid(r, invariant, 1.0),
        (None, None) => Vector::zeros(n),
    };
    if let Some(level) = spec.xtilde_level {
        if !(level >= 0.0) {
            return Err(HarnessError::Config(format!("xtilde level must be nonnegative, got {level}")));
        }
        let v = invariant.value(&xtilde);
        if v == 0.0 {
            return Err(HarnessError::Config("cannot rescale a zero tracking error".into()));
        }
        xtilde *= (level / v).sqrt();
    }
    let unit = Ellipsoid::new(Matrix::identity(k, k)).expect("identity is positive definite");
    let z = match (given(&spec.z, k, "z")?, rng.as_mut()) {
        (Some(v), _) => v,
        (None, Some(r)) => sample_in_ellipsoid(r, &unit, 1.0),
        (None, None) => Vector::zeros(k),
    };
    cl.state_at(&xtilde, &z).map_err(|source| HarnessError::Vehicle { step: 0, source })
}
