use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};
use credo::expr::NoFunctions;
use credo::harness::{closed_loop, initial_state, monitor_report, run, tracking_invariant, SimConfig, StartSpec};
use credo::model::{validate_model, Annotation, LoopInvariant};
use credo::numerics::{eigenvalues, Matrix};
use credo::pipeline::{autocode as run_pipeline, load_model, resolve, Autocoded, PipelineError};
use credo::vcfile::{parse_vc_file, write_vc_file, VcBundle};
use credo::verifier::{check_all, render_report, Bounds, Budget, Interval, ReportEntry, Status, Summary, Verdict};
use serde_json::{json, Value};

use crate::manifest::RunManifest;
use crate::{Common, Outcome};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

fn input_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: e.into() }
}

fn failed(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: e.into() }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_input_error() {
            input_error(e)
        } else {
            failed(e)
        }
    }
}

fn read_model(c: &Common, extra: &[String]) -> Result<credo::model::Model, Failure> {
    let text = fs::read_to_string(&c.model)
        .with_context(|| format!("cannot read {}", c.model.display()))
        .map_err(input_error)?;
    let mut overrides = c.overrides.clone();
    overrides.extend_from_slice(extra);
    Ok(load_model(&text, &overrides)?)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(input_error)?;
    }
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(input_error)
}

fn out_path(c: &Common, a: &Autocoded, suffix: &str) -> PathBuf {
    c.out_dir.join(format!("{}.{suffix}", a.model.name))
}

/// Writes the annotated program and the VC file; returns their paths.
fn emit(c: &Common, a: &Autocoded) -> Result<(PathBuf, PathBuf), Failure> {
    let program = out_path(c, a, "annotated.m");
    let vcs = out_path(c, a, "vc");
    write(&program, &a.annotated_text())?;
    write(&vcs, &write_vc_file(&VcBundle::from_autocoded(a)))?;
    Ok((program, vcs))
}

fn loop_summary(a: &Autocoded) -> Vec<String> {
    let mut out = vec![format!(
        "model {}: {} loop(s), {} verification condition(s)",
        a.model.name,
        a.analysis.loops.len(),
        a.vcs.len()
    )];
    for l in &a.analysis.loops {
        let plant = &a.model.annotations[l.plant];
        let kind = match plant {
            Annotation::LinearPlant(_) => "linear",
            _ => "general",
        };
        let inv = match l.invariant {
            Some(LoopInvariant::Ellipsoid(i)) => format!("{} (ellipsoid)", a.model.annotations[i].name()),
            Some(LoopInvariant::Predicate(i)) => format!("{} (predicate)", a.model.annotations[i].name()),
            None => "none".to_string(),
        };
        out.push(format!("loop {}: plant {} ({kind}), invariant {inv}", l.id, plant.name()));
    }
    for vc in &a.vcs {
        let lp = vc.loop_id.map_or("-".to_string(), |l| l.to_string());
        out.push(format!("{} (loop {lp}, {}): {} => {}", vc.id, vc.kind, vc.hypothesis, vc.conclusion));
    }
    out
}

pub fn autocode(c: &Common) -> Outcome {
    let a = run_pipeline(read_model(c, &[])?)?;
    let (program, vcs) = emit(c, &a)?;
    for line in loop_summary(&a) {
        println!("{line}");
    }
    println!("wrote {}", program.display());
    println!("wrote {}", vcs.display());
    Ok(true)
}

fn intervals_json(ivs: &[Interval]) -> Value {
    Value::Array(ivs.iter().map(|i| json!([i.lo, i.hi])).collect())
}

fn bounds_json(b: &Bounds) -> Value {
    json!({
        "x": intervals_json(&b.x),
        "u": intervals_json(&b.u),
        "phi": intervals_json(&b.phi),
        "omega": intervals_json(&b.omega),
    })
}

fn verdict_json(vc: &credo::verifier::Vc, v: &Verdict) -> Value {
    let mut o = json!({
        "id": vc.id,
        "loop": vc.loop_id,
        "kind": vc.kind.to_string(),
        "origin": vc.origin,
        "status": v.status.label(),
        "hypothesis": vc.hypothesis.to_string(),
        "conclusion": vc.conclusion.to_string(),
        "effort": {
            "samples": v.effort.samples,
            "boxes": v.effort.boxes,
            "max_violation": v.effort.max_violation,
        },
    });
    match &v.status {
        Status::Verified => {}
        Status::Falsified(w) => {
            let point: serde_json::Map<String, Value> = w
                .point
                .iter()
                .map(|(k, m)| (k.clone(), json!(m.iter().copied().collect::<Vec<f64>>())))
                .collect();
            o["witness"] = json!({
                "point": point,
                "hypothesis": w.hypothesis,
                "conclusion": w.conclusion,
            });
        }
        Status::Unknown(reason) => o["reason"] = json!(reason),
    }
    o
}

fn to_json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

pub fn check(c: &Common, samples: usize, depth: usize, seed: u64) -> Outcome {
    let a = run_pipeline(read_model(c, &[])?)?;
    let (program, vc_path) = emit(c, &a)?;
    let text = fs::read_to_string(&vc_path)
        .with_context(|| format!("cannot read {}", vc_path.display()))
        .map_err(input_error)?;
    let bundle = parse_vc_file(&text).map_err(failed)?;
    let funcs = bundle.car_functions();
    let budget = Budget { samples, depth, seed };
    let verdicts = check_all(&bundle.vcs, &budget, &bundle.context(&funcs));

    let report_path = out_path(c, &a, "check.tsv");
    let json_path = out_path(c, &a, "check.json");
    let mut manifest = RunManifest::new(&c.model, "check");
    manifest.option("samples", samples).option("depth", depth).option("seed", seed);
    for o in &c.overrides {
        manifest.option("set", o);
    }
    manifest.outputs = vec![program, vc_path, report_path.clone(), json_path.clone()];
    let (bounds, bounds_error) = match &a.bounds {
        Some(Ok(b)) => (Some(b), None),
        Some(Err(e)) => (None, Some(e.to_string())),
        None => (None, None),
    };
    let mut records = manifest.records();
    if let Some(e) = &bounds_error {
        records.push(("bounds_error".into(), e.clone()));
    }
    let entries: Vec<ReportEntry<'_>> =
        bundle.vcs.iter().zip(&verdicts).map(|(vc, verdict)| ReportEntry { vc, verdict }).collect();
    write(&report_path, &render_report(&records, &entries, bounds))?;
    let summary = Summary::of(&verdicts);
    let doc = json!({
        "manifest": manifest.to_json(),
        "vcs": bundle.vcs.iter().zip(&verdicts).map(|(vc, v)| verdict_json(vc, v)).collect::<Vec<_>>(),
        "bounds": bounds.map(bounds_json),
        "bounds_error": bounds_error,
        "summary": {
            "verified": summary.verified,
            "falsified": summary.falsified,
            "unknown": summary.unknown,
        },
    });
    write(&json_path, &to_json_text(&doc))?;

    for (vc, v) in bundle.vcs.iter().zip(&verdicts) {
        let lp = vc.loop_id.map_or("-".to_string(), |l| l.to_string());
        println!("{}\tloop {lp}\t{}\t{}", vc.id, vc.kind, v.status.label());
        match &v.status {
            Status::Verified => {}
            Status::Falsified(w) => {
                let mut line = String::from("  witness:");
                for (var, m) in &w.point {
                    let vals: Vec<String> = m.iter().map(|x| x.to_string()).collect();
                    let _ = write!(line, " {var}=[{}]", vals.join(", "));
                }
                let _ = write!(line, " hypothesis={} conclusion={}", w.hypothesis, w.conclusion);
                println!("{line}");
            }
            Status::Unknown(reason) => println!("  reason: {reason}"),
        }
    }
    if let Some(e) = &bounds_error {
        eprintln!("warning: range bounds unavailable: {e}");
    }
    println!(
        "summary\tverified={}\tfalsified={}\tunknown={}",
        summary.verified, summary.falsified, summary.unknown
    );
    println!("wrote {}", report_path.display());
    println!("wrote {}", json_path.display());
    Ok(summary.all_verified())
}

pub struct SimulateOptions {
    pub dt: Option<f64>,
    pub steps: usize,
    pub xtilde0: Option<Vec<f64>>,
    pub z0: Option<Vec<f64>>,
    pub xtilde_level: Option<f64>,
    pub random: bool,
    pub seed: u64,
    pub tol: f64,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn simulate(c: &Common, o: &SimulateOptions) -> Outcome {
    let extra: Vec<String> = o.dt.map(|dt| format!("dt={dt}")).into_iter().collect();
    let a = run_pipeline(read_model(c, &extra)?)?;
    let (cl, monitors) = closed_loop(&a).map_err(failed)?;
    let inv = tracking_invariant(&a).ok_or_else(|| failed(anyhow!("model has no ellipsoid invariant on a linear loop")))?;
    let spec = StartSpec {
        xtilde: o.xtilde0.clone(),
        z: o.z0.clone(),
        xtilde_level: o.xtilde_level,
        random: o.random.then_some(o.seed),
    };
    let start = initial_state(&cl, &inv, &spec).map_err(failed)?;
    let cfg = SimConfig {
        steps: o.steps,
        initial: start,
        monitors: monitors.clone(),
    };
    let funcs = a.resolved.car_functions();
    let trace = run(&cl, &cfg, &a.resolved.params, &funcs).map_err(failed)?;
    let report = monitor_report(&trace, &monitors, &a.resolved.params, &funcs, o.tol).map_err(failed)?;

    let trace_path = out_path(c, &a, "trace.tsv");
    let report_path = out_path(c, &a, "simulate.tsv");
    let json_path = out_path(c, &a, "simulate.json");
    let mut manifest = RunManifest::new(&c.model, "simulate");
    manifest.option("dt", cl.dt).option("steps", o.steps);
    if let Some(v) = &o.xtilde0 {
        manifest.option("xtilde0", join(v));
    }
    if let Some(v) = &o.z0 {
        manifest.option("z0", join(v));
    }
    if let Some(l) = o.xtilde_level {
        manifest.option("xtilde_level", l);
    }
    manifest.option("random", o.random).option("seed", o.seed).option("tol", o.tol);
    for s in &c.overrides {
        manifest.option("set", s);
    }
    manifest.outputs = vec![trace_path.clone(), report_path.clone(), json_path.clone()];

    let observed = |pick: fn(&credo::harness::Record) -> &credo::numerics::Vector| -> Vec<Interval> {
        let n = pick(&trace.records[0]).len();
        (0..n)
            .map(|i| {
                let vals = trace.records.iter().map(|r| pick(r)[i]);
                Interval {
                    lo: vals.clone().fold(f64::INFINITY, f64::min),
                    hi: vals.fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    };
    let seen = [("phi", observed(|r| &r.phi)), ("omega", observed(|r| &r.omega))];
    let bounds = match &a.bounds {
        Some(Ok(b)) => Some(b),
        _ => None,
    };

    let mut text = String::new();
    for (k, v) in manifest.records() {
        let _ = writeln!(text, "manifest\t{k}\t{v}");
    }
    let violations = report.iter().filter(|r| r.first_violation.is_some()).count();
    for r in &report {
        let first = r.first_violation.map_or("-".to_string(), |s| s.to_string());
        let _ = writeln!(text, "monitor\t{}\tmax={}\tfirst_violation={first}", r.name, r.max);
    }
    let mut observed_json = serde_json::Map::new();
    for (name, ivs) in &seen {
        let bound = bounds.map(|b| if *name == "phi" { &b.phi } else { &b.omega });
        for (i, iv) in ivs.iter().enumerate() {
            let (blo, bhi, inside) = match bound {
                Some(b) => (b[i].lo.to_string(), b[i].hi.to_string(), if b[i].lo <= iv.lo && iv.hi <= b[i].hi { "inside" } else { "outside" }),
                None => ("-".into(), "-".into(), "-"),
            };
            let _ = writeln!(text, "observed\t{name}\t{i}\t{}\t{}\t{blo}\t{bhi}\t{inside}", iv.lo, iv.hi);
        }
        observed_json.insert(name.to_string(), intervals_json(ivs));
    }
    let _ = writeln!(text, "summary\tsteps={}\tviolations={violations}", o.steps);
    write(&trace_path, &trace.to_tsv())?;
    write(&report_path, &text)?;
    let doc = json!({
        "manifest": manifest.to_json(),
        "monitors": report.iter().map(|r| json!({
            "name": r.name,
            "max": r.max,
            "first_violation": r.first_violation,
        })).collect::<Vec<_>>(),
        "observed": observed_json,
        "bounds": bounds.map(bounds_json),
        "violations": violations,
    });
    write(&json_path, &to_json_text(&doc))?;

    for r in &report {
        match r.first_violation {
            Some(s) => println!("monitor {}: VIOLATED at step {s} (max {})", r.name, r.max),
            None => println!("monitor {}: ok (max {})", r.name, r.max),
        }
    }
    println!("wrote {}", trace_path.display());
    println!("wrote {}", report_path.display());
    println!("wrote {}", json_path.display());
    Ok(violations == 0)
}

fn matrix_text(m: &Matrix) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

pub fn lqr(c: &Common) -> Outcome {
    let m = read_model(c, &[])?;
    let a = validate_model(&m).map_err(input_error)?;
    let r = resolve(&m, &a)?;
    let mut stable = true;
    let mut any = false;
    for l in &a.loops {
        let Annotation::LinearPlant(p) = &m.annotations[l.plant] else { continue };
        let Some(gain) = &p.gain else { continue };
        any = true;
        let eval = |e: &credo::expr::Expr| e.eval(&r.params, &NoFunctions).map_err(failed);
        let am = eval(&p.a)?;
        let bm = eval(&p.b)?;
        let k = &r.params[gain];
        let acl = &am - &bm * k;
        let eig = eigenvalues(&acl).map_err(failed)?;
        let rho = eig.iter().map(|(re, im)| re.hypot(*im)).fold(0.0, f64::max);
        println!("loop {}: plant {}, gain {gain}", l.id, p.name);
        println!("  K = {}", matrix_text(k));
        match r.lqr.get(&l.plant) {
            Some(d) => println!("  riccati P = {}", matrix_text(&d.p)),
            None => println!("  riccati P = - (gain bound in the model)"),
        }
        if let Some(LoopInvariant::Ellipsoid(o)) = l.invariant {
            if let Annotation::EllipsoidObserver(obs) = &m.annotations[o] {
                println!("  lyapunov {} = {}", obs.p, matrix_text(&eval(&obs.p)?));
            }
        }
        let eig_text: Vec<String> = eig
            .iter()
            .map(|(re, im)| if *im == 0.0 { re.to_string() } else { format!("{re}{im:+}i") })
            .collect();
        println!("  closed-loop eigenvalues = [{}]", eig_text.join(", "));
        println!("  spectral radius = {rho}");
        stable &= rho < 1.0;
    }
    if !any {
        return Err(failed(anyhow!("model `{}` has no linear loop with a gain", m.name)));
    }
    Ok(stable)
}
