//! Acceptance criteria for the car example. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use credo::codegen::{Anchor, ContractBody, StatementKind};
use credo::expr::{Expr, Predicate, Shape, ShapeMap};
use credo::harness::{closed_loop, initial_state, sweep, tracking_invariant, SimConfig, StartSpec};
use credo::numerics::{
    cholesky, ellipsoid_affine_image, inverse, lqr_gain, solve_discrete_lyapunov, Ellipsoid, Matrix, Vector,
};
use credo::pipeline::{autocode, load_model};
use credo::propagation::simplify_predicate;
use credo::vcfile::parse_vc_file;
use credo::vehicle::{aux_dynamics, sat, torque_control, CarParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const AUTOCODE_SECONDS: f64 = 5.0;
const CHECK_SECONDS: f64 = 60.0;
/// Falsifying witnesses must violate the conclusion by more than this.
const WITNESS_MARGIN: f64 = 1e-6;
/// Slack allowed on the hypothesis side of a witness.
const HYPOTHESIS_TOL: f64 = 1e-9;
const LYAPUNOV_TOL: f64 = 1e-12;
const RICCATI_TOL: f64 = 1e-10;
const IMAGE_TOL: f64 = 1e-9;
/// Boundary samples must reach this close to the image boundary.
const IMAGE_TIGHTNESS: f64 = 1e-3;
const AUX_TOL: f64 = 1e-8;
const MONITOR_TOL: f64 = 1e-9;
const SIM_STARTS: u64 = 100;
const SIM_STEPS: usize = 10_000;

/// Car constants the independent witness checks rely on; must match
/// `models/car.toml`.
const IW: f64 = 1.8;
const CSAT: f64 = 1.0;

type Outcome = Result<String, String>;

fn model(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models").join(format!("{name}.toml"))
}

struct Run {
    code: i32,
    stdout: String,
    seconds: f64,
}

fn credo(args: &[&str], out_dir: &Path) -> Result<Run, String> {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_credo"))
        .args(args)
        .arg("--out-dir")
        .arg(out_dir)
        .output()
        .map_err(|e| format!("cannot run credo: {e}"))?;
    Ok(Run {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn tempdir() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn car_shapes() -> ShapeMap {
    let vars: [(&str, Shape); 21] = [
        ("xtilde", Shape::vector(3)),
        ("utilde", Shape::vector(2)),
        ("x", Shape::vector(3)),
        ("u", Shape::vector(2)),
        ("z", Shape::vector(2)),
        ("f", Shape::vector(3)),
        ("dphi", Shape::new(3, 2)),
        ("friction", Shape::vector(2)),
        ("torque", Shape::vector(2)),
        ("P", Shape::new(3, 3)),
        ("Q1", Shape::new(5, 5)),
        ("Q2", Shape::new(3, 3)),
        ("K", Shape::new(2, 3)),
        ("A", Shape::new(3, 3)),
        ("B", Shape::new(3, 2)),
        ("xss", Shape::vector(3)),
        ("uss", Shape::vector(2)),
        ("dt", Shape::SCALAR),
        ("Iw", Shape::SCALAR),
        ("r", Shape::SCALAR),
        ("csat", Shape::SCALAR),
    ];
    let mut m = vars.into_iter().fold(ShapeMap::new(), |m, (v, s)| m.with_var(v, s));
    m.functions.insert("f_func".into(), Shape::vector(3));
    m.functions.insert("dphi_func".into(), Shape::new(3, 2));
    m.functions.insert("friction_func".into(), Shape::vector(2));
    m
}

fn parse_expr(s: &str) -> Result<Expr, String> {
    Expr::parse(s).map_err(|e| format!("golden `{s}`: {e}"))
}

fn parse_pred(s: &str) -> Result<Predicate, String> {
    Predicate::parse(s).map_err(|e| format!("golden `{s}`: {e}"))
}

/// Golden statements and contracts against the emitted VC file.
fn c1_contract_skeleton() -> Outcome {
    let dir = tempdir()?;
    let car = model("car").display().to_string();
    let run = credo(&["autocode", &car], dir.path())?;
    ensure(run.code == 0, || format!("autocode exited {}", run.code))?;
    ensure(run.seconds < AUTOCODE_SECONDS, || format!("autocode took {:.2}s", run.seconds))?;
    let bundle = parse_vc_file(&read(&dir.path().join("car.vc"))?).map_err(|e| e.to_string())?;
    let prog = bundle.program;
    let golden = read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/car.skeleton"))?;
    let lines: Vec<Vec<&str>> = golden
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split('\t').collect())
        .collect();

    let stmt_lines: Vec<&Vec<&str>> = lines.iter().filter(|l| l[0] != "contract").collect();
    ensure(stmt_lines.len() == prog.statements.len(), || {
        format!("{} statements, golden has {}", prog.statements.len(), stmt_lines.len())
    })?;
    for (i, (g, s)) in stmt_lines.iter().zip(&prog.statements).enumerate() {
        let want = match g.as_slice() {
            ["input", v] => StatementKind::Input(v.to_string()),
            ["assign", v, e] => StatementKind::Assign(v.to_string(), parse_expr(e)?),
            ["output", e] => StatementKind::Output(parse_expr(e)?),
            other => return Err(format!("bad golden statement {other:?}")),
        };
        ensure(want == s.kind, || format!("statement {i}: got {:?}, golden {:?}", s.kind, want))?;
    }

    let index_of = |name: &str| -> Result<usize, String> {
        prog.statements
            .iter()
            .position(|s| match &s.kind {
                StatementKind::Output(_) => name == "output",
                _ => s.defines() == Some(name),
            })
            .ok_or_else(|| format!("no statement `{name}`"))
    };
    let shapes = car_shapes();
    let contract_lines: Vec<&Vec<&str>> = lines.iter().filter(|l| l[0] == "contract").collect();
    ensure(contract_lines.len() == prog.contracts.len(), || {
        format!("{} contracts, golden has {}", prog.contracts.len(), contract_lines.len())
    })?;
    for (g, c) in contract_lines.iter().zip(&prog.contracts) {
        let at = index_of(g[2])?;
        let anchor = match g[1] {
            "before" => Anchor::Before(at),
            _ => Anchor::After(at),
        };
        let label = format!("{} {}", g[3], g[4]);
        ensure(c.anchor == anchor, || format!("{label}: anchor {:?}, golden {anchor:?}", c.anchor))?;
        ensure(c.kind.keyword() == g[3] && c.origin.to_string() == g[4], || {
            format!("got {} {}, golden {label}", c.kind.keyword(), c.origin)
        })?;
        match (g[5], &c.body) {
            ("pred", ContractBody::Pred(p)) => {
                let want = parse_pred(g[6])?;
                let same = if g[4].starts_with("backward") {
                    simplify_predicate(p, &shapes) == simplify_predicate(&want, &shapes)
                } else {
                    *p == want
                };
                ensure(same, || format!("{label}: got `{p}`, golden `{want}`"))?;
            }
            ("update", ContractBody::Update { target, expr }) => {
                let same = *target == parse_expr(g[6])? && *expr == parse_expr(g[7])?;
                ensure(same, || format!("{label}: got `{target} = {expr}`"))?;
            }
            _ => return Err(format!("{label}: body kind differs")),
        }
    }
    Ok(format!(
        "{} statements and {} contracts match, autocode {:.2}s",
        prog.statements.len(),
        prog.contracts.len(),
        run.seconds
    ))
}

fn check_json(dir: &Path) -> Result<Vec<Value>, String> {
    let doc: Value = serde_json::from_str(&read(&dir.join("car.check.json"))?).map_err(|e| e.to_string())?;
    doc["vcs"].as_array().cloned().ok_or_else(|| "no vcs in report".to_string())
}

fn vc_of_loop(vcs: &[Value], lp: u64) -> Result<&Value, String> {
    vcs.iter().find(|v| v["loop"] == lp).ok_or_else(|| format!("no VC for loop {lp}"))
}

fn c2_car_verifies() -> Outcome {
    let dir = tempdir()?;
    let car = model("car").display().to_string();
    let run = credo(&["check", &car], dir.path())?;
    ensure(run.code == 0, || format!("check exited {}:\n{}", run.code, run.stdout))?;
    ensure(run.seconds < CHECK_SECONDS, || format!("check took {:.1}s", run.seconds))?;
    let vcs = check_json(dir.path())?;
    for lp in [1, 2] {
        let vc = vc_of_loop(&vcs, lp)?;
        ensure(vc["status"] == "VERIFIED", || format!("loop {lp}: {}", vc["status"]))?;
    }
    Ok(format!("{} VCs VERIFIED in {:.1}s", vcs.len(), run.seconds))
}

fn floats(v: &Value) -> Result<Vec<f64>, String> {
    v.as_array()
        .and_then(|a| a.iter().map(Value::as_f64).collect())
        .ok_or_else(|| format!("not a number array: {v}"))
}

/// `param NAME ROWS COLS values...` record of a VC file.
fn vc_param(text: &str, name: &str) -> Result<Matrix, String> {
    let line = text
        .lines()
        .find(|l| l.starts_with(&format!("param\t{name}\t")))
        .ok_or_else(|| format!("no param {name}"))?;
    let f: Vec<&str> = line.split('\t').collect();
    let rows: usize = f[2].parse().map_err(|_| "rows".to_string())?;
    let cols: usize = f[3].parse().map_err(|_| "cols".to_string())?;
    let vals: Vec<f64> = f[4].split(' ').map(|s| s.parse().map_err(|_| format!("value {s}"))).collect::<Result<_, _>>()?;
    Ok(Matrix::from_row_slice(rows, cols, &vals))
}

fn quad(m: &Matrix, x: &Vector) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

fn c3_perturbations_falsify() -> Outcome {
    let car = model("car").display().to_string();

    let dir = tempdir()?;
    let run = credo(&["check", &car, "--set", "dt=4.5"], dir.path())?;
    ensure(run.code == 1, || format!("dt=4.5: check exited {}", run.code))?;
    let vcs = check_json(dir.path())?;
    let vc = vc_of_loop(&vcs, 2)?;
    ensure(vc["status"] == "FALSIFIED", || format!("dt=4.5: loop 2 {}", vc["status"]))?;
    let z = floats(&vc["witness"]["point"]["z"])?;
    let hyp = z.iter().map(|v| v * v).sum::<f64>() - 1.0;
    let next: Vec<f64> = z.iter().map(|v| v - 4.5 / IW * v.clamp(-CSAT, CSAT)).collect();
    let concl_torque = next.iter().map(|v| v * v).sum::<f64>() - 1.0;
    ensure(hyp <= HYPOTHESIS_TOL, || format!("dt=4.5 witness outside hypothesis by {hyp}"))?;
    ensure(concl_torque > WITNESS_MARGIN, || format!("dt=4.5 witness margin {concl_torque}"))?;

    let dir = tempdir()?;
    let run = credo(&["check", &car, "--set", "synthesis.ensure_scale=4"], dir.path())?;
    ensure(run.code == 1, || format!("ensure_scale=4: check exited {}", run.code))?;
    let vcs = check_json(dir.path())?;
    let vc = vc_of_loop(&vcs, 1)?;
    ensure(vc["status"] == "FALSIFIED", || format!("ensure_scale=4: loop 1 {}", vc["status"]))?;
    let text = read(&dir.path().join("car.vc"))?;
    let (q2, p) = (vc_param(&text, "Q2")?, vc_param(&text, "P")?);
    let x = Vector::from_vec(floats(&vc["witness"]["point"]["xtilde"])?);
    let hyp = quad(&q2, &x) - 1.0;
    let concl_linear = 4.0 * quad(&p, &x) - 1.0;
    ensure(hyp <= HYPOTHESIS_TOL, || format!("ensure_scale=4 witness outside hypothesis by {hyp}"))?;
    ensure(concl_linear > WITNESS_MARGIN, || format!("ensure_scale=4 witness margin {concl_linear}"))?;
    Ok(format!("margins {concl_torque:.3} (dt=4.5) and {concl_linear:.3} (ensure_scale=4)"))
}

fn boundary_point(rng: &mut ChaCha8Rng, p: &Matrix) -> Result<Vector, String> {
    let l = cholesky(p).ok_or("not positive definite")?;
    let lt_inv = inverse(&l, "sample").map_err(|e| e.to_string())?.transpose();
    loop {
        let w = Vector::from_fn(p.nrows(), |_, _| rng.random_range(-1.0..1.0));
        let n = w.norm();
        if n > 1e-3 && n <= 1.0 {
            return Ok(&lt_inv * (w / n));
        }
    }
}

fn c4_numerics() -> Outcome {
    let one = |v: f64| Matrix::from_element(1, 1, v);
    let p = solve_discrete_lyapunov(&one(0.5), &one(1.0)).map_err(|e| e.to_string())?;
    let lyap_err = (p.p()[(0, 0)] - 4.0 / 3.0).abs();
    ensure(lyap_err <= LYAPUNOV_TOL, || format!("Lyapunov P error {lyap_err}"))?;
    let lqr = lqr_gain(&one(1.0), &one(1.0), &one(1.0), &one(1.0)).map_err(|e| e.to_string())?;
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let dare_err = (lqr.p[(0, 0)] - golden).abs();
    ensure(dare_err <= RICCATI_TOL, || format!("Riccati P error {dare_err}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_over = f64::NEG_INFINITY;
    let mut worst_gap: f64 = 0.0;
    for _ in 0..10 {
        let m = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let p = m.transpose() * &m + Matrix::identity(3, 3) * 0.2;
        let l = Matrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
        let e = Ellipsoid::new(p.clone()).map_err(|e| e.to_string())?;
        let img = ellipsoid_affine_image(&e, &l).map_err(|e| e.to_string())?;
        let mut max = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            max = max.max(img.value(&(&l * boundary_point(&mut rng, &p)?)));
        }
        worst_over = worst_over.max(max - 1.0);
        worst_gap = worst_gap.max(1.0 - max);
    }
    ensure(worst_over <= IMAGE_TOL, || format!("image exceeded by {worst_over}"))?;
    ensure(worst_gap <= IMAGE_TIGHTNESS, || format!("image loose by {worst_gap}"))?;
    Ok(format!("Lyapunov err {lyap_err:.1e}, Riccati err {dare_err:.1e}, image slack {worst_gap:.1e}"))
}

fn c5_manifold_dynamics() -> Outcome {
    let p = CarParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = Vector::from_vec(vec![
            rng.random_range(10.0..20.0),
            rng.random_range(-0.08..0.04),
            rng.random_range(0.1..0.4),
        ]);
        let u = Vector::from_fn(2, |_, _| rng.random_range(-0.9..2.0));
        let z = Vector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        let t = torque_control(&z, &x, &u, &p).map_err(|e| e.to_string())?;
        let zdot = aux_dynamics(&z, &t, &x, &u, &p).map_err(|e| e.to_string())?;
        worst = worst.max((zdot + sat(&z, p.csat) / p.i_w).amax());
    }
    ensure(worst <= AUX_TOL, || format!("worst deviation {worst}"))?;
    Ok(format!("worst deviation {worst:.1e} over 1000 points"))
}

fn c6_simulation_stays_certified() -> Outcome {
    let text = read(&model("car"))?;
    let a = autocode(load_model(&text, &[]).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let bounds = match &a.bounds {
        Some(Ok(b)) => b.clone(),
        other => return Err(format!("no range bounds: {other:?}")),
    };
    let (cl, monitors) = closed_loop(&a).map_err(|e| e.to_string())?;
    let inv = tracking_invariant(&a).ok_or("no tracking invariant")?;
    let funcs = a.resolved.car_functions();
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut outside = 0usize;
    for chunk in (0..SIM_STARTS).collect::<Vec<_>>().chunks(10) {
        let configs: Vec<SimConfig> = chunk
            .iter()
            .map(|&seed| {
                let spec = StartSpec {
                    random: Some(1000 + seed),
                    ..StartSpec::default()
                };
                initial_state(&cl, &inv, &spec).map(|initial| SimConfig {
                    steps: SIM_STEPS,
                    initial,
                    monitors: monitors.clone(),
                })
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        for trace in sweep(&cl, &configs, &a.resolved.params, &funcs) {
            let trace = trace.map_err(|e| e.to_string())?;
            for r in &trace.records {
                for (name, v) in trace.monitor_names.iter().zip(&r.monitors) {
                    let w = worst.entry(name.clone()).or_insert(f64::NEG_INFINITY);
                    *w = w.max(*v);
                }
                for i in 0..2 {
                    if !bounds.phi[i].contains(r.phi[i]) || !bounds.omega[i].contains(r.omega[i]) {
                        outside += 1;
                    }
                }
            }
        }
    }
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
    ensure(worst.values().all(|v| *v <= 1.0 + MONITOR_TOL), || format!("monitor exceeded: {}", summary.join(", ")))?;
    ensure(outside == 0, || format!("{outside} samples of omega or phi outside the bounds"))?;
    Ok(format!("{SIM_STARTS} runs x {SIM_STEPS} steps, worst {}", summary.join(", ")))
}

fn c7_reproducible_reports() -> Outcome {
    let dir = tempdir()?;
    let car = model("car").display().to_string();
    let files = ["car.check.tsv", "car.check.json", "car.trace.tsv", "car.simulate.tsv", "car.simulate.json"];
    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    for _ in 0..2 {
        credo(&["check", &car], dir.path())?;
        credo(&["simulate", &car, "--random", "--steps", "2000"], dir.path())?;
        runs.push(
            files
                .iter()
                .map(|f| std::fs::read(dir.path().join(f)).map_err(|e| format!("{f}: {e}")))
                .collect::<Result<_, _>>()?,
        );
    }
    for (i, f) in files.iter().enumerate() {
        ensure(runs[0][i] == runs[1][i], || format!("{f} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical", files.len()))
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("C1", "contract skeleton matches the golden program", c1_contract_skeleton),
        ("C2", "both car VCs verify", c2_car_verifies),
        ("C3", "perturbed models are falsified with honest witnesses", c3_perturbations_falsify),
        ("C4", "Lyapunov, Riccati and ellipsoid image numerics", c4_numerics),
        ("C5", "torque law yields the saturated manifold dynamics", c5_manifold_dynamics),
        ("C6", "closed-loop runs stay inside the certified sets", c6_simulation_stays_certified),
        ("C7", "reports are reproducible", c7_reproducible_reports),
    ];
    let mut failures = 0;
    for (id, what, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS {what}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failures += 1;
                println!("{id} FAIL {what}: {why} [{secs:.1}s]");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
