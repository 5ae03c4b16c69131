use credo::pipeline::{autocode, load_model};
use credo::verifier::{check_all, Budget, Context, Status, VcKind};

fn car() -> credo::pipeline::Autocoded {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/car.toml")).unwrap();
    autocode(load_model(&text, &[]).unwrap()).unwrap()
}

#[test]
fn car_yields_two_vcs() {
    let a = car();
    for vc in &a.vcs {
        eprintln!("{} {} {} => {}\n  {:?}", vc.id, vc.kind, vc.hypothesis, vc.conclusion, vc.domain);
    }
    eprintln!("{}", a.annotated_text());
    eprintln!("{:?}", a.bounds);
    assert_eq!(a.vcs.len(), 2);
    assert_eq!(a.vcs[0].kind, VcKind::Containment);
    assert_eq!(a.vcs[1].kind, VcKind::Implication);
}

#[test]
fn car_vcs_verify() {
    let a = car();
    let funcs = a.resolved.car_functions();
    let ctx = Context { params: &a.resolved.params, funcs: &funcs };
    let t = std::time::Instant::now();
    let verdicts = check_all(&a.vcs, &Budget::default(), &ctx);
    eprintln!("{:?} in {:?}", verdicts, t.elapsed());
    assert!(verdicts.iter().all(|v| v.status == Status::Verified));
}

fn verdicts_with(overrides: &[&str]) -> Vec<credo::verifier::Verdict> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/car.toml")).unwrap();
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let a = autocode(load_model(&text, &ov).unwrap()).unwrap();
    let funcs = a.resolved.car_functions();
    let ctx = Context { params: &a.resolved.params, funcs: &funcs };
    check_all(&a.vcs, &Budget::default(), &ctx)
}

#[test]
fn large_step_falsifies_the_torque_loop() {
    let v = verdicts_with(&["dt=4.5"]);
    eprintln!("{v:?}");
    assert_eq!(v[0].status, Status::Verified);
    assert!(matches!(v[1].status, Status::Falsified(_)));
}

#[test]
fn shrunken_target_falsifies_the_linear_loop() {
    let v = verdicts_with(&["synthesis.ensure_scale=4"]);
    eprintln!("{v:?}");
    let Status::Falsified(w) = &v[0].status else { panic!("{:?}", v[0]) };
    assert!(w.conclusion > 1e-6);
    assert_eq!(v[1].status, Status::Verified);
}

#[test]
fn vc_file_round_trips() {
    use credo::vcfile::{parse_vc_file, write_vc_file, VcBundle};
    let a = car();
    let bundle = VcBundle::from_autocoded(&a);
    let text = write_vc_file(&bundle);
    let back = parse_vc_file(&text).unwrap();
    assert_eq!(back.params, bundle.params);
    assert_eq!(back.car, bundle.car);
    assert_eq!(back.functions, bundle.functions);
    assert_eq!(back.program, bundle.program);
    assert_eq!(back.vcs, bundle.vcs);
    assert_eq!(write_vc_file(&back), text);
}
