use credo::expr::{NoFunctions, Predicate};
use credo::harness::{
    closed_loop, monitor_report, run, sample_in_ellipsoid, step_closed_loop, sweep, ClosedLoop, Monitor, SimConfig,
};
use credo::numerics::{Ellipsoid, Matrix, Vector};
use credo::pipeline::{autocode, load_model, Autocoded};
use credo::vehicle::{aux_dynamics, torque_control, CarParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn car() -> Autocoded {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/car.toml")).unwrap();
    autocode(load_model(&text, &[]).unwrap()).unwrap()
}

fn unit_disk() -> Ellipsoid {
    Ellipsoid::new(Matrix::identity(2, 2)).unwrap()
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let a = car();
    let (cl, _) = closed_loop(&a).unwrap();
    let mut s = cl.equilibrium_state().unwrap();
    for _ in 0..100 {
        let next = step_closed_loop(&s, &cl).unwrap();
        assert!((&next.x - &s.x).amax() < 1e-10, "{} vs {}", next.x, s.x);
        assert!((&next.omega - &s.omega).amax() < 1e-10);
        s = next;
    }
}

#[test]
fn exact_feedforward_decays_geometrically() {
    let p = CarParams::default();
    let x = Vector::from_column_slice(&[15.0, -0.0233, 0.244]);
    let u = Vector::from_column_slice(&[0.0, -0.0046]);
    let dt = 0.01;
    let mut z = Vector::from_column_slice(&[1.0, 1.0]);
    for k in 1..=200 {
        let t = torque_control(&z, &x, &u, &p).unwrap();
        z += aux_dynamics(&z, &t, &x, &u, &p).unwrap() * dt;
        let expect = (1.0 - dt / p.i_w).powi(k);
        assert!((z[0] - expect).abs() < 1e-12 && (z[1] - expect).abs() < 1e-12, "step {k}: {z}");
    }
}

/// Same closed loop, written out from the model equations directly.
fn reference_step(x: &[f64; 3], w: &[f64; 2], cl: &ClosedLoop) -> ([f64; 3], [f64; 2]) {
    let p = &cl.car;
    let speeds = |x: &[f64; 3]| {
        [
            x[0] * (x[1] - p.delta).cos() + x[2] * p.lf * p.delta.sin(),
            x[0] * x[1].cos(),
        ]
    };
    let body = |x: &[f64; 3], s: &[f64; 2]| {
        let (v, beta, yaw) = (x[0], x[1], x[2]);
        let fx = [-p.cx_f * s[0], -p.cx_r * s[1]];
        let (vx, vy) = (v * beta.cos(), v * beta.sin());
        let fyf = p.ca_f * (p.delta - ((vy + p.lf * yaw) / vx).atan());
        let fyr = p.ca_r * -((vy - p.lr * yaw) / vx).atan();
        let lat = fx[0] * p.delta.sin() + fyf * p.delta.cos();
        let long = fx[0] * p.delta.cos() - fyf * p.delta.sin() + fx[1];
        let side = lat + fyr;
        [
            (long * beta.cos() + side * beta.sin()) / p.m,
            (side * beta.cos() - long * beta.sin()) / (p.m * v) - yaw,
            (p.lf * lat - p.lr * fyr) / p.i_z,
        ]
    };
    let xt: Vec<f64> = (0..3).map(|i| x[i] - cl.x_ss[i]).collect();
    let u: [f64; 2] = std::array::from_fn(|i| cl.u_ss[i] - (0..3).map(|j| cl.k[(i, j)] * xt[j]).sum::<f64>());
    let phi = |x: &[f64; 3]| {
        let vs = speeds(x);
        [vs[0] / ((1.0 + u[0]) * p.r), vs[1] / ((1.0 + u[1]) * p.r)]
    };
    let vs = speeds(x);
    let slip = [(vs[0] - w[0] * p.r) / (w[0] * p.r), (vs[1] - w[1] * p.r) / (w[1] * p.r)];
    let f_cmd = body(x, &u);
    let h = 1e-6;
    let mut rate = [0.0; 2];
    for j in 0..3 {
        let (mut hi, mut lo) = (*x, *x);
        hi[j] += h;
        lo[j] -= h;
        let (a, b) = (phi(&hi), phi(&lo));
        for i in 0..2 {
            rate[i] += (a[i] - b[i]) / (2.0 * h) * f_cmd[j];
        }
    }
    let ph = phi(x);
    let wn: [f64; 2] = std::array::from_fn(|i| {
        let z = w[i] - ph[i];
        w[i] + cl.dt * (rate[i] - z.clamp(-p.csat, p.csat) / p.i_w)
    });
    let f = body(x, &slip);
    (std::array::from_fn(|i| x[i] + cl.dt * f[i]), wn)
}

#[test]
fn matches_independent_integrator() {
    let a = car();
    let (cl, _) = closed_loop(&a).unwrap();
    let p = Ellipsoid::new(a.resolved.params["P"].clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let xt = sample_in_ellipsoid(&mut rng, &p, 1.0);
        let z = sample_in_ellipsoid(&mut rng, &unit_disk(), 1.0);
        let mut s = cl.state_at(&xt, &z).unwrap();
        let mut x = [s.x[0], s.x[1], s.x[2]];
        let mut w = [s.omega[0], s.omega[1]];
        for k in 0..100 {
            s = step_closed_loop(&s, &cl).unwrap();
            (x, w) = reference_step(&x, &w, &cl);
            for (i, (got, want)) in s.x.iter().zip(&x).enumerate() {
                assert!((got - want).abs() < 1e-9, "step {k}: x{i} {got} vs {want}");
            }
            for (i, (got, want)) in s.omega.iter().zip(&w).enumerate() {
                assert!((got - want).abs() < 1e-9, "step {k}: omega{i} {got} vs {want}");
            }
        }
    }
}

#[test]
fn one_step_run_equals_step() {
    let a = car();
    let (cl, monitors) = closed_loop(&a).unwrap();
    let s0 = cl.state_at(&Vector::from_column_slice(&[0.1, 0.0, 0.01]), &Vector::from_column_slice(&[0.3, -0.2])).unwrap();
    let cfg = SimConfig {
        steps: 1,
        initial: s0.clone(),
        monitors,
    };
    let t = run(&cl, &cfg, &a.resolved.params, &a.resolved.car_functions()).unwrap();
    assert_eq!(t.records.len(), 2);
    let s1 = step_closed_loop(&s0, &cl).unwrap();
    assert_eq!(t.records[1].x, s1.x);
    assert_eq!(t.records[1].omega, s1.omega);
}

#[test]
fn runs_are_deterministic() {
    let a = car();
    let (cl, monitors) = closed_loop(&a).unwrap();
    let s0 = cl.state_at(&Vector::from_column_slice(&[-0.2, 0.004, 0.0]), &Vector::from_column_slice(&[0.5, 0.5])).unwrap();
    let cfg = SimConfig {
        steps: 500,
        initial: s0,
        monitors,
    };
    let funcs = a.resolved.car_functions();
    let one = run(&cl, &cfg, &a.resolved.params, &funcs).unwrap().to_tsv();
    let two = run(&cl, &cfg, &a.resolved.params, &funcs).unwrap().to_tsv();
    assert_eq!(one, two);
    assert_eq!(one.lines().count(), 502);
}

#[test]
fn lyapunov_value_decreases_on_the_linearization() {
    let a = car();
    let params = &a.resolved.params;
    let acl = &params["A"] - &params["B"] * &params["K"];
    let p = Ellipsoid::new(params["P"].clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let mut x = sample_in_ellipsoid(&mut rng, &p, 1.0);
        for _ in 0..200 {
            let next = &acl * &x;
            assert!(p.value(&next) <= p.value(&x) + 1e-12);
            x = next;
        }
    }
}

#[test]
fn manifold_set_is_invariant_on_the_full_simulation() {
    let a = car();
    let (cl, monitors) = closed_loop(&a).unwrap();
    let sliding: Vec<Monitor> = monitors.into_iter().filter(|m| m.name == "sliding_set").collect();
    assert_eq!(sliding.len(), 1);
    let p = Ellipsoid::new(a.resolved.params["P"].clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let configs: Vec<SimConfig> = (0..100)
        .map(|i| {
            let xt = sample_in_ellipsoid(&mut rng, &p, 1.0);
            let mut z = sample_in_ellipsoid(&mut rng, &unit_disk(), 1.0);
            if i % 4 == 0 {
                z /= z.norm();
            }
            SimConfig {
                steps: 1000,
                initial: cl.state_at(&xt, &z).unwrap(),
                monitors: sliding.clone(),
            }
        })
        .collect();
    let funcs = a.resolved.car_functions();
    for t in sweep(&cl, &configs, &a.resolved.params, &funcs) {
        let t = t.unwrap();
        let rep = monitor_report(&t, &sliding, &a.resolved.params, &funcs, 1e-9).unwrap();
        assert_eq!(rep[0].first_violation, None, "max {}", rep[0].max);
    }
}

#[test]
fn monitor_report_flags_scaled_traces() {
    let a = car();
    let (cl, monitors) = closed_loop(&a).unwrap();
    let funcs = a.resolved.car_functions();
    let cfg = SimConfig {
        steps: 50,
        initial: cl.state_at(&Vector::from_column_slice(&[0.1, 0.001, 0.01]), &Vector::from_column_slice(&[0.2, 0.1])).unwrap(),
        monitors: monitors.clone(),
    };
    let mut t = run(&cl, &cfg, &a.resolved.params, &funcs).unwrap();
    let rep = monitor_report(&t, &monitors, &a.resolved.params, &funcs, 0.0).unwrap();
    assert!(rep.iter().all(|r| r.first_violation.is_none() && r.max < 1.0));
    for r in &mut t.records {
        r.xtilde *= 10.0;
        r.z *= 10.0;
    }
    let rep = monitor_report(&t, &monitors, &a.resolved.params, &funcs, 0.0).unwrap();
    assert!(rep.iter().all(|r| r.first_violation == Some(0)), "{rep:?}");
    assert!(monitor_report(&t, &[], &a.resolved.params, &funcs, 0.0).unwrap().is_empty());
}

#[test]
fn monitor_value_is_the_level() {
    let m = Monitor {
        name: "disk".into(),
        predicate: Predicate::parse("z'*z <= 1").unwrap(),
    };
    let a = car();
    let (cl, _) = closed_loop(&a).unwrap();
    let s = cl.state_at(&Vector::zeros(3), &Vector::from_column_slice(&[0.6, 0.0])).unwrap();
    let r = cl.observe(&s).unwrap();
    let v = m.value(&r, &std::collections::BTreeMap::new(), &NoFunctions).unwrap();
    assert!((v - 0.36).abs() < 1e-9, "{v}");
}

#[test]
fn invalid_configuration_is_rejected() {
    let a = car();
    let (mut cl, _) = closed_loop(&a).unwrap();
    let cfg = SimConfig {
        steps: 0,
        initial: cl.equilibrium_state().unwrap(),
        monitors: vec![],
    };
    assert!(run(&cl, &cfg, &a.resolved.params, &NoFunctions).is_err());
    cl.dt = 0.0;
    let cfg = SimConfig { steps: 5, ..cfg };
    assert!(run(&cl, &cfg, &a.resolved.params, &NoFunctions).is_err());
}
