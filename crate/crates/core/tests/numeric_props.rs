use credo::numerics::{
    cholesky, ellipsoid_affine_image, inverse, jacobian_fd1, lqr_gain, min_eigenvalue, solve_discrete_lyapunov,
    spectral_radius, symmetrize, Ellipsoid, Matrix, NumericsError, Vector,
};
use credo::verifier::{check_ellipsoid_containment, Interval, Status};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// `MᵀM + εI`, well-conditioned enough for the checks below.
fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let m = random_matrix(rng, n, n);
    symmetrize(&(m.transpose() * &m + Matrix::identity(n, n) * rng.random_range(0.1..1.0)))
}

fn random_stable(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a = random_matrix(rng, n, n);
    let rho = spectral_radius(&a).unwrap();
    a * (rng.random_range(0.2..0.95) / rho)
}

fn quad(m: &Matrix, x: &Vector) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

/// Uniform direction on the boundary `xᵀPx = 1`.
fn boundary_point(rng: &mut ChaCha8Rng, p: &Matrix) -> Vector {
    let l = cholesky(p).unwrap();
    let lt_inv = inverse(&l, "test").unwrap().transpose();
    let w = loop {
        let w = Vector::from_fn(p.nrows(), |_, _| rng.random_range(-1.0..1.0));
        let n = w.norm();
        if n > 1e-3 && n <= 1.0 {
            break w / n;
        }
    };
    lt_inv * w
}

#[test]
fn lyapunov_solution_decreases_along_trajectories() {
    let mut rng = rng(1);
    for n in 1..=5 {
        let a = random_stable(&mut rng, n);
        let q = random_spd(&mut rng, n);
        let p = solve_discrete_lyapunov(&a, &q).unwrap();
        let p = p.p();
        let residual = a.transpose() * p * &a - p + &q;
        assert!(residual.amax() <= 1e-9 * (1.0 + p.amax()), "residual {residual}");
        for _ in 0..1000 {
            let x = Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let v = quad(p, &x);
            let next = quad(p, &(&a * &x));
            assert!(next - v <= -quad(&q, &x) + 1e-9 * (1.0 + v), "V increased: {v} -> {next}");
        }
    }
}

#[test]
fn lyapunov_rejects_unstable_maps() {
    let a = Matrix::from_element(1, 1, 1.5);
    let q = Matrix::identity(1, 1);
    assert!(solve_discrete_lyapunov(&a, &q).is_err());
}

#[test]
fn lqr_closed_loop_decreases_the_riccati_form() {
    let mut rng = rng(2);
    for _ in 0..50 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=n);
        let a = random_matrix(&mut rng, n, n) * 1.5;
        let b = random_matrix(&mut rng, n, m);
        let q = random_spd(&mut rng, n);
        let r = random_spd(&mut rng, m);
        let lqr = lqr_gain(&a, &b, &q, &r).unwrap();
        let acl = &a - &b * &lqr.k;
        assert!((&acl - &lqr.closed_loop).amax() < 1e-12);
        assert!(spectral_radius(&acl).unwrap() < 1.0);
        // P - AclᵀPAcl = Q + KᵀRK ⪰ Q
        let drop = symmetrize(&(&lqr.p - acl.transpose() * &lqr.p * &acl));
        let excess = symmetrize(&(&drop - &q - lqr.k.transpose() * &r * &lqr.k));
        assert!(excess.amax() <= 1e-8 * (1.0 + lqr.p.amax()), "{excess}");
        assert!(min_eigenvalue(&(&drop - &q)).unwrap() >= -1e-8 * (1.0 + lqr.p.amax()));
    }
}

#[test]
fn jacobian_error_is_second_order() {
    let f = |x: &Vector| -> Result<Vector, NumericsError> {
        Ok(Vector::from_vec(vec![x[0].sin() * x[1], x[0].exp() + x[1].powi(3)]))
    };
    let exact = |x: &Vector| Matrix::from_row_slice(2, 2, &[x[0].cos() * x[1], x[0].sin(), x[0].exp(), 3.0 * x[1] * x[1]]);
    let mut rng = rng(3);
    for _ in 0..20 {
        let x = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let err = |h: f64| (jacobian_fd1(f, &x, Some(h)).unwrap() - exact(&x)).amax();
        let (coarse, fine) = (err(2e-2), err(1e-2));
        let order = (coarse / fine).log2();
        assert!(order >= 1.9, "observed order {order} ({coarse} -> {fine})");
    }
}

#[test]
fn affine_image_is_tight_on_boundary_samples() {
    let mut rng = rng(4);
    for case in 0..100 {
        let n = 3;
        let rows = 2 + case % 3;
        let p = random_spd(&mut rng, n);
        let l = random_matrix(&mut rng, rows, n);
        let e = Ellipsoid::new(p.clone()).unwrap();
        let img = ellipsoid_affine_image(&e, &l).unwrap();
        let mut max = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let x = boundary_point(&mut rng, &p);
            let v = img.value(&(&l * x));
            assert!(v <= 1.0 + 1e-9, "case {case}: image level {v}");
            max = max.max(v);
        }
        assert!(max >= 1.0 - 1e-3, "case {case}: image not tight, max {max}");
    }
}

#[test]
fn affine_image_of_a_collapsing_map_is_an_error() {
    let e = Ellipsoid::new(Matrix::identity(2, 2)).unwrap();
    assert!(ellipsoid_affine_image(&e, &Matrix::zeros(2, 2)).is_err());
}

/// Sampling falsifier: largest `xᵀPx` over boundary samples of `{xᵀQx ≤ 1}`.
fn sampled_max(rng: &mut ChaCha8Rng, q: &Matrix, p: &Matrix) -> f64 {
    (0..100_000).map(|_| quad(p, &boundary_point(rng, q))).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn containment_agrees_with_a_sampling_falsifier() {
    let mut rng = rng(5);
    let (mut verified, mut falsified) = (0, 0);
    let mut case = 0;
    while case < 100 {
        let n = rng.random_range(2..=3);
        let p = random_spd(&mut rng, n);
        // Half the cases shift toward containment.
        let s = random_matrix(&mut rng, n, n);
        let shift = if case % 2 == 0 { 0.3 } else { 0.0 };
        let q = symmetrize(&(&p + (&s + s.transpose()) * 0.3 + Matrix::identity(n, n) * shift));
        let gap = min_eigenvalue(&(&q - &p)).unwrap();
        if cholesky(&q).is_none() || gap.abs() < 0.05 {
            continue;
        }
        case += 1;
        let verdict = check_ellipsoid_containment(&q, &p).unwrap();
        let max = sampled_max(&mut rng, &q, &p);
        match &verdict.status {
            Status::Verified => {
                verified += 1;
                assert!(max <= 1.0 + 1e-9, "verified but sample reaches {max}");
            }
            Status::Falsified(w) => {
                falsified += 1;
                let x = Vector::from_column_slice(w.point["x"].as_slice());
                assert!((quad(&q, &x) - 1.0 - w.hypothesis).abs() < 1e-9);
                assert!(w.hypothesis <= 1e-9);
                assert!((quad(&p, &x) - 1.0 - w.conclusion).abs() < 1e-9 && w.conclusion > 0.0);
                assert!(max > 1.0, "falsified but no sample violates");
                assert!(w.conclusion >= max - 1.0 - 1e-9, "witness is the maximizer");
            }
            Status::Unknown(r) => panic!("unexpected UNKNOWN: {r}"),
        }
    }
    assert!(verified > 10 && falsified > 10, "{verified} verified, {falsified} falsified");
}

fn random_box(rng: &mut ChaCha8Rng, span: f64, width: f64) -> Interval {
    let lo = rng.random_range(-span..span);
    Interval::new(lo, lo + rng.random_range(0.0..width))
}

fn inside(rng: &mut ChaCha8Rng, i: Interval) -> f64 {
    if i.lo == i.hi {
        return i.lo;
    }
    match rng.random_range(0..10) {
        0 => i.lo,
        1 => i.hi,
        _ => rng.random_range(i.lo..=i.hi),
    }
}

#[test]
fn interval_operations_enclose_point_evaluations() {
    let mut rng = rng(6);
    type Binary = (&'static str, fn(Interval, Interval) -> Interval, fn(f64, f64) -> f64);
    let binary: [Binary; 3] = [
        ("add", Interval::add, |a, b| a + b),
        ("sub", Interval::sub, |a, b| a - b),
        ("mul", Interval::mul, |a, b| a * b),
    ];
    type Unary = (&'static str, fn(Interval) -> Interval, fn(f64) -> f64);
    let unary: [Unary; 4] = [
        ("neg", Interval::neg, |a| -a),
        ("sqr", Interval::sqr, |a| a * a),
        ("sin", Interval::sin, f64::sin),
        ("cos", Interval::cos, f64::cos),
    ];
    for _ in 0..10_000 {
        let (x, y) = (random_box(&mut rng, 10.0, 5.0), random_box(&mut rng, 10.0, 5.0));
        let (a, b) = (inside(&mut rng, x), inside(&mut rng, y));
        for (name, op, f) in binary {
            assert!(op(x, y).contains(f(a, b)), "{name} {x} {y} at {a} {b}");
        }
        for (name, op, f) in unary {
            assert!(op(x).contains(f(a)), "{name} {x} at {a}");
        }
        let den = if y.lo > 0.0 || y.hi < 0.0 { y } else { Interval::new(y.hi.max(0.0) + 0.1, y.hi.max(0.0) + 2.0) };
        let d = inside(&mut rng, den);
        assert!(x.div(den).unwrap().contains(a / d), "div {x} {den} at {a} {d}");
        let lo = random_box(&mut rng, 3.0, 1.0);
        let hi = Interval::new(lo.hi + 0.5, lo.hi + 0.5 + rng.random_range(0.0..1.0));
        let (l, h) = (inside(&mut rng, lo), inside(&mut rng, hi));
        assert!(x.sat(lo, hi).contains(a.max(l).min(h)), "sat {x} {lo} {hi}");
    }
    assert!(Interval::new(1.0, 2.0).div(Interval::new(-1.0, 1.0)).is_err());
}
