//! Single-track car with wheel dynamics, the slip-to-wheel-speed map `φ`,
//! the sliding manifold and both controllers.
//!
//! State `x = [V, β, ψ̇]` (speed, path angle, yaw rate), wheel speeds
//! `ω = [ω_F, ω_R]`, control input `u = [s_F, s_R]` (longitudinal slips).
//!
//! The body dynamics use a linear tire model: longitudinal friction
//! `fx_i = -C_x,i · s_i` and lateral force `fy_i = C_α,i · α_i` with axle slip
//! angles `α_F = δ - atan((V sinβ + l_f ψ̇)/(V cosβ))` and
//! `α_R = -atan((V sinβ - l_r ψ̇)/(V cosβ))`. Forces are resolved in the
//! body frame and the state derivative follows from Newton–Euler:
//! `V̇ = (F_X cosβ + F_Y sinβ)/m`, `β̇ = (F_Y cosβ - F_X sinβ)/(mV) - ψ̇`,
//! `ψ̈ = M_Z / I_z`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Functions};
use crate::numerics::{jacobian_fd, jacobian_fd1, solve, Matrix, NumericsError, Vector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VehicleError {
    #[error("parameter `{0}` must be positive")]
    Parameter(&'static str),
    #[error("wheel {wheel} speed {omega} is below the minimum {min}")]
    WheelSpeed { wheel: usize, omega: f64, min: f64 },
    #[error("slip {slip} of wheel {wheel} is at or below the floor {floor}")]
    Slip { wheel: usize, slip: f64, floor: f64 },
    #[error("speed {0} must be positive")]
    Speed(f64),
    #[error("expected a {expected}-vector for {what}, got length {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("equilibrium refinement failed after {iterations} iterations (residual {residual:e})")]
    Equilibrium { iterations: usize, residual: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarParams {
    pub m: f64,
    #[serde(rename = "Iz")]
    pub i_z: f64,
    pub lf: f64,
    pub lr: f64,
    pub r: f64,
    #[serde(rename = "Iw")]
    pub i_w: f64,
    #[serde(rename = "Cx_f")]
    pub cx_f: f64,
    #[serde(rename = "Cx_r")]
    pub cx_r: f64,
    #[serde(rename = "Ca_f")]
    pub ca_f: f64,
    #[serde(rename = "Ca_r")]
    pub ca_r: f64,
    pub delta: f64,
    pub csat: f64,
    pub omega_min: f64,
    /// Slips must stay above `-1 + slip_margin`.
    pub slip_margin: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        CarParams {
            m: 1500.0,
            i_z: 2500.0,
            lf: 1.2,
            lr: 1.4,
            r: 0.3,
            i_w: 1.8,
            cx_f: 60000.0,
            cx_r: 60000.0,
            ca_f: 55000.0,
            ca_r: 55000.0,
            delta: 0.05,
            csat: 1.0,
            omega_min: 1e-3,
            slip_margin: 0.05,
        }
    }
}

impl CarParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        let positive = [
            ("m", self.m),
            ("Iz", self.i_z),
            ("lf", self.lf),
            ("lr", self.lr),
            ("r", self.r),
            ("Iw", self.i_w),
            ("csat", self.csat),
            ("omega_min", self.omega_min),
            ("slip_margin", self.slip_margin),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(VehicleError::Parameter(name));
            }
        }
        Ok(())
    }

    pub fn slip_floor(&self) -> f64 {
        -1.0 + self.slip_margin
    }

    fn cx(&self) -> [f64; 2] {
        [self.cx_f, self.cx_r]
    }
}

/// Full simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct CarState {
    pub x: Vector,
    pub omega: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x_ss: Vector,
    pub u_ss: Vector,
    pub residual: f64,
    pub newton_iterations: usize,
}

pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-8;

fn expect_len(v: &Vector, n: usize, what: &'static str) -> Result<(), VehicleError> {
    if v.len() != n {
        return Err(VehicleError::Dimension {
            what,
            expected: n,
            got: v.len(),
        });
    }
    Ok(())
}

/// Wheel-axis speed projections `[V cos(β-δ) + ψ̇ l_f sin δ, V cos β]`.
fn axis_speeds(x: &Vector, p: &CarParams) -> [f64; 2] {
    let (v, beta, yaw) = (x[0], x[1], x[2]);
    [
        v * (beta - p.delta).cos() + yaw * p.lf * p.delta.sin(),
        v * beta.cos(),
    ]
}

fn check_slips(u: &Vector, p: &CarParams) -> Result<(), VehicleError> {
    expect_len(u, 2, "slips")?;
    for (wheel, &slip) in u.iter().enumerate() {
        if !(slip > p.slip_floor()) {
            return Err(VehicleError::Slip {
                wheel,
                slip,
                floor: p.slip_floor(),
            });
        }
    }
    Ok(())
}

pub fn longitudinal_slips(x: &Vector, omega: &Vector, p: &CarParams) -> Result<Vector, VehicleError> {
    expect_len(x, 3, "state")?;
    expect_len(omega, 2, "wheel speeds")?;
    let vs = axis_speeds(x, p);
    let mut s = Vector::zeros(2);
    for i in 0..2 {
        if !(omega[i] >= p.omega_min) {
            return Err(VehicleError::WheelSpeed {
                wheel: i,
                omega: omega[i],
                min: p.omega_min,
            });
        }
        let wr = omega[i] * p.r;
        s[i] = (vs[i] - wr) / wr;
    }
    Ok(s)
}

/// Wheel speeds that realize the slips `u` at state `x`.
pub fn phi(x: &Vector, u: &Vector, p: &CarParams) -> Result<Vector, VehicleError> {
    expect_len(x, 3, "state")?;
    check_slips(u, p)?;
    let vs = axis_speeds(x, p);
    Ok(Vector::from_fn(2, |i, _| vs[i] / ((1.0 + u[i]) * p.r)))
}

pub fn manifold_z(omega: &Vector, x: &Vector, u: &Vector, p: &CarParams) -> Result<Vector, VehicleError> {
    expect_len(omega, 2, "wheel speeds")?;
    Ok(omega - phi(x, u, p)?)
}

/// Longitudinal tire forces `-C_x,i · s_i`.
pub fn friction(u: &Vector, p: &CarParams) -> Result<Vector, VehicleError> {
    expect_len(u, 2, "slips")?;
    let c = p.cx();
    Ok(Vector::from_fn(2, |i, _| -c[i] * u[i]))
}

pub fn plant_f(x: &Vector, u: &Vector, p: &CarParams) -> Result<Vector, VehicleError> {
    expect_len(x, 3, "state")?;
    check_slips(u, p)?;
    let (v, beta, yaw) = (x[0], x[1], x[2]);
    if !(v > 0.0) {
        return Err(VehicleError::Speed(v));
    }
    let vx = v * beta.cos();
    let vy = v * beta.sin();
    if !(vx > 0.0) {
        return Err(VehicleError::Speed(vx));
    }
    let fx = friction(u, p)?;
    let alpha_f = p.delta - ((vy + p.lf * yaw) / vx).atan();
    let alpha_r = -((vy - p.lr * yaw) / vx).atan();
    let fy_f = p.ca_f * alpha_f;
    let fy_r = p.ca_r * alpha_r;
    let (sd, cd) = p.delta.sin_cos();
    let front_lat = fx[0] * sd + fy_f * cd;
    let force_x = fx[0] * cd - fy_f * sd + fx[1];
    let force_y = front_lat + fy_r;
    let moment = p.lf * front_lat - p.lr * fy_r;
    let (sb, cb) = beta.sin_cos();
    Ok(Vector::from_column_slice(&[
        (force_x * cb + force_y * sb) / p.m,
        (force_y * cb - force_x * sb) / (p.m * v) - yaw,
        moment / p.i_z,
    ]))
}

/// `∂φ/∂x` (2×3) by central differences.
pub fn dphi_dx(x: &Vector, u: &Vector, p: &CarParams) -> Result<Matrix, VehicleError> {
    jacobian_fd1(|xx: &Vector| phi(xx, u, p), x, None)
}

/// `ũ = -K x̃`
pub fn linear_control(xtilde: &Vector, k: &Matrix) -> Result<Vector, VehicleError> {
    if k.ncols() != xtilde.len() {
        return Err(VehicleError::Dimension {
            what: "gain columns",
            expected: k.ncols(),
            got: xtilde.len(),
        });
    }
    Ok(-(k * xtilde))
}

pub fn sat(z: &Vector, c: f64) -> Vector {
    z.map(|v| v.clamp(-c, c))
}

/// Torque command `fx·r + I_w (∂φ/∂x) f(x,u) - sat(z)`, with the friction
/// `fx` evaluated at the slips `u`.
pub fn torque_control(z: &Vector, x: &Vector, u: &Vector, p: &CarParams) -> Result<Vector, VehicleError> {
    expect_len(z, 2, "manifold coordinate")?;
    let fx = friction(u, p)?;
    torque_with_friction(z, x, u, &fx, p)
}

/// Torque law with the friction supplied by the caller.
pub fn torque_with_friction(
    z: &Vector,
    x: &Vector,
    u: &Vector,
    fx: &Vector,
    p: &CarParams,
) -> Result<Vector, VehicleError> {
    let ff = dphi_dx(x, u, p)? * plant_f(x, u, p)?;
    Ok(fx * p.r + ff * p.i_w - sat(z, p.csat))
}

/// `ż = (T - fx·r - I_w (∂φ/∂x) f(x,u)) / I_w`
pub fn aux_dynamics(
    _z: &Vector,
    t: &Vector,
    x: &Vector,
    u: &Vector,
    p: &CarParams,
) -> Result<Vector, VehicleError> {
    expect_len(t, 2, "torque")?;
    let fx = friction(u, p)?;
    let ff = dphi_dx(x, u, p)? * plant_f(x, u, p)?;
    Ok((t - fx * p.r - ff * p.i_w) / p.i_w)
}

pub fn wheel_dynamics(t: &Vector, fx: &Vector, p: &CarParams) -> Vector {
    (t - fx * p.r) / p.i_w
}

fn admissible(x: &Vector, u: &Vector, p: &CarParams) -> bool {
    x[0] > 0.0
        && x[1].abs() < std::f64::consts::FRAC_PI_2
        && u.iter().all(|&s| s > p.slip_floor())
}

/// Accepts the candidate if `‖f(x_ss, u_ss)‖∞ ≤ 1e-8`, otherwise refines it
/// with a damped minimum-norm Newton iteration over all five unknowns.
pub fn verify_equilibrium(x_ss: &Vector, u_ss: &Vector, p: &CarParams) -> Result<Equilibrium, VehicleError> {
    const MAX_NEWTON: usize = 50;
    p.validate()?;
    expect_len(x_ss, 3, "equilibrium state")?;
    expect_len(u_ss, 2, "equilibrium slips")?;
    let mut x = x_ss.clone();
    let mut u = u_ss.clone();
    let residual_at = |x: &Vector, u: &Vector| -> Option<f64> {
        if !admissible(x, u, p) {
            return None;
        }
        plant_f(x, u, p).ok().map(|f| f.amax())
    };
    let mut res = residual_at(&x, &u).ok_or(VehicleError::Equilibrium {
        iterations: 0,
        residual: f64::INFINITY,
    })?;
    let mut iterations = 0;
    while res > EQUILIBRIUM_TOLERANCE {
        if iterations == MAX_NEWTON {
            return Err(VehicleError::Equilibrium {
                iterations,
                residual: res,
            });
        }
        iterations += 1;
        let f = plant_f(&x, &u, p)?;
        let (a, b) = jacobian_fd(|x: &Vector, u: &Vector| plant_f(x, u, p), &x, &u, Some(1e-7))?;
        let j = Matrix::from_fn(3, 5, |r, c| if c < 3 { a[(r, c)] } else { b[(r, c - 3)] });
        let jjt = &j * j.transpose();
        let y = solve(&jjt, &Matrix::from_column_slice(3, 1, f.as_slice()), "equilibrium Newton")?;
        let step = -(j.transpose() * y);
        let mut t = 1.0;
        loop {
            let xn = &x + step.rows(0, 3) * t;
            let un = &u + step.rows(3, 2) * t;
            if let Some(rn) = residual_at(&xn, &un) {
                if rn < res {
                    x = xn;
                    u = un;
                    res = rn;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(VehicleError::Equilibrium {
                    iterations,
                    residual: res,
                });
            }
        }
    }
    Ok(Equilibrium {
        x_ss: x,
        u_ss: u,
        residual: res,
        newton_iterations: iterations,
    })
}

/// Which vehicle function an external model function stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleFn {
    /// `f(x, u)`, 3×1.
    PlantF,
    /// `(∂φ/∂x)ᵀ` at `(x, u)`, 3×2.
    DphiT,
    /// `fx(u)` as a function of `(x, u)`, 2×1.
    Friction,
    /// `φ(x, u)`, 2×1.
    Phi,
}

impl VehicleFn {
    pub fn result_shape(&self) -> (usize, usize) {
        match self {
            VehicleFn::PlantF => (3, 1),
            VehicleFn::DphiT => (3, 2),
            VehicleFn::Friction | VehicleFn::Phi => (2, 1),
        }
    }

    pub fn eval(&self, x: &Vector, u: &Vector, p: &CarParams) -> Result<Matrix, VehicleError> {
        Ok(match self {
            VehicleFn::PlantF => as_column(plant_f(x, u, p)?),
            VehicleFn::DphiT => dphi_dx(x, u, p)?.transpose(),
            VehicleFn::Friction => as_column(friction(u, p)?),
            VehicleFn::Phi => as_column(phi(x, u, p)?),
        })
    }
}

fn as_column(v: Vector) -> Matrix {
    let n = v.len();
    Matrix::from_column_slice(n, 1, v.as_slice())
}

/// Binds model function names to vehicle functions of `(x, u)`.
#[derive(Debug, Clone)]
pub struct CarFunctions {
    pub params: CarParams,
    pub bindings: Vec<(String, VehicleFn)>,
}

impl CarFunctions {
    pub fn lookup(&self, name: &str) -> Option<VehicleFn> {
        self.bindings.iter().find(|(n, _)| n == name).map(|(_, f)| *f)
    }
}

impl Functions for CarFunctions {
    fn call(&self, name: &str, args: &[Matrix]) -> Result<Matrix, EvalError> {
        let f = self
            .lookup(name)
            .ok_or_else(|| EvalError::UnknownFunction(name.to_string()))?;
        let fail = |message: String| EvalError::Function {
            name: name.to_string(),
            message,
        };
        if args.len() != 2 || args[0].shape() != (3, 1) || args[1].shape() != (2, 1) {
            let shapes: Vec<_> = args.iter().map(|a| a.shape()).collect();
            return Err(fail(format!("expected (3x1, 2x1) arguments, got {shapes:?}")));
        }
        let x = Vector::from_column_slice(args[0].as_slice());
        let u = Vector::from_column_slice(args[1].as_slice());
        f.eval(&x, &u, &self.params).map_err(|e| fail(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::vector;

    fn straight() -> CarParams {
        CarParams {
            delta: 0.0,
            ..CarParams::default()
        }
    }

    #[test]
    fn rolling_without_sliding() {
        let p = straight();
        let x = vector(&[10.0, 0.0, 0.0]);
        let w = 10.0 / 0.3;
        let s = longitudinal_slips(&x, &vector(&[w, w]), &p).unwrap();
        assert!(s.amax() < 1e-15);
        let s = longitudinal_slips(&x, &vector(&[w, 5.0 / 0.3]), &p).unwrap();
        assert!((s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phi_direct_substitution() {
        let w = phi(&vector(&[9.0, 0.0, 0.0]), &vector(&[0.0, 0.0]), &straight()).unwrap();
        assert!((w[1] - 30.0).abs() < 1e-12);
    }

    #[test]
    fn singularities_are_errors() {
        let p = CarParams::default();
        let x = vector(&[10.0, 0.0, 0.0]);
        assert!(matches!(
            longitudinal_slips(&x, &vector(&[1e-4, 1.0]), &p),
            Err(VehicleError::WheelSpeed { wheel: 0, .. })
        ));
        assert!(matches!(
            phi(&x, &vector(&[0.0, -0.96]), &p),
            Err(VehicleError::Slip { wheel: 1, .. })
        ));
        assert!(matches!(
            plant_f(&vector(&[0.0, 0.0, 0.0]), &vector(&[0.0, 0.0]), &p),
            Err(VehicleError::Speed(_))
        ));
    }

    #[test]
    fn manifold_offsets() {
        let p = CarParams::default();
        let x = vector(&[12.0, 0.01, 0.1]);
        let u = vector(&[0.02, -0.01]);
        let w = phi(&x, &u, &p).unwrap();
        assert!(manifold_z(&w, &x, &u, &p).unwrap().amax() < 1e-15);
        let z = manifold_z(&(&w + vector(&[1.0, 0.0])), &x, &u, &p).unwrap();
        assert!((z - vector(&[1.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn symmetric_straight_driving() {
        let p = CarParams {
            delta: 0.0,
            lr: 1.2,
            ..CarParams::default()
        };
        let f = plant_f(&vector(&[20.0, 0.0, 0.0]), &vector(&[0.03, 0.03]), &p).unwrap();
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], 0.0);
        assert!(f[0] < 0.0);
    }

    #[test]
    fn straight_equilibrium_accepted() {
        let e = verify_equilibrium(&vector(&[20.0, 0.0, 0.0]), &vector(&[0.0, 0.0]), &straight()).unwrap();
        assert_eq!(e.newton_iterations, 0);
    }

    #[test]
    fn control_laws() {
        let k = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.0, -1.0, 0.5]);
        assert_eq!(linear_control(&Vector::zeros(3), &k).unwrap(), Vector::zeros(2));
        let u = linear_control(&vector(&[1.0, 1.0, 2.0]), &k).unwrap();
        assert_eq!(u, vector(&[-9.0, 0.0]));
        assert!(linear_control(&vector(&[1.0]), &k).is_err());
        assert_eq!(sat(&vector(&[2.0, -2.0]), 1.0), vector(&[1.0, -1.0]));
    }

    #[test]
    fn wheel_dynamics_cases() {
        let p = CarParams::default();
        let fx = vector(&[100.0, -50.0]);
        assert!(wheel_dynamics(&(&fx * p.r), &fx, &p).amax() < 1e-15);
        let w = wheel_dynamics(&vector(&[p.i_w, 0.0]), &Vector::zeros(2), &p);
        assert_eq!(w, vector(&[1.0, 0.0]));
    }

    #[test]
    fn functions_check_argument_shapes() {
        let cf = CarFunctions {
            params: CarParams::default(),
            bindings: vec![("f_func".into(), VehicleFn::PlantF)],
        };
        let x = Matrix::from_column_slice(3, 1, &[15.0, 0.0, 0.2]);
        let u = Matrix::from_column_slice(2, 1, &[0.0, 0.0]);
        assert_eq!(cf.call("f_func", &[x.clone(), u.clone()]).unwrap().shape(), (3, 1));
        assert!(cf.call("f_func", &[u.clone(), x]).is_err());
        assert!(matches!(cf.call("g", &[u]), Err(EvalError::UnknownFunction(_))));
    }
}
