//! The `bindings` section: parameter values and how derived parameters
//! (equilibrium, linearization, LQR gain, Lyapunov shape) are obtained.
//!
//! ```toml
//! [bindings]
//! dt = 0.01
//! params = { a = [[0.5]], Kx = "2*a" }   # literals or expressions
//! functions = { f_func = "plant_f" }      # external name -> vehicle function
//!
//! [bindings.car]           # vehicle parameters; defaults apply
//! [bindings.equilibrium]   # x_ss, u_ss candidate; defines xss, uss, A, B
//! [bindings.lqr]           # Q, R for every linear plant with a `gain`
//! [bindings.synthesis]     # lyap_q, initial_box, ensure_scale
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Diagnostic, MatrixSpec, ModelError};
use crate::vehicle::{CarParams, VehicleFn};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bindings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub car: Option<CarParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<EquilibriumBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lqr: Option<LqrBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisBinding>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub functions: BTreeMap<String, VehicleFn>,
}

/// Candidate steady state, refined by the vehicle equilibrium check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumBinding {
    pub x_ss: Vec<f64>,
    pub u_ss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrBinding {
    #[serde(rename = "Q")]
    pub q: MatrixSpec,
    #[serde(rename = "R")]
    pub r: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisBinding {
    /// Right-hand side of the closed-loop Lyapunov equation; `1e-2·I` if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyap_q: Option<MatrixSpec>,
    /// Half-widths of a box that must lie inside the synthesized ellipsoid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_box: Option<Vec<f64>>,
    /// Multiplies the shape matrix in the loop-end `ensure`; values above 1
    /// ask for a strictly smaller set than the one assumed at loop start.
    #[serde(default = "one")]
    pub ensure_scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Parameter names defined by `[bindings.car]` and `[bindings.equilibrium]`.
pub const CAR_SCALARS: [&str; 8] = ["r", "Iw", "lf", "lr", "m", "Iz", "delta", "csat"];

impl Bindings {
    pub fn from_table(table: &toml::Table) -> Result<Bindings, ModelError> {
        Bindings::deserialize(toml::Value::Table(table.clone())).map_err(|e| {
            ModelError::Invalid(vec![Diagnostic {
                line: None,
                path: "bindings".into(),
                message: e.to_string().trim().to_string(),
            }])
        })
    }

    /// Effective car parameters: `[bindings.car]` or the defaults when only
    /// an equilibrium is given.
    pub fn car_params(&self) -> Option<CarParams> {
        match (&self.car, &self.equilibrium) {
            (Some(c), _) => Some(c.clone()),
            (None, Some(_)) => Some(CarParams::default()),
            (None, None) => None,
        }
    }
}

/// Applies `key.path=value` to a bindings table. The value is read as a TOML
/// value, falling back to a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not of the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("invalid override key `{key}`"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("override `{key}`: `{p}` is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
