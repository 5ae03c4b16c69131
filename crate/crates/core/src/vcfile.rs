//! Self-contained verification-condition file: the annotated program,
//! every parameter value the VCs mention, the vehicle bindings, and the VCs
//! with their domains. Tab-separated records, one per line:
//!
//! ```text
//! param     <name>  <rows>  <cols>  <row-major values separated by spaces>
//! car       <key>  <value>
//! function  <name>  <vehicle function>
//! vc        <id>  <loop|->  <kind>  <origin>
//! hyp       <id>  <predicate>
//! concl     <id>  <predicate>
//! domain    <id>  <var>  <component>  <lo>  <hi>  <provenance>
//! ```
//!
//! preceded by the program records of the annotated program.

use std::collections::BTreeMap;
use std::fmt::Write;

use thiserror::Error;

use crate::codegen::{parse_pred_field, parse_program_record, write_program_records, AnnotatedProgram, CodegenError};
use crate::numerics::Matrix;
use crate::pipeline::Autocoded;
use crate::vehicle::{CarFunctions, CarParams, VehicleFn};
use crate::verifier::{Context, DomainBox, Interval, Vc, VcKind, VarBox};

#[derive(Debug, Error)]
pub enum VcFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Program(#[from] CodegenError),
}

fn perr(line: usize, message: impl Into<String>) -> VcFileError {
    VcFileError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcBundle {
    pub program: AnnotatedProgram,
    pub params: BTreeMap<String, Matrix>,
    pub car: Option<CarParams>,
    pub functions: Vec<(String, VehicleFn)>,
    pub vcs: Vec<Vc>,
}

impl VcBundle {
    pub fn from_autocoded(a: &Autocoded) -> Self {
        VcBundle {
            program: a.program.clone(),
            params: a.resolved.params.clone(),
            car: a.resolved.car.clone(),
            functions: a.resolved.functions.clone(),
            vcs: a.vcs.clone(),
        }
    }

    pub fn car_functions(&self) -> CarFunctions {
        CarFunctions {
            params: self.car.clone().unwrap_or_default(),
            bindings: self.functions.clone(),
        }
    }

    pub fn context<'a>(&'a self, funcs: &'a CarFunctions) -> Context<'a> {
        Context {
            params: &self.params,
            funcs,
        }
    }
}

fn function_name(f: VehicleFn) -> String {
    match toml::Value::try_from(f) {
        Ok(toml::Value::String(s)) => s,
        _ => unreachable!("vehicle functions serialize as strings"),
    }
}

pub fn write_vc_file(b: &VcBundle) -> String {
    let mut out = String::new();
    write_program_records(&mut out, &b.program);
    for (name, m) in &b.params {
        let vals: Vec<String> = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].to_string())
            .collect();
        let _ = writeln!(out, "param\t{name}\t{}\t{}\t{}", m.nrows(), m.ncols(), vals.join(" "));
    }
    if let Some(car) = &b.car {
        if let Ok(toml::Value::Table(t)) = toml::Value::try_from(car) {
            for (k, v) in t {
                let _ = writeln!(out, "car\t{k}\t{v}");
            }
        }
    }
    for (name, f) in &b.functions {
        let _ = writeln!(out, "function\t{name}\t{}", function_name(*f));
    }
    for vc in &b.vcs {
        let lp = vc.loop_id.map_or("-".to_string(), |l| l.to_string());
        let _ = writeln!(out, "vc\t{}\t{lp}\t{}\t{}", vc.id, vc.kind, vc.origin);
        let _ = writeln!(out, "hyp\t{}\t{}", vc.id, vc.hypothesis);
        let _ = writeln!(out, "concl\t{}\t{}", vc.id, vc.conclusion);
        for (var, vb) in &vc.domain.vars {
            for (i, iv) in vb.intervals.iter().enumerate() {
                let _ = writeln!(out, "domain\t{}\t{var}\t{i}\t{}\t{}\t{}", vc.id, iv.lo, iv.hi, vb.provenance);
            }
        }
    }
    out
}

fn number<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, VcFileError> {
    s.parse().map_err(|_| perr(line, format!("bad number `{s}`")))
}

pub fn parse_vc_file(text: &str) -> Result<VcBundle, VcFileError> {
    let mut program = AnnotatedProgram::default();
    let mut params = BTreeMap::new();
    let mut car = toml::Table::new();
    let mut functions = Vec::new();
    let mut vcs: Vec<Vc> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if parse_program_record(&mut program, &f, line)? {
            continue;
        }
        let want = |k: usize| {
            if f.len() == k {
                Ok(())
            } else {
                Err(perr(line, format!("`{}` record needs {k} fields, found {}", f[0], f.len())))
            }
        };
        let vc_mut = |vcs: &mut Vec<Vc>, id: &str| -> Result<usize, VcFileError> {
            vcs.iter()
                .position(|v| v.id == id)
                .ok_or_else(|| perr(line, format!("unknown vc `{id}`")))
        };
        match f[0] {
            "param" => {
                want(5)?;
                let rows: usize = number(line, f[2])?;
                let cols: usize = number(line, f[3])?;
                let vals = f[4]
                    .split(' ')
                    .filter(|s| !s.is_empty())
                    .map(|s| number(line, s))
                    .collect::<Result<Vec<f64>, _>>()?;
                if vals.len() != rows * cols {
                    return Err(perr(line, format!("`{}` needs {} values, found {}", f[1], rows * cols, vals.len())));
                }
                params.insert(f[1].to_string(), Matrix::from_row_slice(rows, cols, &vals));
            }
            "car" => {
                want(3)?;
                let v: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", f[2]))
                    .map_err(|e| perr(line, e.to_string()))?
                    .remove("v")
                    .expect("key just written");
                car.insert(f[1].to_string(), v);
            }
            "function" => {
                want(3)?;
                let fun: VehicleFn = toml::Value::String(f[2].to_string())
                    .try_into()
                    .map_err(|_| perr(line, format!("unknown vehicle function `{}`", f[2])))?;
                functions.push((f[1].to_string(), fun));
            }
            "vc" => {
                want(5)?;
                if vcs.iter().any(|v| v.id == f[1]) {
                    return Err(perr(line, format!("duplicate vc `{}`", f[1])));
                }
                let loop_id = match f[2] {
                    "-" => None,
                    s => Some(number(line, s)?),
                };
                let kind: VcKind = f[3].parse().map_err(|_| perr(line, format!("unknown kind `{}`", f[3])))?;
                vcs.push(Vc {
                    id: f[1].to_string(),
                    loop_id,
                    kind,
                    hypothesis: crate::expr::Predicate::truth(),
                    conclusion: crate::expr::Predicate::truth(),
                    domain: DomainBox::default(),
                    origin: f[4].to_string(),
                });
            }
            "hyp" | "concl" => {
                want(3)?;
                let i = vc_mut(&mut vcs, f[1])?;
                let p = parse_pred_field(line, f[2])?;
                if f[0] == "hyp" {
                    vcs[i].hypothesis = p;
                } else {
                    vcs[i].conclusion = p;
                }
            }
            "domain" => {
                want(7)?;
                let i = vc_mut(&mut vcs, f[1])?;
                let comp: usize = number(line, f[3])?;
                let iv = Interval {
                    lo: number(line, f[4])?,
                    hi: number(line, f[5])?,
                };
                let vb = vcs[i].domain.vars.entry(f[2].to_string()).or_insert_with(|| VarBox {
                    intervals: Vec::new(),
                    provenance: f[6].to_string(),
                });
                if comp != vb.intervals.len() {
                    return Err(perr(line, format!("component {comp} of `{}` out of order", f[2])));
                }
                vb.intervals.push(iv);
            }
            other => return Err(perr(line, format!("unknown record `{other}`"))),
        }
    }
    let car = if car.is_empty() {
        None
    } else {
        Some(
            toml::Value::Table(car)
                .try_into::<CarParams>()
                .map_err(|e| perr(0, format!("car parameters: {e}")))?,
        )
    };
    Ok(VcBundle {
        program,
        params,
        car,
        functions,
        vcs,
    })
}
