//! TOML model format.
//!
//! ```toml
//! name = "toy"
//!
//! [[signals]]
//! name = "x"
//! dim = 2            # or [rows, cols]
//! io = "input"       # optional: "input" | "output"
//! inline = false     # optional
//!
//! [[blocks]]
//! kind = "gain"      # gain | sum | product | saturation | trig | constant | external
//! matrix = "-K"      # expression or nested list, row-major
//! inputs = ["x"]
//! output = "y"
//!
//! [[plants]]
//! kind = "linear"    # linear: A, B, optional C, D, gain | general: update, state_dim
//!
//! [[observers]]
//! kind = "ellipsoid" # ellipsoid: P | general: predicate
//!
//! [bindings]
//! dt = 0.01
//! ```
//!
//! Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};
use toml::Spanned;

use super::{
    Annotation, Block, BlockKind, Diagnostic, EllipsoidObserver, GeneralObserver, GeneralPlant, Io,
    LinearPlant, Model, ModelError, Signal, SourceLines, TrigFn,
};
use crate::expr::{Expr, Predicate, Shape};
use crate::numerics::Matrix;

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    signals: Vec<Spanned<SignalFile>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    blocks: Vec<Spanned<BlockFile>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    plants: Vec<Spanned<PlantFile>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    observers: Vec<Spanned<ObserverFile>>,
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    bindings: toml::Table,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SignalFile {
    name: String,
    dim: Dim,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    io: Option<IoFile>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    inline: bool,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum Dim {
    Vector(usize),
    Matrix([usize; 2]),
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
enum IoFile {
    Input,
    Output,
}

/// A matrix given either as an expression or as a numeric literal.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Expr(String),
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
    Column(Vec<f64>),
}

impl MatrixSpec {
    pub fn to_expr(&self) -> Result<Expr, String> {
        match self {
            MatrixSpec::Expr(s) => Expr::parse(s).map_err(|e| format!("in `{s}`: {e}")),
            MatrixSpec::Scalar(v) => Ok(Expr::scalar(*v)),
            MatrixSpec::Column(v) if v.is_empty() => Err("empty matrix".into()),
            MatrixSpec::Column(v) => Ok(Expr::Const(Matrix::from_column_slice(v.len(), 1, v))),
            MatrixSpec::Rows(rows) => {
                let cols = rows.first().map(Vec::len).unwrap_or(0);
                if cols == 0 || rows.iter().any(|r| r.len() != cols) {
                    return Err("matrix rows must be nonempty and of equal length".into());
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(Expr::Const(Matrix::from_row_slice(rows.len(), cols, &flat)))
            }
        }
    }

    fn from_expr(e: &Expr) -> MatrixSpec {
        MatrixSpec::Expr(e.to_string())
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BlockFile {
    Gain {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        matrix: MatrixSpec,
        inputs: Vec<String>,
        output: String,
    },
    Sum {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        signs: String,
        inputs: Vec<String>,
        output: String,
    },
    Product {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        transpose: Option<Vec<bool>>,
        inputs: Vec<String>,
        output: String,
    },
    Saturation {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        lo: MatrixSpec,
        hi: MatrixSpec,
        inputs: Vec<String>,
        output: String,
    },
    Trig {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        function: TrigFile,
        inputs: Vec<String>,
        output: String,
    },
    Constant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        value: MatrixSpec,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        inputs: Vec<String>,
        output: String,
    },
    External {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        function: String,
        arity: usize,
        inputs: Vec<String>,
        output: String,
    },
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
enum TrigFile {
    Sin,
    Cos,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum PlantFile {
    Linear {
        name: String,
        #[serde(rename = "A")]
        a: MatrixSpec,
        #[serde(rename = "B")]
        b: MatrixSpec,
        #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
        c: Option<MatrixSpec>,
        #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
        d: Option<MatrixSpec>,
        inputs: Vec<String>,
        outputs: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gain: Option<String>,
    },
    General {
        name: String,
        update: String,
        state_dim: usize,
        inputs: Vec<String>,
        outputs: Vec<String>,
    },
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ObserverFile {
    Ellipsoid {
        name: String,
        #[serde(rename = "P")]
        p: MatrixSpec,
        watch: Vec<String>,
    },
    General {
        name: String,
        predicate: String,
        watch: Vec<String>,
    },
}

#[derive(Default)]
struct Collector(Vec<Diagnostic>);

impl Collector {
    fn push(&mut self, lines: &SourceLines, path: String, message: String) {
        self.0.push(Diagnostic {
            line: lines.get(&path),
            path,
            message,
        });
    }

    fn expr(&mut self, lines: &SourceLines, path: String, spec: &MatrixSpec) -> Expr {
        spec.to_expr().unwrap_or_else(|m| {
            self.push(lines, path, m);
            Expr::scalar(0.0)
        })
    }
}

struct LineIndex(Vec<usize>);

impl LineIndex {
    fn new(text: &str) -> Self {
        LineIndex(
            std::iter::once(0)
                .chain(text.match_indices('\n').map(|(i, _)| i + 1))
                .collect(),
        )
    }

    fn line(&self, offset: usize) -> usize {
        self.0.partition_point(|&start| start <= offset)
    }

    /// Records the line of a table and of each `key = ...` inside it.
    fn record(&self, lines: &mut SourceLines, path: &str, text: &str, span: std::ops::Range<usize>) {
        lines.0.insert(path.to_string(), self.line(span.start));
        // Table spans may cover only the header; scan to the next header.
        let mut offset = span.start;
        for (n, l) in text[span.start..].split_inclusive('\n').enumerate() {
            let t = l.trim_start();
            if n > 0 && t.starts_with('[') {
                break;
            }
            if let Some(eq) = t.find('=') {
                let key = t[..eq].trim();
                if !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    lines
                        .0
                        .entry(format!("{path}.{key}"))
                        .or_insert_with(|| self.line(offset));
                }
            }
            offset += l.len();
        }
    }
}

fn syntax_error(e: toml::de::Error, index: &LineIndex) -> ModelError {
    let msg = e.message().trim().to_string();
    match e.span() {
        Some(span) => ModelError::Syntax(format!("line {}: {msg}", index.line(span.start))),
        None => ModelError::Syntax(msg),
    }
}

/// Parses a model document. Structural problems (bad expressions,
/// malformed matrices, kind-specific arity) are reported together as
/// diagnostics with line numbers.
pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    let index = LineIndex::new(text);
    let file: ModelFile = toml::from_str(text).map_err(|e| syntax_error(e, &index))?;
    let mut lines = SourceLines::default();
    let mut diags = Collector::default();

    let mut signals = Vec::new();
    for (i, s) in file.signals.iter().enumerate() {
        let path = format!("signals[{i}]");
        index.record(&mut lines, &path, text, s.span());
        let s = s.get_ref();
        let shape = match s.dim {
            Dim::Vector(n) => Shape::vector(n),
            Dim::Matrix([r, c]) => Shape::new(r, c),
        };
        if shape.rows == 0 || shape.cols == 0 {
            diags.push(&lines, format!("{path}.dim"), format!("signal `{}` has an empty dimension", s.name));
        }
        signals.push(Signal {
            name: s.name.clone(),
            shape,
            io: s.io.map(|io| match io {
                IoFile::Input => Io::Input,
                IoFile::Output => Io::Output,
            }),
            inline: s.inline,
        });
    }

    let mut blocks = Vec::new();
    for (i, b) in file.blocks.iter().enumerate() {
        let path = format!("blocks[{i}]");
        index.record(&mut lines, &path, text, b.span());
        let (name, kind, inputs, output) = match b.get_ref() {
            BlockFile::Gain { name, matrix, inputs, output } => {
                let m = diags.expr(&lines, format!("{path}.matrix"), matrix);
                (name, BlockKind::Gain(m), inputs, output)
            }
            BlockFile::Sum { name, signs, inputs, output } => {
                let mut parsed = Vec::new();
                for c in signs.chars() {
                    match c {
                        '+' => parsed.push(true),
                        '-' => parsed.push(false),
                        _ => diags.push(&lines, format!("{path}.signs"), format!("invalid sign `{c}`")),
                    }
                }
                if parsed.len() != inputs.len() {
                    diags.push(
                        &lines,
                        format!("{path}.signs"),
                        format!("{} signs for {} inputs", parsed.len(), inputs.len()),
                    );
                }
                (name, BlockKind::Sum(parsed), inputs, output)
            }
            BlockFile::Product { name, transpose, inputs, output } => {
                let t = transpose.clone().unwrap_or_else(|| vec![false; inputs.len()]);
                if t.len() != inputs.len() {
                    diags.push(
                        &lines,
                        format!("{path}.transpose"),
                        format!("{} flags for {} inputs", t.len(), inputs.len()),
                    );
                }
                (name, BlockKind::Product(t), inputs, output)
            }
            BlockFile::Saturation { name, lo, hi, inputs, output } => {
                let lo = diags.expr(&lines, format!("{path}.lo"), lo);
                let hi = diags.expr(&lines, format!("{path}.hi"), hi);
                (name, BlockKind::Saturation { lo, hi }, inputs, output)
            }
            BlockFile::Trig { name, function, inputs, output } => {
                let f = match function {
                    TrigFile::Sin => TrigFn::Sin,
                    TrigFile::Cos => TrigFn::Cos,
                };
                (name, BlockKind::Trig(f), inputs, output)
            }
            BlockFile::Constant { name, value, inputs, output } => {
                let v = diags.expr(&lines, format!("{path}.value"), value);
                (name, BlockKind::Constant(v), inputs, output)
            }
            BlockFile::External { name, function, arity, inputs, output } => (
                name,
                BlockKind::External {
                    function: function.clone(),
                    arity: *arity,
                },
                inputs,
                output,
            ),
        };
        let expected = match &kind {
            BlockKind::Gain(_) | BlockKind::Saturation { .. } | BlockKind::Trig(_) => Some(1),
            BlockKind::Constant(_) => Some(0),
            BlockKind::External { arity, .. } => Some(*arity),
            BlockKind::Sum(_) | BlockKind::Product(_) => None,
        };
        match expected {
            Some(n) if inputs.len() != n => diags.push(
                &lines,
                format!("{path}.inputs"),
                format!("{} block takes {n} input(s), got {}", kind.name(), inputs.len()),
            ),
            None if inputs.is_empty() => diags.push(
                &lines,
                format!("{path}.inputs"),
                format!("{} block needs at least one input", kind.name()),
            ),
            _ => {}
        }
        blocks.push(Block {
            name: name.clone().unwrap_or_else(|| output.clone()),
            kind,
            inputs: inputs.clone(),
            output: output.clone(),
        });
    }

    let mut annotations = Vec::new();
    for (i, p) in file.plants.iter().enumerate() {
        let path = format!("plants[{i}]");
        index.record(&mut lines, &path, text, p.span());
        annotations.push(match p.get_ref() {
            PlantFile::Linear { name, a, b, c, d, inputs, outputs, gain } => {
                Annotation::LinearPlant(LinearPlant {
                    name: name.clone(),
                    a: diags.expr(&lines, format!("{path}.A"), a),
                    b: diags.expr(&lines, format!("{path}.B"), b),
                    c: c.as_ref().map(|c| diags.expr(&lines, format!("{path}.C"), c)),
                    d: d.as_ref().map(|d| diags.expr(&lines, format!("{path}.D"), d)),
                    inputs: inputs.clone(),
                    outputs: outputs.clone(),
                    gain: gain.clone(),
                })
            }
            PlantFile::General { name, update, state_dim, inputs, outputs } => {
                let update = Expr::parse(update).unwrap_or_else(|e| {
                    diags.push(&lines, format!("{path}.update"), format!("in `{update}`: {e}"));
                    Expr::scalar(0.0)
                });
                Annotation::GeneralPlant(GeneralPlant {
                    name: name.clone(),
                    update,
                    state_dim: *state_dim,
                    inputs: inputs.clone(),
                    outputs: outputs.clone(),
                })
            }
        });
    }
    for (i, o) in file.observers.iter().enumerate() {
        let path = format!("observers[{i}]");
        index.record(&mut lines, &path, text, o.span());
        annotations.push(match o.get_ref() {
            ObserverFile::Ellipsoid { name, p, watch } => Annotation::EllipsoidObserver(EllipsoidObserver {
                name: name.clone(),
                p: diags.expr(&lines, format!("{path}.P"), p),
                watch: watch.clone(),
            }),
            ObserverFile::General { name, predicate, watch } => {
                let pred = Predicate::parse(predicate).unwrap_or_else(|e| {
                    diags.push(&lines, format!("{path}.predicate"), format!("in `{predicate}`: {e}"));
                    Predicate::truth()
                });
                Annotation::GeneralObserver(GeneralObserver {
                    name: name.clone(),
                    predicate: pred,
                    watch: watch.clone(),
                })
            }
        });
    }
    if !diags.0.is_empty() {
        return Err(ModelError::Invalid(diags.0));
    }
    Ok(Model {
        name: file.name,
        signals,
        blocks,
        annotations,
        bindings: file.bindings,
        lines,
    })
}

fn spanned<T>(v: T) -> Spanned<T> {
    Spanned::new(0..0, v)
}

/// Prints a model in the same format; `parse_model(print_model(m)) == m`.
pub fn print_model(m: &Model) -> String {
    let signals = m
        .signals
        .iter()
        .map(|s| {
            spanned(SignalFile {
                name: s.name.clone(),
                dim: if s.shape.cols == 1 {
                    Dim::Vector(s.shape.rows)
                } else {
                    Dim::Matrix([s.shape.rows, s.shape.cols])
                },
                io: s.io.map(|io| match io {
                    Io::Input => IoFile::Input,
                    Io::Output => IoFile::Output,
                }),
                inline: s.inline,
            })
        })
        .collect();
    let blocks = m
        .blocks
        .iter()
        .map(|b| {
            let name = (b.name != b.output).then(|| b.name.clone());
            let inputs = b.inputs.clone();
            let output = b.output.clone();
            spanned(match &b.kind {
                BlockKind::Gain(e) => BlockFile::Gain {
                    name,
                    matrix: MatrixSpec::from_expr(e),
                    inputs,
                    output,
                },
                BlockKind::Sum(signs) => BlockFile::Sum {
                    name,
                    signs: signs.iter().map(|&p| if p { '+' } else { '-' }).collect(),
                    inputs,
                    output,
                },
                BlockKind::Product(t) => BlockFile::Product {
                    name,
                    transpose: Some(t.clone()),
                    inputs,
                    output,
                },
                BlockKind::Saturation { lo, hi } => BlockFile::Saturation {
                    name,
                    lo: MatrixSpec::from_expr(lo),
                    hi: MatrixSpec::from_expr(hi),
                    inputs,
                    output,
                },
                BlockKind::Trig(f) => BlockFile::Trig {
                    name,
                    function: match f {
                        TrigFn::Sin => TrigFile::Sin,
                        TrigFn::Cos => TrigFile::Cos,
                    },
                    inputs,
                    output,
                },
                BlockKind::Constant(v) => BlockFile::Constant {
                    name,
                    value: MatrixSpec::from_expr(v),
                    inputs,
                    output,
                },
                BlockKind::External { function, arity } => BlockFile::External {
                    name,
                    function: function.clone(),
                    arity: *arity,
                    inputs,
                    output,
                },
            })
        })
        .collect();
    let mut plants = Vec::new();
    let mut observers = Vec::new();
    for a in &m.annotations {
        match a {
            Annotation::LinearPlant(p) => plants.push(spanned(PlantFile::Linear {
                name: p.name.clone(),
                a: MatrixSpec::from_expr(&p.a),
                b: MatrixSpec::from_expr(&p.b),
                c: p.c.as_ref().map(MatrixSpec::from_expr),
                d: p.d.as_ref().map(MatrixSpec::from_expr),
                inputs: p.inputs.clone(),
                outputs: p.outputs.clone(),
                gain: p.gain.clone(),
            })),
            Annotation::GeneralPlant(p) => plants.push(spanned(PlantFile::General {
                name: p.name.clone(),
                update: p.update.to_string(),
                state_dim: p.state_dim,
                inputs: p.inputs.clone(),
                outputs: p.outputs.clone(),
            })),
            Annotation::EllipsoidObserver(o) => observers.push(spanned(ObserverFile::Ellipsoid {
                name: o.name.clone(),
                p: MatrixSpec::from_expr(&o.p),
                watch: o.watch.clone(),
            })),
            Annotation::GeneralObserver(o) => observers.push(spanned(ObserverFile::General {
                name: o.name.clone(),
                predicate: o.predicate.to_string(),
                watch: o.watch.clone(),
            })),
        }
    }
    let file = ModelFile {
        name: m.name.clone(),
        signals,
        blocks,
        plants,
        observers,
        bindings: m.bindings.clone(),
    };
    toml::to_string(&file).expect("model serializes")
}
