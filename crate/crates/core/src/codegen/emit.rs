//! Text forms of an annotated program.
//!
//! The matlab-like form puts contracts in `/*@ ... */` comment blocks
//! around the statements. The machine form is tab-separated, one record
//! per line:
//!
//! ```text
//! program  <name>
//! stmt     <block|->  input   <var>
//! stmt     <block|->  assign  <var>  <expr>
//! stmt     <block|->  output  <expr>
//! span     <loop>  <first>  <last>
//! contract <before|after>  <stmt>  <requires|assumes|ensures>  <origin>  pred    <predicate>
//! contract <before|after>  <stmt>  <requires|assumes|ensures>  <origin>  update  <target>  <expr>
//! ```

use std::fmt::Write;

use super::{
    Anchor, AnnotatedProgram, CodegenError, Contract, ContractBody, ContractKind, Statement, StatementKind,
};
use crate::expr::{Expr, Predicate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    MatlabLike,
    MachineVc,
}

pub fn emit_text(prog: &AnnotatedProgram, style: Style) -> String {
    match style {
        Style::MatlabLike => emit_matlab(prog),
        Style::MachineVc => emit_machine(prog),
    }
}

fn statement_text(s: &Statement) -> String {
    match &s.kind {
        StatementKind::Input(v) => format!("{v} = Input();"),
        StatementKind::Assign(v, e) => format!("{v} = {e};"),
        StatementKind::Output(e) => format!("Output({e});"),
    }
}

fn emit_matlab(prog: &AnnotatedProgram) -> String {
    let mut out = format!("% {}: autocoded program with contracts\n", prog.name);
    let block = |out: &mut String, anchor: Anchor| {
        let cs: Vec<&Contract> = prog.contracts_at(anchor).collect();
        if cs.is_empty() {
            return;
        }
        out.push_str("/*@\n");
        for c in cs {
            let _ = writeln!(out, "  {} {};", c.kind.keyword(), c.body);
        }
        out.push_str("*/\n");
    };
    for (i, s) in prog.statements.iter().enumerate() {
        block(&mut out, Anchor::Before(i));
        out.push_str(&statement_text(s));
        out.push('\n');
        block(&mut out, Anchor::After(i));
    }
    out
}

fn emit_machine(prog: &AnnotatedProgram) -> String {
    let mut out = String::new();
    write_program_records(&mut out, prog);
    out
}

pub(crate) fn write_program_records(out: &mut String, prog: &AnnotatedProgram) {
    let _ = writeln!(out, "program\t{}", prog.name);
    for s in &prog.statements {
        let block = s.block.map_or("-".to_string(), |b| b.to_string());
        let _ = match &s.kind {
            StatementKind::Input(v) => writeln!(out, "stmt\t{block}\tinput\t{v}"),
            StatementKind::Assign(v, e) => writeln!(out, "stmt\t{block}\tassign\t{v}\t{e}"),
            StatementKind::Output(e) => writeln!(out, "stmt\t{block}\toutput\t{e}"),
        };
    }
    for (id, (first, last)) in &prog.spans {
        let _ = writeln!(out, "span\t{id}\t{first}\t{last}");
    }
    for c in &prog.contracts {
        let (side, i) = match c.anchor {
            Anchor::Before(i) => ("before", i),
            Anchor::After(i) => ("after", i),
        };
        let _ = write!(out, "contract\t{side}\t{i}\t{}\t{}\t", c.kind.keyword(), c.origin);
        let _ = match &c.body {
            ContractBody::Pred(p) => writeln!(out, "pred\t{p}"),
            ContractBody::Update { target, expr } => writeln!(out, "update\t{target}\t{expr}"),
        };
    }
}

fn perr(line: usize, message: impl Into<String>) -> CodegenError {
    CodegenError::Parse {
        line,
        message: message.into(),
    }
}

pub(crate) fn parse_expr_field(line: usize, s: &str) -> Result<Expr, CodegenError> {
    Expr::parse(s).map_err(|e| perr(line, format!("in `{s}`: {e}")))
}

pub(crate) fn parse_pred_field(line: usize, s: &str) -> Result<Predicate, CodegenError> {
    Predicate::parse(s).map_err(|e| perr(line, format!("in `{s}`: {e}")))
}

fn index(line: usize, s: &str) -> Result<usize, CodegenError> {
    s.parse().map_err(|_| perr(line, format!("expected an index, found `{s}`")))
}

/// Reads one program record into `prog`. Returns `false` for tags that are
/// not program records.
pub(crate) fn parse_program_record(
    prog: &mut AnnotatedProgram,
    fields: &[&str],
    line: usize,
) -> Result<bool, CodegenError> {
    let arity = |n: usize| {
        if fields.len() == n {
            Ok(())
        } else {
            Err(perr(line, format!("`{}` record needs {n} fields, found {}", fields[0], fields.len())))
        }
    };
    match fields[0] {
        "program" => {
            arity(2)?;
            prog.name = fields[1].to_string();
        }
        "stmt" => {
            if fields.len() < 4 {
                return Err(perr(line, "truncated statement"));
            }
            let block = match fields[1] {
                "-" => None,
                b => Some(index(line, b)?),
            };
            let kind = match fields[2] {
                "input" => {
                    arity(4)?;
                    StatementKind::Input(fields[3].to_string())
                }
                "assign" => {
                    arity(5)?;
                    StatementKind::Assign(fields[3].to_string(), parse_expr_field(line, fields[4])?)
                }
                "output" => {
                    arity(4)?;
                    StatementKind::Output(parse_expr_field(line, fields[3])?)
                }
                k => return Err(perr(line, format!("unknown statement kind `{k}`"))),
            };
            prog.statements.push(Statement { kind, block });
        }
        "span" => {
            arity(4)?;
            prog.spans
                .insert(index(line, fields[1])?, (index(line, fields[2])?, index(line, fields[3])?));
        }
        "contract" => {
            if fields.len() < 7 {
                return Err(perr(line, "truncated contract"));
            }
            let i = index(line, fields[2])?;
            let anchor = match fields[1] {
                "before" => Anchor::Before(i),
                "after" => Anchor::After(i),
                s => return Err(perr(line, format!("unknown anchor `{s}`"))),
            };
            let kind = match fields[3] {
                "requires" => ContractKind::Require,
                "assumes" => ContractKind::Assume,
                "ensures" => ContractKind::Ensure,
                k => return Err(perr(line, format!("unknown contract kind `{k}`"))),
            };
            let origin = fields[4].parse().map_err(|e: String| perr(line, e))?;
            let body = match fields[5] {
                "pred" => {
                    arity(7)?;
                    ContractBody::Pred(parse_pred_field(line, fields[6])?)
                }
                "update" => {
                    arity(8)?;
                    ContractBody::Update {
                        target: parse_expr_field(line, fields[6])?,
                        expr: parse_expr_field(line, fields[7])?,
                    }
                }
                b => return Err(perr(line, format!("unknown contract body `{b}`"))),
            };
            prog.add_contract(Contract {
                kind,
                body,
                anchor,
                origin,
            });
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses the machine form written by [`emit_text`] with [`Style::MachineVc`].
pub fn parse_program(text: &str) -> Result<AnnotatedProgram, CodegenError> {
    let mut prog = AnnotatedProgram::default();
    for (n, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if !parse_program_record(&mut prog, &fields, n + 1)? {
            return Err(perr(n + 1, format!("unknown record `{}`", fields[0])));
        }
    }
    let len = prog.statements.len();
    if let Some(c) = prog.contracts.iter().find(|c| c.anchor.statement() >= len) {
        return Err(perr(0, format!("contract anchored at statement {} of {len}", c.anchor.statement())));
    }
    Ok(prog)
}
