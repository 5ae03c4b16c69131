//! Line-oriented verification report. Every line is a tab-separated record
//! whose first field names the record:
//!
//! ```text
//! manifest    <key>  <value>
//! vc          <id>  <loop|->  <kind>  <status>  <origin>
//! hypothesis  <id>  <predicate>
//! conclusion  <id>  <predicate>
//! domain      <id>  <var>  <[lo, hi] ...>  <provenance>
//! effort      <id>  samples=<n>  boxes=<n>  max_violation=<v|->
//! witness     <id>  <var>=<v1,v2,...> ...  hypothesis=<h>  conclusion=<c>
//! reason      <id>  <text>
//! bounds      <x|u|phi|omega>  <component>  <lo>  <hi>
//! summary     verified=<n>  falsified=<n>  unknown=<n>
//! ```

use std::fmt::Write;

use super::{Bounds, Status, Vc, Verdict};

#[derive(Debug, Clone, Copy)]
pub struct ReportEntry<'a> {
    pub vc: &'a Vc,
    pub verdict: &'a Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Summary {
    pub verified: usize,
    pub falsified: usize,
    pub unknown: usize,
}

impl Summary {
    pub fn of<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> Self {
        let mut s = Summary::default();
        for v in verdicts {
            match v.status {
                Status::Verified => s.verified += 1,
                Status::Falsified(_) => s.falsified += 1,
                Status::Unknown(_) => s.unknown += 1,
            }
        }
        s
    }

    pub fn all_verified(&self) -> bool {
        self.falsified == 0 && self.unknown == 0
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\t', '\n'], " ")
}

pub fn render_report(manifest: &[(String, String)], entries: &[ReportEntry<'_>], bounds: Option<&Bounds>) -> String {
    let mut out = String::new();
    for (k, v) in manifest {
        let _ = writeln!(out, "manifest\t{k}\t{}", one_line(v));
    }
    for e in entries {
        let vc = e.vc;
        let id = &vc.id;
        let lp = vc.loop_id.map_or("-".to_string(), |l| l.to_string());
        let _ = writeln!(out, "vc\t{id}\t{lp}\t{}\t{}\t{}", vc.kind, e.verdict.status.label(), vc.origin);
        let _ = writeln!(out, "hypothesis\t{id}\t{}", vc.hypothesis);
        let _ = writeln!(out, "conclusion\t{id}\t{}", vc.conclusion);
        for (var, b) in &vc.domain.vars {
            let ivs: Vec<String> = b.intervals.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "domain\t{id}\t{var}\t{}\t{}", ivs.join(" "), b.provenance);
        }
        let eff = &e.verdict.effort;
        let mv = eff.max_violation.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(out, "effort\t{id}\tsamples={}\tboxes={}\tmax_violation={mv}", eff.samples, eff.boxes);
        match &e.verdict.status {
            Status::Verified => {}
            Status::Falsified(w) => {
                let _ = write!(out, "witness\t{id}");
                for (var, m) in &w.point {
                    let vals: Vec<String> = m.iter().map(|v| v.to_string()).collect();
                    let _ = write!(out, "\t{var}={}", vals.join(","));
                }
                let _ = writeln!(out, "\thypothesis={}\tconclusion={}", w.hypothesis, w.conclusion);
            }
            Status::Unknown(reason) => {
                let _ = writeln!(out, "reason\t{id}\t{}", one_line(reason));
            }
        }
    }
    if let Some(b) = bounds {
        for (name, ivs) in [("x", &b.x), ("u", &b.u), ("phi", &b.phi), ("omega", &b.omega)] {
            for (i, iv) in ivs.iter().enumerate() {
                let _ = writeln!(out, "bounds\t{name}\t{i}\t{}\t{}", iv.lo, iv.hi);
            }
        }
    }
    let s = Summary::of(entries.iter().map(|e| e.verdict));
    let _ = writeln!(out, "summary\tverified={}\tfalsified={}\tunknown={}", s.verified, s.falsified, s.unknown);
    out
}
