//! The per-row section of a revise report.
//!
//! ```text
//! record  row  lambda  success  iterations  crossing  delta_z  cost  raw_l1  n_changes  changes
//! ```
//!
//! `record` is `result` for each `λ` and `best` for the selected one.
//! `changes` lists `name=original>proposed` entries joined by `;`, or `-`.
//! A blank line ends the section; the summary table follows.

use std::fmt::Write as _;

use revise_core::audit::ResultSummary;
use revise_core::data::Schema;
use revise_core::revise::{RecourseResult, SweepOutcome};
use revise_core::{Error, Result};

pub const HEADER: &str = "record\trow\tlambda\tsuccess\titerations\tcrossing\tdelta_z\tcost\traw_l1\tn_changes\tchanges";

fn line(out: &mut String, kind: &str, row: usize, r: &RecourseResult, schema: &Schema) {
    let changes = if r.changes.is_empty() {
        "-".to_string()
    } else {
        r.changes
            .iter()
            .map(|c| format!("{}={}>{}", schema.attributes()[c.index].name, c.original, c.proposed))
            .collect::<Vec<_>>()
            .join(";")
    };
    let _ = writeln!(
        out,
        "{kind}\t{row}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{changes}",
        r.lambda,
        u8::from(r.success),
        r.iterations,
        r.crossing.map_or("-".to_string(), |c| c.to_string()),
        r.delta_z(),
        r.cost,
        r.raw_l1,
        r.changes.len(),
    );
}

pub fn write_records(rows: &[usize], outcomes: &[SweepOutcome], schema: &Schema) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (&row, o) in rows.iter().zip(outcomes) {
        for r in &o.results {
            line(&mut out, "result", row, r, schema);
        }
        line(&mut out, "best", row, o.best(), schema);
    }
    out
}

/// Reads the per-row section back into `(row, per-λ summaries, best)`.
pub fn read_records(text: &str) -> Result<Vec<(usize, Vec<ResultSummary>, ResultSummary)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => return Err(Error::InvalidData("not a revise report (unexpected header)".into())),
    }
    let mut out = Vec::new();
    let mut pending: Vec<ResultSummary> = Vec::new();
    for (i, l) in lines {
        if l.is_empty() {
            break;
        }
        let bad = |message: String| Error::Data { row: i, message };
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != 11 {
            return Err(bad(format!("{} fields, expected 11", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("'{s}' is not a number")));
        let row = f[1].parse::<usize>().map_err(|_| bad(format!("bad row '{}'", f[1])))?;
        let summary = ResultSummary {
            lambda: num(f[2])?,
            success: match f[3] {
                "1" => true,
                "0" => false,
                other => return Err(bad(format!("bad success flag '{other}'"))),
            },
            delta_z: num(f[6])?,
            cost: num(f[7])?,
            raw_l1: num(f[8])?,
            changes: f[9].parse().map_err(|_| bad(format!("bad change count '{}'", f[9])))?,
        };
        match f[0] {
            "result" => pending.push(summary),
            "best" => out.push((row, std::mem::take(&mut pending), summary)),
            other => return Err(bad(format!("unknown record '{other}'"))),
        }
    }
    if !pending.is_empty() {
        return Err(Error::InvalidData("report ends without a 'best' record".into()));
    }
    Ok(out)
}
