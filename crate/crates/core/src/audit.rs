//! Aggregate recourse metrics, report tables and the confounding audit.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::classifier::Classifier;
use crate::data::{Label, Schema};
use crate::error::{Error, Result};
use crate::revise::{revise, RecourseResult, ReviseConfig, SweepOutcome};
use crate::vae::Vae;

/// Summary of a set of recourse results. Distance fields cover successes
/// only and are `None` when there are none.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    /// Shared `λ` of the results, if they all have the same one.
    pub lambda: Option<f64>,
    pub count: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_delta_z: Option<f64>,
    pub mean_cost: Option<f64>,
    pub mean_raw_l1: Option<f64>,
    pub median_changes: Option<f64>,
    pub max_changes: Option<usize>,
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// The per-result quantities the metrics are built from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResultSummary {
    pub lambda: f64,
    pub success: bool,
    pub delta_z: f64,
    pub cost: f64,
    pub raw_l1: f64,
    pub changes: usize,
}

impl From<&RecourseResult> for ResultSummary {
    fn from(r: &RecourseResult) -> Self {
        Self {
            lambda: r.lambda,
            success: r.success,
            delta_z: r.delta_z(),
            cost: r.cost,
            raw_l1: r.raw_l1,
            changes: r.changes.len(),
        }
    }
}

pub fn summarize(results: &[ResultSummary]) -> Result<AuditRow> {
    if results.is_empty() {
        return Err(Error::InvalidData("no recourse results to summarize".into()));
    }
    let lambda = results[0].lambda;
    let shared = results.iter().all(|r| r.lambda == lambda);
    let ok: Vec<&ResultSummary> = results.iter().filter(|r| r.success).collect();
    let mean = |f: fn(&ResultSummary) -> f64| -> Option<f64> {
        (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64)
    };
    let changes: Vec<f64> = ok.iter().map(|r| r.changes as f64).collect();
    Ok(AuditRow {
        lambda: shared.then_some(lambda),
        count: results.len(),
        successes: ok.len(),
        success_rate: ok.len() as f64 / results.len() as f64,
        mean_delta_z: mean(|r| r.delta_z),
        mean_cost: mean(|r| r.cost),
        mean_raw_l1: mean(|r| r.raw_l1),
        median_changes: median(&changes),
        max_changes: ok.iter().map(|r| r.changes).max(),
    })
}

pub fn recourse_metrics(results: &[&RecourseResult]) -> Result<AuditRow> {
    let s: Vec<ResultSummary> = results.iter().map(|&r| r.into()).collect();
    summarize(&s)
}

/// Flip statistics for one target classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipEntry {
    pub name: String,
    pub audited: usize,
    pub successes: usize,
    pub flips: usize,
    /// `flips / successes`, absent without successes.
    pub fraction: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    /// One row per `λ` in descending order, then the selected-best row
    /// (`lambda = None`).
    pub rows: Vec<AuditRow>,
    pub confounding: Vec<FlipEntry>,
}

impl AuditReport {
    /// Per-`λ` rows and a row for the per-individual best results.
    pub fn from_sweeps(outcomes: &[SweepOutcome]) -> Result<Self> {
        let rows: Vec<(Vec<ResultSummary>, ResultSummary)> = outcomes
            .iter()
            .map(|o| (o.results.iter().map(ResultSummary::from).collect(), o.best().into()))
            .collect();
        Self::from_summaries(&rows)
    }

    /// Same as [`AuditReport::from_sweeps`], from per-individual summaries
    /// (every `λ` result, then the selected one).
    pub fn from_summaries(per_row: &[(Vec<ResultSummary>, ResultSummary)]) -> Result<Self> {
        let first = per_row
            .first()
            .ok_or_else(|| Error::InvalidData("no recourse results to summarize".into()))?;
        let mut rows = Vec::new();
        for i in 0..first.0.len() {
            let per: Vec<ResultSummary> = per_row
                .iter()
                .map(|(rs, _)| {
                    rs.get(i)
                        .copied()
                        .ok_or_else(|| Error::InvalidData("rows were swept over different grids".into()))
                })
                .collect::<Result<_>>()?;
            rows.push(summarize(&per)?);
        }
        let best: Vec<ResultSummary> = per_row.iter().map(|(_, b)| *b).collect();
        let mut best_row = summarize(&best)?;
        best_row.lambda = None;
        rows.push(best_row);
        Ok(Self {
            rows,
            confounding: Vec::new(),
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "lambda\tcount\tsuccesses\tsuccess_rate\tmean_delta_z\tmean_cost\tmean_raw_l1\tmedian_changes\tmax_changes\n",
        );
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.lambda.map_or("best".to_string(), |l| format!("{l}")),
                r.count,
                r.successes,
                r.success_rate,
                opt(r.mean_delta_z),
                opt(r.mean_cost),
                opt(r.mean_raw_l1),
                opt(r.median_changes),
                r.max_changes.map_or("NA".to_string(), |m| m.to_string()),
            );
        }
        if !self.confounding.is_empty() {
            out.push('\n');
            out.push_str(&flip_table(&self.confounding, TableFormat::Tsv));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), format_decimal);
        let mut out = String::from(
            "| Setting | Mean Δz | Mean c(·) | Mean raw ℓ1 | (Median) # Changes | Success | Count |\n|---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let method = r.lambda.map_or("best".to_string(), |l| format!("λ = {l}"));
            let changes = match (r.median_changes, r.max_changes) {
                (Some(m), Some(x)) => format!("{} (max={x})", format_decimal(m)),
                _ => "-".into(),
            };
            let _ = writeln!(
                out,
                "| {method} | {} | {} | {} | {changes} | {} | {} |",
                opt(r.mean_delta_z),
                opt(r.mean_cost),
                opt(r.mean_raw_l1),
                format_decimal(r.success_rate),
                r.count,
            );
        }
        if !self.confounding.is_empty() {
            out.push('\n');
            out.push_str(&flip_table(&self.confounding, TableFormat::Markdown));
        }
        out
    }
}

pub fn flip_table(entries: &[FlipEntry], format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Tsv => {
            out.push_str("classifier\taudited\tsuccesses\tflips\tflip_fraction\n");
            for e in entries {
                let frac = e.fraction.map_or("NA".to_string(), |f| format!("{f}"));
                let _ = writeln!(out, "{}\t{}\t{}\t{}\t{frac}", e.name, e.audited, e.successes, e.flips);
            }
        }
        TableFormat::Markdown => {
            out.push_str("| Classifier | Flip fraction | Flips | Successes | Audited |\n|---|---|---|---|---|\n");
            for e in entries {
                let frac = e.fraction.map_or("-".to_string(), format_decimal);
                let _ = writeln!(out, "| {} | {frac} | {} | {} | {} |", e.name, e.flips, e.successes, e.audited);
            }
        }
    }
    out
}

/// Four decimals, trailing zeros trimmed, at least one decimal kept.
pub fn format_decimal(v: f64) -> String {
    let s = format!("{:.4}", v);
    let s = if s.contains('.') {
        let t = s.trim_end_matches('0');
        if t.ends_with('.') {
            format!("{t}0")
        } else {
            t.to_string()
        }
    } else {
        s
    };
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Tsv,
}

/// A named recourse result for one method.
pub struct TableColumn<'a> {
    pub name: &'a str,
    pub schema: &'a Schema,
    pub result: &'a RecourseResult,
}

/// One row per attribute changed by at least one method, `-` where a
/// method leaves it unchanged. Markdown rounds to four decimals; TSV keeps
/// full precision.
pub fn render_recourse_table(
    x_star: &[f64],
    schema: &Schema,
    columns: &[TableColumn<'_>],
    format: TableFormat,
) -> Result<String> {
    for c in columns {
        schema.ensure_compatible(c.schema)?;
        if c.result.original != x_star {
            return Err(Error::InvalidData(format!("column '{}' describes a different individual", c.name)));
        }
    }
    if x_star.len() != schema.len() {
        return Err(Error::shape("render_recourse_table", "row length differs from the schema"));
    }
    let changed: Vec<usize> = (0..schema.len())
        .filter(|&j| columns.iter().any(|c| c.result.changes.iter().any(|ch| ch.index == j)))
        .collect();
    let cell = |c: &TableColumn<'_>, j: usize| -> Option<f64> {
        c.result.changes.iter().find(|ch| ch.index == j).map(|ch| ch.proposed)
    };
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            let names: Vec<&str> = columns.iter().map(|c| c.name).collect();
            let _ = writeln!(out, "| Attribute | Original | {} |", names.join(" | "));
            let _ = writeln!(out, "|---|---|{}", "---|".repeat(columns.len()));
            for &j in &changed {
                let cells: Vec<String> = columns
                    .iter()
                    .map(|c| cell(c, j).map_or("-".to_string(), format_decimal))
                    .collect();
                let _ = writeln!(
                    out,
                    "| {} | {} | {} |",
                    schema.attributes()[j].name,
                    format_decimal(x_star[j]),
                    cells.join(" | ")
                );
            }
        }
        TableFormat::Tsv => {
            let names: Vec<&str> = columns.iter().map(|c| c.name).collect();
            let _ = writeln!(out, "attribute\toriginal\t{}", names.join("\t"));
            for &j in &changed {
                let cells: Vec<String> = columns
                    .iter()
                    .map(|c| cell(c, j).map_or("-".to_string(), |v| format!("{v}")))
                    .collect();
                let _ = writeln!(out, "{}\t{}\t{}", schema.attributes()[j].name, x_star[j], cells.join("\t"));
            }
        }
    }
    Ok(out)
}

/// A parsed row of a TSV recourse table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub attribute: String,
    pub original: f64,
    pub proposed: Vec<Option<f64>>,
}

impl TableRow {
    /// `original − proposed` per method.
    pub fn deltas(&self) -> Vec<Option<f64>> {
        self.proposed.iter().map(|p| p.map(|v| self.original - v)).collect()
    }
}

pub fn parse_recourse_table(tsv: &str) -> Result<(Vec<String>, Vec<TableRow>)> {
    let mut lines = tsv.lines();
    let header = lines.next().ok_or_else(|| Error::InvalidData("empty table".into()))?;
    let methods: Vec<String> = header.split('\t').skip(2).map(str::to_string).collect();
    let num = |s: &str, row: usize| -> Result<f64> {
        s.parse().map_err(|_| Error::Data {
            row,
            message: format!("'{s}' is not a number"),
        })
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != methods.len() + 2 {
            return Err(Error::Data {
                row: i + 1,
                message: format!("{} fields, expected {}", f.len(), methods.len() + 2),
            });
        }
        rows.push(TableRow {
            attribute: f[0].to_string(),
            original: num(f[1], i + 1)?,
            proposed: f[2..]
                .iter()
                .map(|s| if *s == "-" { Ok(None) } else { num(s, i + 1).map(Some) })
                .collect::<Result<_>>()?,
        });
    }
    Ok((methods, rows))
}

/// For every sample, recourse toward the class the target classifier does
/// not currently assign. A flip is counted when the reference classifier
/// `g` labels the decoded point at the first crossing differently from the
/// reconstruction of the sample. Fractions are over successful recourses.
pub fn confounding_audit(
    targets: &[(&str, &Classifier)],
    reference: &Classifier,
    vae: &Vae,
    samples: &[Vec<f64>],
    lambda: f64,
    config: &ReviseConfig,
) -> Result<Vec<FlipEntry>> {
    crate::revise::ensure_same_encoding(reference.encoder(), vae.features())?;
    let mut out = Vec::with_capacity(targets.len());
    for (name, clf) in targets {
        let per_sample: Vec<Option<bool>> = samples
            .par_iter()
            .map(|x| -> Result<Option<bool>> {
                let target = clf.predict_row(x)?.flipped();
                let cfg = ReviseConfig {
                    target,
                    record_trajectory: true,
                    ..config.clone()
                };
                let r = revise(x, clf, vae, lambda, &cfg)?;
                if !r.success {
                    return Ok(None);
                }
                let traj = r.trajectory.as_ref().expect("trajectory recorded");
                let at = r.crossing.expect("success implies a crossing");
                let before: Label = reference.predict_row(&traj[0].decoded)?;
                let after: Label = reference.predict_row(&traj[at].decoded)?;
                Ok(Some(before != after))
            })
            .collect::<Result<_>>()?;
        let successes = per_sample.iter().flatten().count();
        let flips = per_sample.iter().flatten().filter(|&&f| f).count();
        out.push(FlipEntry {
            name: name.to_string(),
            audited: samples.len(),
            successes,
            flips,
            fraction: (successes > 0).then(|| flips as f64 / successes as f64),
        });
    }
    Ok(out)
}
