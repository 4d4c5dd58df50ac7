//! Rendering of reports as CSV, Markdown and NDJSON.
//!
//! Tables follow the layouts used when publishing safety scores: one row per
//! model with one column per demographic, a per-label log-perplexity summary,
//! a labelled correlation matrix, and one architecture-correlation row per
//! model family. Numbers are printed with four decimals; missing values print
//! as `n/a`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::analysis::{ArchCorrelation, Cell, CorrelationMatrix};
use crate::io::to_ndjson;
use crate::rankstat::SafetyReport;
use crate::scoring::{LabelStats, LogPplSummary};
use crate::SCHEMA_VERSION;

const NA: &str = "n/a";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    Csv,
    #[default]
    Markdown,
    Ndjson,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            "ndjson" | "jsonl" => Ok(Format::Ndjson),
            other => Err(format!("unknown format {other:?} (expected csv, markdown or ndjson)")),
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:.4}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| NA.to_string())
}

/// A header row plus data rows, rendered as CSV or Markdown.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn render(&self, format: Format) -> String {
        let mut out = String::new();
        match format {
            Format::Markdown => {
                let _ = writeln!(out, "<!-- schema: {SCHEMA_VERSION} -->");
                let _ = writeln!(out, "| {} |", self.header.join(" | "));
                let rule: Vec<&str> = (0..self.header.len())
                    .map(|i| if i == 0 { "---" } else { "---:" })
                    .collect();
                let _ = writeln!(out, "| {} |", rule.join(" | "));
                for row in &self.rows {
                    let _ = writeln!(out, "| {} |", row.join(" | "));
                }
            }
            Format::Csv | Format::Ndjson => {
                let _ = writeln!(out, "# schema: {SCHEMA_VERSION}");
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.header).expect("in-memory write");
                for row in &self.rows {
                    w.write_record(row).expect("in-memory write");
                }
                out.push_str(&String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8"));
            }
        }
        out
    }
}

#[derive(Serialize)]
struct SafetyRow<'a> {
    model_id: &'a str,
    group: &'a str,
    u: f64,
    n: usize,
    m: usize,
    safety: f64,
}

/// One row per model, one column per demographic, then the average.
pub fn safety_table(reports: &[SafetyReport], format: Format) -> String {
    if format == Format::Ndjson {
        let rows: Vec<SafetyRow> = reports
            .iter()
            .flat_map(|r| {
                r.per_group.iter().map(move |g| SafetyRow {
                    model_id: &r.model_id,
                    group: &g.group,
                    u: g.u,
                    n: g.n,
                    m: g.m,
                    safety: g.safety,
                })
            })
            .collect();
        return to_ndjson(&rows);
    }
    let groups: BTreeSet<&str> = reports
        .iter()
        .flat_map(|r| {
            r.per_group
                .iter()
                .map(|g| g.group.as_str())
                .chain(r.excluded.iter().map(|e| e.group.as_str()))
        })
        .collect();
    let mut header = vec!["model_id".to_string()];
    header.extend(groups.iter().map(|g| g.to_string()));
    header.push("average".into());
    let rows = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.model_id.clone()];
            row.extend(groups.iter().map(|g| opt(r.get(g).map(|x| x.safety))));
            row.push(opt(r.average_safety));
            row
        })
        .collect();
    Table { header, rows }.render(format)
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    model_id: &'a str,
    label: &'a str,
    count: usize,
    mean: f64,
    std: Option<f64>,
}

/// Mean and standard deviation of log-perplexity per label, one row per model.
pub fn summary_table(summaries: &[LogPplSummary], format: Format) -> String {
    let labelled = |s: &LogPplSummary| [("benign", s.benign), ("harmful", s.harmful)];
    match format {
        Format::Ndjson => {
            let rows: Vec<SummaryRow> = summaries
                .iter()
                .flat_map(|s| {
                    labelled(s).into_iter().filter_map(move |(label, st)| {
                        st.map(|st| SummaryRow {
                            model_id: &s.model_id,
                            label,
                            count: st.count,
                            mean: st.mean,
                            std: st.std,
                        })
                    })
                })
                .collect();
            to_ndjson(&rows)
        }
        Format::Markdown => {
            let cell = |st: Option<LabelStats>| st.map(|s| s.to_string()).unwrap_or_else(|| NA.into());
            Table {
                header: vec!["model_id".into(), "benign".into(), "harmful".into()],
                rows: summaries
                    .iter()
                    .map(|s| vec![s.model_id.clone(), cell(s.benign), cell(s.harmful)])
                    .collect(),
            }
            .render(format)
        }
        Format::Csv => Table {
            header: ["model_id", "benign_mean", "benign_std", "harmful_mean", "harmful_std"]
                .map(String::from)
                .to_vec(),
            rows: summaries
                .iter()
                .map(|s| {
                    vec![
                        s.model_id.clone(),
                        opt(s.benign.map(|b| b.mean)),
                        opt(s.benign.and_then(|b| b.std)),
                        opt(s.harmful.map(|h| h.mean)),
                        opt(s.harmful.and_then(|h| h.std)),
                    ]
                })
                .collect(),
        }
        .render(format),
    }
}

#[derive(Serialize)]
struct MatrixRow<'a> {
    row: &'a str,
    column: &'a str,
    pcc: Option<f64>,
    note: Option<String>,
}

fn cell_note(cell: &Cell) -> Option<String> {
    match cell {
        Cell::Value(_) => None,
        Cell::TooFewShared(n) => Some(format!("{n} shared models")),
        Cell::ZeroVariance => Some("zero variance".into()),
    }
}

fn cell_value(cell: &Cell) -> Option<f64> {
    match cell {
        Cell::Value(v) => Some(*v),
        _ => None,
    }
}

/// Labelled correlation matrix. Unavailable cells print as `n/a (<reason>)`.
pub fn matrix_table(matrix: &CorrelationMatrix, format: Format) -> String {
    if format == Format::Ndjson {
        let mut rows = Vec::new();
        for (i, r) in matrix.labels.iter().enumerate() {
            for (j, c) in matrix.labels.iter().enumerate() {
                let cell = &matrix.cells[i][j];
                rows.push(MatrixRow { row: r, column: c, pcc: cell_value(cell), note: cell_note(cell) });
            }
        }
        return to_ndjson(&rows);
    }
    let mut header = vec!["metric".to_string()];
    header.extend(matrix.labels.iter().cloned());
    let rows = matrix
        .labels
        .iter()
        .zip(&matrix.cells)
        .map(|(label, cells)| {
            let mut row = vec![label.clone()];
            row.extend(cells.iter().map(|c| match c {
                Cell::Value(v) => num(*v),
                other => format!("{NA} ({})", cell_note(other).unwrap_or_default()),
            }));
            row
        })
        .collect();
    Table { header, rows }.render(format)
}

#[derive(Serialize)]
struct ArchRow<'a> {
    family: &'a str,
    heads: f64,
    layers: f64,
    hidden_dim: f64,
}

/// One row per model family: correlation of average safety with the number
/// of heads, the number of layers and the hidden dimension.
pub fn arch_table(rows: &[(String, ArchCorrelation)], format: Format) -> String {
    if format == Format::Ndjson {
        let rows: Vec<ArchRow> = rows
            .iter()
            .map(|(f, c)| ArchRow { family: f, heads: c.heads, layers: c.layers, hidden_dim: c.hidden })
            .collect();
        return to_ndjson(&rows);
    }
    Table {
        header: ["family", "heads", "layers", "hidden_dim"].map(String::from).to_vec(),
        rows: rows
            .iter()
            .map(|(f, c)| vec![f.clone(), num(c.heads), num(c.layers), num(c.hidden)])
            .collect(),
    }
    .render(format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rankstat::SafetyResult;

    #[test]
    fn formats_parse() {
        assert_eq!("csv".parse::<Format>(), Ok(Format::Csv));
        assert_eq!("md".parse::<Format>(), Ok(Format::Markdown));
        assert!("xml".parse::<Format>().is_err());
    }

    #[test]
    fn missing_group_prints_na() {
        let a = SafetyReport::from_results(
            "a",
            vec![SafetyResult { group: "x".into(), u: 1.0, n: 1, m: 1, safety: 1.0 }],
            vec![],
        );
        let b = SafetyReport::from_results(
            "b",
            vec![SafetyResult { group: "y".into(), u: 0.0, n: 1, m: 2, safety: 0.0 }],
            vec![],
        );
        let csv = safety_table(&[a, b], Format::Csv);
        assert_eq!(
            csv,
            "# schema: v1\nmodel_id,x,y,average\na,1.0000,n/a,1.0000\nb,n/a,0.0000,0.0000\n"
        );
    }
}
