//! Comparison and hold-analysis tables from a results file.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::results::{aggregate, read_results, write_aggregate, Aggregate, Stat};

pub const REPORT_FILE: &str = "report.md";
pub const REPORT_AGGREGATE_FILE: &str = "report_aggregate.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub aggregates: Vec<Aggregate>,
    pub text: String,
}

fn cell(s: Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
        None => "n/a".to_string(),
    }
}

/// Per (mode, cell): task metric above CR for every policy, then the hold
/// ratios.
pub fn render(aggs: &[Aggregate]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < aggs.len() {
        let key = (&aggs[i].mode, &aggs[i].level, &aggs[i].capacity_bin);
        let mut j = i;
        while j < aggs.len() && (&aggs[j].mode, &aggs[j].level, &aggs[j].capacity_bin) == key {
            j += 1;
        }
        let group = &aggs[i..j];
        let apd_task = key.0 == "APD";
        let _ = writeln!(out, "## {} task, level {}, capacity {}\n", key.0, key.1, key.2);
        let _ = writeln!(out, "| policy | runs | metric | mean ± std |");
        let _ = writeln!(out, "|---|---|---|---|");
        for a in group {
            let (name, metric) = if apd_task { ("APD", a.apd) } else { ("TDI", Some(a.tdi)) };
            let _ = writeln!(out, "| {} | {} | {name} | {} |", a.policy, a.runs, cell(metric));
            let _ = writeln!(out, "| | | CR | {} |", cell(Some(a.cr)));
        }
        let _ = writeln!(out, "\nHold analysis\n");
        let _ = writeln!(out, "| policy | Hold-APD | Hold-O | Hold-TDI | Hold-D |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for a in group {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                a.policy,
                cell(a.hold_apd),
                cell(Some(a.hold_o)),
                cell(a.hold_tdi),
                cell(Some(a.hold_d))
            );
        }
        out.push('\n');
        i = j;
    }
    out
}

/// Reads `input` and, if `out` is given, writes `report.md` and
/// `report_aggregate.csv` there. An input without rows gives an empty report.
pub fn run(input: &Path, out: Option<&Path>) -> Result<Report> {
    let rows = read_results(input)?;
    let aggregates = aggregate(&rows);
    let text = render(&aggregates);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(REPORT_FILE), &text)?;
        write_aggregate(&dir.join(REPORT_AGGREGATE_FILE), &aggregates)?;
    }
    Ok(Report { aggregates, text })
}
