//! Per-run result rows, their CSV schema and per-cell aggregates.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One (policy, dataset, seed) episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub dataset: String,
    pub level: String,
    pub capacity_bin: String,
    pub mode: String,
    pub seed: u64,
    pub cr: f64,
    pub apd: Option<f64>,
    pub tdi: f64,
    pub hold_apd: Option<f64>,
    pub hold_o: f64,
    pub hold_tdi: Option<f64>,
    pub hold_d: f64,
    pub order_sr: f64,
    pub driver_sr: f64,
    pub episode_return: f64,
}

pub const RESULT_COLUMNS: [&str; 16] = [
    "policy",
    "dataset",
    "level",
    "capacity_bin",
    "mode",
    "seed",
    "cr",
    "apd",
    "tdi",
    "hold_apd",
    "hold_o",
    "hold_tdi",
    "hold_d",
    "order_sr",
    "driver_sr",
    "episode_return",
];

impl ResultRow {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let unit = [("cr", self.cr), ("order_sr", self.order_sr), ("driver_sr", self.driver_sr)];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.apd.is_some_and(|a| !(a >= 0.0)) {
            return Err(format!("apd = {:?} is negative", self.apd));
        }
        Ok(())
    }
}

/// Mean and sample standard deviation; the deviation of fewer than two
/// values is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Runs that reported the metric.
    pub n: usize,
}

impl Stat {
    fn of(values: impl Iterator<Item = Option<f64>>) -> Option<Stat> {
        let xs: Vec<f64> = values.flatten().collect();
        if xs.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(&xs);
        Some(Stat { mean, std, n: xs.len() })
    }
}

/// Statistics of one policy in one taxonomy cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub policy: String,
    pub level: String,
    pub capacity_bin: String,
    pub mode: String,
    pub runs: usize,
    pub cr: Stat,
    pub apd: Option<Stat>,
    pub tdi: Stat,
    pub hold_apd: Option<Stat>,
    pub hold_o: Stat,
    pub hold_tdi: Option<Stat>,
    pub hold_d: Stat,
    pub order_sr: Stat,
    pub driver_sr: Stat,
}

pub const AGGREGATE_METRICS: [&str; 9] =
    ["cr", "apd", "tdi", "hold_apd", "hold_o", "hold_tdi", "hold_d", "order_sr", "driver_sr"];

impl Aggregate {
    pub fn stats(&self) -> [Option<Stat>; 9] {
        [
            Some(self.cr),
            self.apd,
            Some(self.tdi),
            self.hold_apd,
            Some(self.hold_o),
            self.hold_tdi,
            Some(self.hold_d),
            Some(self.order_sr),
            Some(self.driver_sr),
        ]
    }
}

/// Groups by (mode, level, capacity bin, policy); cells come out sorted,
/// policies within a cell in order of first appearance.
pub fn aggregate(rows: &[ResultRow]) -> Vec<Aggregate> {
    let mut policy_rank: Vec<&str> = Vec::new();
    for r in rows {
        if !policy_rank.contains(&r.policy.as_str()) {
            policy_rank.push(&r.policy);
        }
    }
    let mut groups: BTreeMap<(&str, &str, &str, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let rank = policy_rank.iter().position(|p| *p == r.policy).unwrap_or(0);
        groups.entry((&r.mode, &r.level, &r.capacity_bin, rank)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let some = |f: fn(&ResultRow) -> f64| Stat::of(g.iter().map(|r| Some(f(r)))).expect("group is nonempty");
            let opt = |f: fn(&ResultRow) -> Option<f64>| Stat::of(g.iter().map(|r| f(r)));
            Aggregate {
                policy: g[0].policy.clone(),
                level: g[0].level.clone(),
                capacity_bin: g[0].capacity_bin.clone(),
                mode: g[0].mode.clone(),
                runs: g.len(),
                cr: some(|r| r.cr),
                apd: opt(|r| r.apd),
                tdi: some(|r| r.tdi),
                hold_apd: opt(|r| r.hold_apd),
                hold_o: some(|r| r.hold_o),
                hold_tdi: opt(|r| r.hold_tdi),
                hold_d: some(|r| r.hold_d),
                order_sr: some(|r| r.order_sr),
                driver_sr: some(|r| r.driver_sr),
            }
        })
        .collect()
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a results file, checking the header against the expected schema.
/// A zero-length file holds no rows.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers()?.clone();
    for (i, want) in RESULT_COLUMNS.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(Error::Data(format!("column {}: expected `{want}`, found `{got}`", i + 1)))
            }
            None => return Err(Error::Data(format!("missing column `{want}`"))),
        }
    }
    if header.len() > RESULT_COLUMNS.len() {
        return Err(Error::Data(format!("unexpected column `{}`", &header[RESULT_COLUMNS.len()])));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<ResultRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::Data(format!("{}:{line}: {e}", path.display())))?;
        row.validate().map_err(|m| Error::Data(format!("{}:{line}: {m}", path.display())))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn aggregate_header() -> Vec<String> {
    let mut h: Vec<String> = ["policy", "level", "capacity_bin", "mode", "runs"].map(String::from).to_vec();
    for m in AGGREGATE_METRICS {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    h
}

pub fn write_aggregate(path: &Path, aggs: &[Aggregate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(aggregate_header())?;
    for a in aggs {
        let mut rec = vec![a.policy.clone(), a.level.clone(), a.capacity_bin.clone(), a.mode.clone(), a.runs.to_string()];
        for s in a.stats() {
            match s {
                Some(s) => {
                    rec.push(s.mean.to_string());
                    rec.push(s.std.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_deviation() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
