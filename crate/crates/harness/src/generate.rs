use std::fs;
use std::path::{Path, PathBuf};

use micod_core::scenario::{classify, generate, save, ScenarioSpec};
use micod_core::{CapacityBin, Level, RewardMode};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateArgs {
    pub level: Level,
    pub bin: CapacityBin,
    pub count: usize,
    pub scale: f64,
    pub seed: u64,
    pub mode: RewardMode,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub file: String,
    pub level: Level,
    pub capacity_bin: CapacityBin,
    pub seed: u64,
    pub scale: f64,
    pub drivers: usize,
    pub orders: usize,
    pub ratio: f64,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn file_name(level: Level, bin: CapacityBin, seed: u64) -> String {
    let bin = bin.to_string();
    format!("{}_b{}_s{seed}.jsonl", level.to_string().to_lowercase(), bin.trim_start_matches("<="))
}

/// Writes `count` datasets (seeds `seed`, `seed + 1`, ...) and a manifest.
/// Every file is classified back before it is written.
pub fn run(args: &GenerateArgs) -> Result<Vec<ManifestRow>> {
    if !(args.scale > 0.0 && args.scale <= 1.0) {
        return Err(Error::Usage(format!("--scale must be in (0, 1], got {}", args.scale)));
    }
    if args.count == 0 {
        return Err(Error::Usage("--count must be positive".into()));
    }
    fs::create_dir_all(&args.out)?;
    let mut rows = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let seed = args.seed.wrapping_add(i as u64);
        let spec = ScenarioSpec::new(args.level, args.bin, seed, args.scale).with_reward_mode(args.mode);
        let ds = generate(&spec)?;
        let cell = classify(&ds)?;
        if cell != (args.level, args.bin) {
            return Err(Error::Runtime(format!(
                "seed {seed} produced a dataset classified as ({}, {})",
                cell.0, cell.1
            )));
        }
        let file = file_name(args.level, args.bin, seed);
        save(&ds, args.out.join(&file))?;
        rows.push(ManifestRow {
            file,
            level: args.level,
            capacity_bin: args.bin,
            seed,
            scale: args.scale,
            drivers: ds.n_drivers(),
            orders: ds.n_orders(),
            ratio: ds.ratio().unwrap_or(0.0),
        });
    }
    write_manifest(&args.out.join(MANIFEST_FILE), &rows)?;
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Merges with an existing manifest; rows for the same file are replaced.
fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut all = if path.exists() { read_manifest(path)? } else { Vec::new() };
    all.retain(|old| rows.iter().all(|r| r.file != old.file));
    all.extend(rows.iter().cloned());
    all.sort_by(|a, b| a.file.cmp(&b.file));
    let mut w = csv::Writer::from_path(path)?;
    for r in &all {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
