//! Line-oriented `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every error names
//! the file and line it came from.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use micod_core::scenario::delayed_dispatch_scenario;
use micod_core::{Dataset, RewardMode};
use micod_trainer::{CriticTarget, TrainConfig};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_kv(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            return Err(Error::Usage(format!("{origin}:{line}: expected `key = value`")));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Usage(format!("{origin}:{line}: empty key")));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::Usage(format!("{origin}:{line}: `{key}` already set on line {}", prev.line)));
        }
        out.push(Entry { key, value: v.trim().to_string(), line });
    }
    Ok(out)
}

/// Where training episodes come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Files(Vec<PathBuf>),
    /// The built-in delayed-dispatch scenario with this many clusters.
    Crafted(usize),
}

impl DataSource {
    pub fn load(&self) -> Result<Vec<Dataset>> {
        match self {
            DataSource::Crafted(n) => Ok(vec![delayed_dispatch_scenario(*n)]),
            DataSource::Files(paths) => paths
                .iter()
                .map(|p| {
                    micod_core::scenario::load(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
                })
                .collect(),
        }
    }
}

/// Everything a `train` run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainFile {
    pub train: TrainConfig,
    pub d_model: usize,
    pub n_heads: usize,
    pub data: DataSource,
}

fn value<T: FromStr>(origin: &str, e: &Entry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| Error::Usage(format!("{origin}:{}: invalid value `{}` for `{}`", e.line, e.value, e.key)))
}

/// Dataset files listed in a config are relative to the config's directory.
fn resolve(base: &Path, list: &str) -> Vec<PathBuf> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| base.join(s)).collect()
}

/// `*.jsonl` files of a directory in name order.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

impl TrainFile {
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let mut t = TrainConfig::default();
        let (mut d_model, mut n_heads) = (32, 2);
        let mut data = None;
        for e in parse_kv(text, origin)? {
            let at = |m: &str| Error::Usage(format!("{origin}:{}: {m}", e.line));
            match e.key.as_str() {
                "gamma" => t.gamma = value(origin, &e)?,
                "lambda" => t.lambda = value(origin, &e)?,
                "clip_eps" => t.clip_eps = value(origin, &e)?,
                "lr" => t.lr = value(origin, &e)?,
                "critic_lr" => t.critic_lr = Some(value(origin, &e)?),
                "epochs" => t.epochs = value(origin, &e)?,
                "minibatch_size" => t.minibatch_size = value(origin, &e)?,
                "iterations" => t.iterations = value(origin, &e)?,
                "episodes_per_iteration" => t.episodes_per_iteration = value(origin, &e)?,
                "entropy_coef" => t.entropy_coef = value(origin, &e)?,
                "max_grad_norm" => {
                    t.max_grad_norm = if e.value == "none" { None } else { Some(value(origin, &e)?) }
                }
                "normalize_advantages" => t.normalize_advantages = value(origin, &e)?,
                "critic_target" => {
                    t.critic_target = match e.value.as_str() {
                        "current" => CriticTarget::Current,
                        "next" => CriticTarget::Next,
                        _ => return Err(at("critic_target must be `current` or `next`")),
                    }
                }
                "reward_mode" => t.reward_mode = RewardMode::from_str(&e.value).map_err(|x| at(&x.to_string()))?,
                "exhaustive" => t.exhaustive = value(origin, &e)?,
                "forced_hold_in_ratio" => t.forced_hold_in_ratio = value(origin, &e)?,
                "seed" => t.seed = value(origin, &e)?,
                "workers" => t.workers = value(origin, &e)?,
                "d_model" => d_model = value(origin, &e)?,
                "n_heads" => n_heads = value(origin, &e)?,
                "datasets" | "dataset_dir" | "crafted_clusters" if data.is_some() => {
                    return Err(at("only one of datasets, dataset_dir and crafted_clusters may be given"))
                }
                "datasets" => data = Some(DataSource::Files(resolve(base, &e.value))),
                "dataset_dir" => data = Some(DataSource::Files(dataset_files(&base.join(&e.value))?)),
                "crafted_clusters" => data = Some(DataSource::Crafted(value(origin, &e)?)),
                other => return Err(at(&format!("unknown key `{other}`"))),
            }
        }
        let data = data.ok_or_else(|| Error::Usage(format!("{origin}: no training data (datasets, dataset_dir or crafted_clusters)")))?;
        if matches!(&data, DataSource::Files(f) if f.is_empty()) {
            return Err(Error::Usage(format!("{origin}: training data list is empty")));
        }
        t.validate()?;
        Ok(Self { train: t, d_model, n_heads, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }
}
