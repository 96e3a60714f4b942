use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use micod_core::env::{global_dim, run_episode, BatchPolicy};
use micod_core::policy::{FixedDelayPolicy, MatchingPolicy, Solver};
use micod_core::scenario::classify;
use micod_core::{Dataset, RewardMode};
use micod_d2sn::{checkpoint, D2sn};
use micod_trainer::D2snPolicy;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::results::{aggregate, write_aggregate, write_results, ResultRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyId {
    Greedy,
    Km,
    Gs,
    FixedDelay(usize),
    D2sn,
    /// The network with holding disabled.
    D2snNoHold,
}

impl PolicyId {
    pub fn is_learned(self) -> bool {
        matches!(self, PolicyId::D2sn | PolicyId::D2snNoHold)
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyId::Greedy => f.write_str("greedy"),
            PolicyId::Km => f.write_str("km"),
            PolicyId::Gs => f.write_str("gs"),
            PolicyId::FixedDelay(k) => write!(f, "fixed_delay({k})"),
            PolicyId::D2sn => f.write_str("d2sn"),
            PolicyId::D2snNoHold => f.write_str("d2sn_h-"),
        }
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let id = match t {
            "greedy" => PolicyId::Greedy,
            "km" => PolicyId::Km,
            "gs" => PolicyId::Gs,
            "d2sn" => PolicyId::D2sn,
            "d2sn_h-" | "d2sn_h\u{2212}" => PolicyId::D2snNoHold,
            _ => {
                let k = t
                    .strip_prefix("fixed_delay(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| t.strip_prefix("fixed_delay:"))
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k > 0)
                    .ok_or_else(|| Error::Usage(format!("unknown policy `{s}`")))?;
                PolicyId::FixedDelay(k)
            }
        };
        Ok(id)
    }
}

/// How a learned policy turns its distribution into actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    pub policies: Vec<PolicyId>,
    pub datasets: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    /// Overrides the reward mode stored in each dataset.
    pub mode: Option<RewardMode>,
    pub checkpoint: Option<PathBuf>,
    pub allow_unclassified: bool,
    pub decode: Decode,
    pub threads: usize,
}

impl EvalPlan {
    pub fn new(policies: Vec<PolicyId>, datasets: Vec<PathBuf>) -> Self {
        Self {
            policies,
            datasets,
            seeds: (0..30).collect(),
            mode: None,
            checkpoint: None,
            allow_unclassified: false,
            decode: Decode::Sample,
            threads: 1,
        }
    }
}

/// A dataset with its taxonomy labels.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub name: String,
    pub level: String,
    pub capacity_bin: String,
    pub data: Dataset,
}

pub const UNCLASSIFIED: &str = "unclassified";

pub fn label(name: String, data: Dataset, allow_unclassified: bool) -> Result<LabeledDataset> {
    let (level, capacity_bin) = match classify(&data) {
        Ok((l, b)) => (l.to_string(), b.to_string()),
        Err(_) if allow_unclassified => (UNCLASSIFIED.to_string(), UNCLASSIFIED.to_string()),
        Err(e) => return Err(Error::Data(format!("{name}: {e}"))),
    };
    Ok(LabeledDataset { name, level, capacity_bin, data })
}

fn load_datasets(plan: &EvalPlan) -> Result<Vec<LabeledDataset>> {
    plan.datasets
        .iter()
        .map(|p| {
            let data = micod_core::scenario::load(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            label(name, data, plan.allow_unclassified)
        })
        .collect()
}

pub fn load_network(path: &Path) -> Result<D2sn> {
    checkpoint::load(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Per-run rows plus the wall-clock seconds of each run, in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub rows: Vec<ResultRow>,
    pub wallclock: Vec<f64>,
}

fn make_policy(id: PolicyId, net: Option<&Arc<D2sn>>, seed: u64, decode: Decode) -> Result<Box<dyn BatchPolicy>> {
    Ok(match id {
        PolicyId::Greedy => Box::new(MatchingPolicy::new(Solver::Greedy)),
        PolicyId::Km => Box::new(MatchingPolicy::new(Solver::Km)),
        PolicyId::Gs => Box::new(MatchingPolicy::new(Solver::Gs)),
        PolicyId::FixedDelay(k) => Box::new(FixedDelayPolicy::new(k)?),
        PolicyId::D2sn | PolicyId::D2snNoHold => {
            let net = net.ok_or_else(|| Error::Usage("learned policy requires --checkpoint".into()))?;
            Box::new(D2snPolicy::new(net.clone(), seed, decode == Decode::Greedy, id == PolicyId::D2snNoHold))
        }
    })
}

/// Runs one episode and turns its metrics into a row.
pub fn run_one(
    id: PolicyId,
    ds: &LabeledDataset,
    seed: u64,
    mode: RewardMode,
    net: Option<&Arc<D2sn>>,
    decode: Decode,
) -> Result<ResultRow> {
    let mut policy = make_policy(id, net, seed, decode)?;
    let out = run_episode(&ds.data, mode, seed, policy.as_mut())?;
    let m = out.metrics;
    Ok(ResultRow {
        policy: id.to_string(),
        dataset: ds.name.clone(),
        level: ds.level.clone(),
        capacity_bin: ds.capacity_bin.clone(),
        mode: mode.to_string(),
        seed,
        cr: m.cr,
        apd: m.apd,
        tdi: m.tdi,
        hold_apd: m.hold_apd,
        hold_o: m.hold_o,
        hold_tdi: m.hold_tdi,
        hold_d: m.hold_d,
        order_sr: m.order_sr,
        driver_sr: m.driver_sr,
        episode_return: out.episode_return,
    })
}

/// Evaluates every (policy, dataset, seed) triple. Inputs are checked and
/// the checkpoint is loaded before any episode runs.
pub fn run(plan: &EvalPlan) -> Result<EvalOutput> {
    if plan.policies.is_empty() {
        return Err(Error::Usage("no policies to evaluate".into()));
    }
    if plan.seeds.is_empty() {
        return Err(Error::Usage("no seeds".into()));
    }
    if plan.datasets.is_empty() {
        return Err(Error::Usage("no datasets".into()));
    }
    let net = if plan.policies.iter().any(|p| p.is_learned()) {
        let path = plan.checkpoint.as_ref().ok_or_else(|| Error::Usage("learned policy requires --checkpoint".into()))?;
        if !path.exists() {
            return Err(Error::Data(format!("checkpoint {} does not exist", path.display())));
        }
        Some(Arc::new(load_network(path)?))
    } else {
        None
    };
    let datasets = load_datasets(plan)?;
    if let Some(net) = &net {
        for ds in &datasets {
            let want = global_dim(&ds.data.config);
            if net.config().global_dim != want {
                return Err(Error::Data(format!(
                    "{}: grid needs a global width of {want}, checkpoint has {}",
                    ds.name,
                    net.config().global_dim
                )));
            }
        }
    }
    evaluate(&plan.policies, &datasets, &plan.seeds, plan.mode, net.as_ref(), plan.decode, plan.threads)
}

/// Fans the runs out over `threads` workers; output order is fixed.
pub fn evaluate(
    policies: &[PolicyId],
    datasets: &[LabeledDataset],
    seeds: &[u64],
    mode: Option<RewardMode>,
    net: Option<&Arc<D2sn>>,
    decode: Decode,
    threads: usize,
) -> Result<EvalOutput> {
    let mut jobs = Vec::with_capacity(policies.len() * datasets.len() * seeds.len());
    for &p in policies {
        for ds in datasets {
            for &s in seeds {
                jobs.push((p, ds, s));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Runtime(format!("thread pool: {e}")))?;
    let results: Vec<(ResultRow, f64)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, ds, s)| {
                let started = Instant::now();
                let row = run_one(p, ds, s, mode.unwrap_or(ds.data.config.reward_mode), net, decode)?;
                Ok((row, started.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()
    })?;
    let (rows, wallclock) = results.into_iter().unzip();
    Ok(EvalOutput { rows, wallclock })
}

pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const TIMING_FILE: &str = "timing.csv";

/// Writes per-run rows, the per-cell aggregate and a wall-clock sidecar.
/// Only the sidecar varies between identical runs.
pub fn write_outputs(dir: &Path, out: &EvalOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_results(&dir.join(RESULTS_FILE), &out.rows)?;
    write_aggregate(&dir.join(AGGREGATE_FILE), &aggregate(&out.rows))?;
    let mut w = csv::Writer::from_path(dir.join(TIMING_FILE))?;
    w.write_record(["policy", "dataset", "seed", "wallclock"])?;
    for (r, t) in out.rows.iter().zip(&out.wallclock) {
        w.write_record([r.policy.clone(), r.dataset.clone(), r.seed.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
