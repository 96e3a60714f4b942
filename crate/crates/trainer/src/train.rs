//! The training loop: collect, estimate advantages, update, snapshot.
//!
//! With an output directory, every iteration rewrites `model.ckpt`,
//! `adam.bin` and `state.json` and appends a row to `curve.csv`, so an
//! interrupted run resumes from the last finished iteration.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use micod_core::{Dataset, RewardMode};
use micod_d2sn::checkpoint;
use micod_d2sn::{D2sn, D2snConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::ppo::{build_samples, ppo_update, Adam, UpdateDiagnostics};
use crate::rollout::{collect_rollouts, derive_seed, Trajectory};

pub const MODEL_FILE: &str = "model.ckpt";
pub const OPTIMIZER_FILE: &str = "adam.bin";
pub const STATE_FILE: &str = "state.json";
pub const CURVE_FILE: &str = "curve.csv";

/// One learning-curve row. `metric` is mean TDI or mean APD, per reward mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub iteration: usize,
    pub episodes: usize,
    pub mean_reward: f64,
    pub cr: f64,
    pub metric: Option<f64>,
    pub wallclock: f64,
}

#[derive(Serialize, Deserialize)]
struct RunState {
    iteration: usize,
    episodes: usize,
    train: TrainConfig,
    net: D2snConfig,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    net: D2sn,
    adam: Adam,
    datasets: &'a [Dataset],
    iteration: usize,
    episodes: usize,
    out_dir: Option<PathBuf>,
    pool: rayon::ThreadPool,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, net: D2sn, datasets: &'a [Dataset]) -> Result<Self> {
        cfg.validate()?;
        if datasets.is_empty() {
            return Err(Error::Config("no training datasets".into()));
        }
        let adam = Adam::split(net.params(), cfg.lr, cfg.critic_lr());
        let pool = pool(cfg.workers)?;
        Ok(Self { cfg, net, adam, datasets, iteration: 0, episodes: 0, out_dir: None, pool })
    }

    /// Snapshots each iteration into `dir` (created if missing).
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        self.out_dir = Some(dir);
        Ok(self)
    }

    /// Continues a run saved in `dir`. Only the iteration budget and the
    /// worker count may differ from the saved configuration.
    pub fn resume(cfg: TrainConfig, datasets: &'a [Dataset], dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let state: RunState = serde_json::from_slice(&fs::read(dir.join(STATE_FILE))?)?;
        let mut saved = state.train.clone();
        saved.iterations = cfg.iterations;
        saved.workers = cfg.workers;
        if saved != cfg {
            return Err(Error::Resume("training configuration differs from the saved run".into()));
        }
        let net = checkpoint::load(dir.join(MODEL_FILE))?;
        if net.config() != &state.net {
            return Err(Error::Resume("checkpoint does not match the saved network configuration".into()));
        }
        let adam = Adam::load(dir.join(OPTIMIZER_FILE), net.params())?;
        let mut t = Trainer::new(cfg, net, datasets)?;
        t.adam = adam;
        t.iteration = state.iteration;
        t.episodes = state.episodes;
        t.out_dir = Some(dir);
        t.trim_curve()?;
        Ok(t)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net(&self) -> &D2sn {
        &self.net
    }

    pub fn into_net(self) -> D2sn {
        self.net
    }

    /// Rows of `curve.csv` past the saved iteration come from an iteration
    /// that did not finish; drop them.
    fn trim_curve(&self) -> Result<()> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        let path = dir.join(CURVE_FILE);
        if !path.exists() {
            return Ok(());
        }
        let rows = read_curve(&path)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows.into_iter().filter(|r| r.iteration <= self.iteration) {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(&path, &bytes)
    }

    fn jobs(&self, iteration: usize) -> Vec<(&'a Dataset, u64)> {
        let e = self.cfg.episodes_per_iteration;
        (0..e)
            .map(|i| {
                let j = (iteration - 1) * e + i;
                (&self.datasets[j % self.datasets.len()], derive_seed(self.cfg.seed, j as u64))
            })
            .collect()
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<(CurveRecord, UpdateDiagnostics, Vec<Trajectory>)> {
        let started = Instant::now();
        let k = self.iteration + 1;
        let jobs = self.jobs(k);
        let (cfg, net) = (&self.cfg, &mut self.net);
        let adam = &mut self.adam;
        let (trajectories, diag) = self.pool.install(|| -> Result<_> {
            let trajectories = collect_rollouts(net, &jobs, cfg.reward_mode, cfg.exhaustive)?;
            let samples = build_samples(&trajectories, cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x7570_6461_7465, k as u64));
            let diag = ppo_update(net, adam, &samples, cfg, &mut rng)?;
            Ok((trajectories, diag))
        })?;
        self.iteration = k;
        self.episodes += trajectories.len();
        let n = trajectories.len() as f64;
        let metric_values: Vec<f64> = trajectories
            .iter()
            .filter_map(|t| match self.cfg.reward_mode {
                RewardMode::Tdi => Some(t.metrics.tdi),
                RewardMode::Apd => t.metrics.apd,
            })
            .collect();
        let record = CurveRecord {
            iteration: k,
            episodes: self.episodes,
            mean_reward: trajectories.iter().map(|t| t.episode_return).sum::<f64>() / n,
            cr: trajectories.iter().map(|t| t.metrics.cr).sum::<f64>() / n,
            metric: (!metric_values.is_empty()).then(|| metric_values.iter().sum::<f64>() / metric_values.len() as f64),
            wallclock: started.elapsed().as_secs_f64(),
        };
        self.snapshot(&record)?;
        Ok((record, diag, trajectories))
    }

    fn snapshot(&self, record: &CurveRecord) -> Result<()> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        let mut model = Vec::new();
        checkpoint::write_checkpoint(&self.net, &mut model)?;
        write_atomic(&dir.join(MODEL_FILE), &model)?;
        let adam_tmp = dir.join("adam.tmp");
        self.adam.save(&adam_tmp)?;
        fs::rename(&adam_tmp, dir.join(OPTIMIZER_FILE))?;

        let path = dir.join(CURVE_FILE);
        let fresh = !path.exists();
        let file = fs::OpenOptions::new().create(true).append(true).open(&path)?;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        w.serialize(record)?;
        w.flush()?;

        let state = RunState {
            iteration: self.iteration,
            episodes: self.episodes,
            train: self.cfg.clone(),
            net: self.net.config().clone(),
        };
        write_atomic(&dir.join(STATE_FILE), &serde_json::to_vec_pretty(&state)?)
    }

    /// Iterates until the configured budget, reporting after each iteration.
    pub fn run(&mut self, mut progress: impl FnMut(&CurveRecord, &UpdateDiagnostics)) -> Result<Vec<CurveRecord>> {
        let mut curve = Vec::new();
        while self.iteration < self.cfg.iterations {
            let (record, diag, _) = self.step()?;
            progress(&record, &diag);
            curve.push(record);
        }
        Ok(curve)
    }
}

pub fn read_curve(path: impl AsRef<Path>) -> Result<Vec<CurveRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
