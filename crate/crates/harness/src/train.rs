use std::path::PathBuf;

use micod_core::env::{global_dim, N_PAIR_FEATURES};
use micod_d2sn::{checkpoint, D2sn, D2snConfig};
use micod_trainer::train::MODEL_FILE;
use micod_trainer::{CurveRecord, Trainer, UpdateDiagnostics};

use crate::config::TrainFile;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub lr: Option<f64>,
    pub resume: bool,
    /// Upper bound on rollout workers.
    pub max_workers: Option<usize>,
}

pub fn progress_line(r: &CurveRecord, d: &UpdateDiagnostics, total: usize) -> String {
    let metric = r.metric.map(|m| format!("{m:.4}")).unwrap_or_else(|| "n/a".into());
    format!(
        "iter {}/{total} episodes {} reward {:.4} cr {:.4} metric {metric} ratio {:.4} clip {:.3} kl {:.5} entropy {:.4} vloss {:.4} {:.2}s",
        r.iteration, r.episodes, r.mean_reward, r.cr, d.mean_ratio, d.clip_fraction, d.approx_kl, d.entropy, d.value_loss, r.wallclock
    )
}

/// Trains from a config file, snapshotting into `args.out`; the final
/// network is always saved there as `model.ckpt`.
pub fn run(args: &TrainArgs, mut progress: impl FnMut(&str)) -> Result<Vec<CurveRecord>> {
    let mut file = TrainFile::read(&args.config)?;
    if let Some(s) = args.seed {
        file.train.seed = s;
    }
    if let Some(k) = args.iterations {
        file.train.iterations = k;
    }
    if let Some(lr) = args.lr {
        file.train.lr = lr;
    }
    if let Some(cap) = args.max_workers {
        file.train.workers = file.train.workers.min(cap).max(1);
    }
    file.train.validate()?;
    let datasets = file.data.load()?;
    let gdim = global_dim(&datasets[0].config);
    if datasets.iter().any(|d| global_dim(&d.config) != gdim) {
        return Err(Error::Data("training datasets use different grids".into()));
    }
    let total = file.train.iterations;
    let mut trainer = if args.resume {
        if !args.out.join(MODEL_FILE).exists() {
            return Err(Error::Data(format!("nothing to resume in {}", args.out.display())));
        }
        Trainer::resume(file.train.clone(), &datasets, &args.out)?
    } else {
        let mut cfg = D2snConfig::new(N_PAIR_FEATURES, gdim).with_width(file.d_model, file.n_heads);
        cfg.seed = file.train.seed;
        let net = D2sn::new(cfg)?;
        Trainer::new(file.train.clone(), net, &datasets)?.with_output(&args.out)?
    };
    let curve = trainer.run(|r, d| progress(&progress_line(r, d, total)))?;
    checkpoint::save(trainer.net(), args.out.join(MODEL_FILE))?;
    Ok(curve)
}
