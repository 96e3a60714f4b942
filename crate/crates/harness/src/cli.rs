use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use micod_core::{CapacityBin, Level, RewardMode};

use crate::config::{dataset_files, parse_kv};
use crate::error::{Error, Result};
use crate::eval::{Decode, EvalPlan, PolicyId};
use crate::{eval, generate, report, train};

pub const THREADS_ENV: &str = "MICOD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "micod", version, about = "Batch order-dispatch laboratory", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Tdi,
    Apd,
}

impl From<ModeArg> for RewardMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Tdi => RewardMode::Tdi,
            ModeArg::Apd => RewardMode::Apd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DecodeArg {
    Sample,
    Greedy,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic datasets for one taxonomy cell.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        level: Level,
        /// Capacity bin: 400, 550 or 800.
        #[arg(long)]
        bin: CapacityBin,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Tdi)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the network from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Continue the run saved in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate policies over datasets and seeds.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// greedy, km, gs, fixed_delay(k), d2sn, d2sn_h-
        #[arg(long = "policy", value_delimiter = ',', required = true)]
        policies: Vec<String>,
        /// Dataset files or directories of `*.jsonl` files.
        #[arg(long = "data", value_delimiter = ',', required = true)]
        data: Vec<PathBuf>,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 30)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = DecodeArg::Sample)]
        decode: DecodeArg,
        #[arg(long)]
        allow_unclassified: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render comparison and hold tables from a results CSV.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `MICOD_THREADS`, if set, as a positive worker cap.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Turns `key = value` lines into `--key value` arguments for `sub`,
/// rejecting keys the subcommand does not know.
fn config_args(sub: &str, path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    let origin = path.display().to_string();
    let cmd = Cli::command();
    let sc = cmd.find_subcommand(sub).expect("known subcommand");
    let mut out = Vec::new();
    for e in parse_kv(&text, &origin)? {
        let long = e.key.replace('_', "-");
        let arg = sc.get_arguments().find(|a| a.get_long() == Some(long.as_str()) && long != "config");
        let Some(arg) = arg else {
            return Err(Error::Usage(format!("{origin}:{}: unknown key `{}` for {sub}", e.line, e.key)));
        };
        let takes_value = arg.get_action().takes_values();
        if takes_value {
            out.push(format!("--{long}").into());
            out.push(e.value.into());
        } else {
            match e.value.as_str() {
                "true" => out.push(format!("--{long}").into()),
                "false" => {}
                _ => return Err(Error::Usage(format!("{origin}:{}: `{}` must be true or false", e.line, e.key))),
            }
        }
    }
    Ok(out)
}

/// Splices config-file arguments in right after the subcommand so that
/// explicit flags, which come later, override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let sub_pos = 1;
    if !matches!(args.get(sub_pos).and_then(|a| a.to_str()), Some("generate" | "eval" | "report")) {
        return Ok(args);
    }
    let sub = args[sub_pos].to_str().expect("matched").to_string();
    let mut config = None;
    let mut i = sub_pos + 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
        } else if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        }
        i += 1;
    }
    let Some(path) = config else { return Ok(args) };
    let extra = config_args(&sub, &path)?;
    let mut out = args[..=sub_pos].to_vec();
    out.extend(extra);
    out.extend(args[sub_pos + 1..].iter().cloned());
    Ok(out)
}

fn expand_data(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            out.extend(dataset_files(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let cap = thread_cap()?;
    match cli.command {
        Command::Generate { level, bin, count, scale, seed, mode, out, .. } => {
            let args = generate::GenerateArgs { level, bin, count, scale, seed, mode: mode.into(), out };
            for r in generate::run(&args)? {
                writeln!(stdout, "{} drivers {} orders {} ratio {:.4}", r.file, r.drivers, r.orders, r.ratio)?;
            }
        }
        Command::Train { config, out, seed, iterations, lr, resume } => {
            let args = train::TrainArgs { config, out, seed, iterations, lr, resume, max_workers: cap };
            let mut failed = None;
            train::run(&args, |line| {
                if let Err(e) = writeln!(stdout, "{line}") {
                    failed.get_or_insert(e);
                }
            })?;
            if let Some(e) = failed {
                return Err(e.into());
            }
        }
        Command::Eval { policies, data, seeds, seed, mode, checkpoint, decode, allow_unclassified, out, .. } => {
            let policies = policies.iter().map(|p| p.parse()).collect::<Result<Vec<PolicyId>>>()?;
            let mut plan = EvalPlan::new(policies, expand_data(&data)?);
            plan.seeds = (seed..seed + seeds).collect();
            plan.mode = mode.map(Into::into);
            plan.checkpoint = checkpoint;
            plan.allow_unclassified = allow_unclassified;
            plan.decode = match decode {
                DecodeArg::Sample => Decode::Sample,
                DecodeArg::Greedy => Decode::Greedy,
            };
            let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
            plan.threads = cap.map_or(available, |c| c.min(available));
            let output = eval::run(&plan)?;
            eval::write_outputs(&out, &output)?;
            write!(stdout, "{}", report::render(&crate::results::aggregate(&output.rows)))?;
        }
        Command::Report { input, out, .. } => {
            let r = report::run(&input, out.as_deref())?;
            if r.aggregates.is_empty() {
                writeln!(stderr, "warning: {} contains no result rows", input.display())?;
            }
            write!(stdout, "{}", r.text)?;
        }
    }
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return 2;
            }
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
