//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::ablate::{parse_modes, parse_seeds, run_ablation};
use super::checkpoint::load_checkpoint;
use super::config::{ExperimentConfig, Precision};
use super::train::{evaluate_checkpoint, load_instructor, run_training, METRICS_FILE};
use crate::env::{BehaviorId, EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::instructor::{train_instructor, InstructorConfig};
use crate::metrics::csv_document;
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::videodata::{load_clips, make_pairs, record_clip, save_clips, split_pairs, ClipLabel};

#[derive(Debug, Parser)]
#[command(name = "skilllab", version, about = "Instruction-weighted skill discovery experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record scripted demonstration clips.
    GenVideos {
        #[arg(long)]
        env: EnvId,
        /// Comma-separated BEHAVIOR:LABEL pairs, e.g. MOVE_RIGHT:DO,MOVE_LEFT:DONT
        #[arg(long)]
        behaviors: String,
        /// Clips per behavior.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and freeze the instruction network on a clip file.
    TrainInstructor {
        #[arg(long)]
        clips: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of pairs held out for the reported accuracy.
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        #[arg(long)]
        hidden_width: Option<usize>,
    },
    /// Run skill discovery from a config file.
    TrainSkills {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute all metrics from a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a mode x seed matrix into one CSV.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        modes: String,
        #[arg(long)]
        seeds: String,
        /// Defaults to `ablation.csv` in the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `MOVE_RIGHT:DO,MOVE_LEFT:DONT` into behavior/label pairs.
pub fn parse_behaviors(list: &str) -> Result<Vec<(BehaviorId, ClipLabel)>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (b, l) = item
                .split_once(':')
                .ok_or_else(|| Error::InvalidConfig(format!("expected BEHAVIOR:LABEL, got {item:?}")))?;
            Ok((b.trim().parse()?, l.trim().parse()?))
        })
        .collect()
}

pub fn gen_videos(
    env: EnvId,
    behaviors: &[(BehaviorId, ClipLabel)],
    count: usize,
    length: usize,
    seed: u64,
    out: &Path,
) -> Result<usize> {
    let spec = EnvSpec::new(env);
    let mut clips = Vec::new();
    for (b, label) in behaviors {
        for i in 0..count {
            let clip_seed = derive_seed(seed, &format!("clip:{b}:{i}"));
            clips.push(record_clip::<f64>(&spec, *b, *label, clip_seed, length)?);
        }
    }
    save_clips(out, &clips)?;
    Ok(clips.len())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_skills<T: Scalar>(cfg: &ExperimentConfig) -> Result<()> {
    let out = run_training::<T>(cfg)?;
    match &cfg.paths.out_dir {
        Some(dir) => println!("{} rows written to {}", out.rows.len(), dir.join(METRICS_FILE).display()),
        None => print!("{}", out.csv),
    }
    Ok(())
}

fn eval<T: Scalar>(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let ck = load_checkpoint::<T>(checkpoint)?;
    let row = evaluate_checkpoint(cfg, ck, load_instructor::<T>(cfg)?)?;
    write_file(out, &csv_document(&cfg.env_spec(), &[row])?)
}

fn ablate<T: Scalar>(cfg: &ExperimentConfig, modes: &str, seeds: &str, out: Option<PathBuf>) -> Result<()> {
    let modes = parse_modes(modes)?;
    let seeds = parse_seeds(seeds)?;
    let mut check = cfg.clone();
    for &m in &modes {
        check.reward.mode = m;
        check.validate()?;
    }
    let csv = run_ablation::<T>(cfg, &modes, &seeds, load_instructor::<T>(cfg)?)?;
    match out.or_else(|| cfg.paths.out_dir.as_ref().map(|d| d.join("ablation.csv"))) {
        Some(path) => write_file(&path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenVideos {
            env,
            behaviors,
            count,
            length,
            seed,
            out,
        } => {
            let parsed = parse_behaviors(&behaviors)?;
            let n = gen_videos(env, &parsed, count, length, seed, &out)?;
            println!("{n} clips written to {}", out.display());
        }
        Command::TrainInstructor {
            clips,
            out,
            epochs,
            seed,
            holdout,
            hidden_width,
        } => {
            let clips = load_clips::<f64>(&clips)?;
            let pairs = make_pairs(&clips)?;
            let (val, train) = split_pairs(&pairs, holdout, derive_seed(seed, "split"))?;
            let mut cfg = InstructorConfig::default();
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(w) = hidden_width {
                cfg.hidden_width = w;
            }
            let net = train_instructor(&train, &cfg, seed)?;
            let (acc, loss) = net.evaluate(&val)?;
            net.save(&out)?;
            println!("held-out accuracy {acc:.4}, loss {loss:.4}; saved {}", out.display());
        }
        Command::TrainSkills { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            match cfg.train.precision {
                Precision::F64 => train_skills::<f64>(&cfg)?,
                Precision::F32 => train_skills::<f32>(&cfg)?,
            }
        }
        Command::Eval { checkpoint, config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            match cfg.train.precision {
                Precision::F64 => eval::<f64>(&cfg, &checkpoint, &out)?,
                Precision::F32 => eval::<f32>(&cfg, &checkpoint, &out)?,
            }
        }
        Command::Ablate {
            config,
            modes,
            seeds,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            match cfg.train.precision {
                Precision::F64 => ablate::<f64>(&cfg, &modes, &seeds, out)?,
                Precision::F32 => ablate::<f32>(&cfg, &modes, &seeds, out)?,
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn cli_dispatch<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
