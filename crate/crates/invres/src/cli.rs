//! Command-line front end. Exit status 0 on success, 1 on runtime or
//! verification failure, 2 on bad flags or configuration.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use invres_core::autodiff::StoragePolicy;
use invres_core::data::{LabelVolume, SyntheticConfig, Volume};
use invres_core::models::{Arch, Model, ModelSpec};
use invres_core::{Precision, Scalar};

use crate::config::TrainConfig;
use crate::dataset::{load_dataset, write_synthetic, Dataset};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, EvalReport};
use crate::format::load_params;
use crate::profile::profile_table;
use crate::train::{train, TrainReport};
use crate::verify::run_all;

#[derive(Debug, Parser)]
#[command(name = "invres", version, about = "Memory-efficient invertible residual U-Nets for 3D segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-modal dataset and its manifest.
    GenData(GenDataArgs),
    /// Train from a configuration file, writing checkpoints and a report.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset by sliding-window inference.
    Eval(EvalArgs),
    /// Tabulate activation memory across architectures, depths and policies.
    ProfileMemory(ProfileArgs),
    /// Run the invertibility, gradient-equivalence and finite-difference suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub volumes: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub modalities: usize,
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.1)]
    pub bias: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `data.dir`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Write the JSON report here as well as printing it.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Architecture name or `all`.
    #[arg(long, default_value = "all")]
    pub arch: String,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub blocks: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
    #[arg(long, default_value = "f32")]
    pub precision: String,
    /// Include the VAE branch.
    #[arg(long)]
    pub vae: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "f64")]
    pub precision: String,
}

fn usage<E: std::fmt::Display>(e: E) -> Error {
    Error::Usage(e.to_string())
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.into(), source })?;
    fs::write(path, text).map_err(Error::io(path))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, A>(args: I) -> ExitCode
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Runs one command, returning the exit status on success.
pub fn execute(command: Command) -> Result<u8> {
    match command {
        Command::GenData(a) => {
            let cfg = SyntheticConfig {
                seed: a.seed,
                num_volumes: a.volumes,
                size: [a.size; 3],
                num_classes: a.classes,
                num_modalities: a.modalities,
                noise_sigma: a.noise,
                bias_strength: a.bias,
                ..SyntheticConfig::default()
            };
            cfg.validate().map_err(usage)?;
            let manifest = write_synthetic(&a.out, &cfg)?;
            println!(
                "wrote {} volumes to {} (histogram overlap {:.4})",
                manifest.volumes.len(),
                a.out.display(),
                manifest.histogram_overlap
            );
            Ok(0)
        }
        Command::Train(a) => {
            let mut cfg = TrainConfig::load(&a.config)?;
            if a.data.is_some() {
                cfg.data_dir = a.data;
            }
            if a.out.is_some() {
                cfg.out_dir = a.out;
            }
            let report = match cfg.precision {
                Precision::F32 => run_training::<f32>(&cfg)?,
                Precision::F64 => run_training::<f64>(&cfg)?,
            };
            let last = report.steps.last().expect("at least one step");
            println!("trained {} steps in {:.1}s, final loss {:.6}", last.step, report.wall_seconds, last.total);
            print!("{}", memory_text(&report));
            if let Some(m) = &report.final_metrics {
                println!("{m}");
            }
            Ok(0)
        }
        Command::Eval(a) => {
            let cfg = TrainConfig::load(&a.config)?;
            let (_, data) = load_dataset(&a.data)?;
            let report = match cfg.precision {
                Precision::F32 => run_eval::<f32>(&cfg, &a.checkpoint, &data)?,
                Precision::F64 => run_eval::<f64>(&cfg, &a.checkpoint, &data)?,
            };
            println!("{report}");
            if let Some(path) = &a.report {
                write_json(path, &report)?;
            }
            Ok(0)
        }
        Command::ProfileMemory(a) => {
            let archs = if a.arch == "all" { Arch::ALL.to_vec() } else { vec![a.arch.parse().map_err(usage)?] };
            let precision: Precision = a.precision.parse().map_err(usage)?;
            if a.blocks.is_empty() {
                return Err(Error::Usage("--blocks needs at least one value".into()));
            }
            let base = ModelSpec {
                levels: a.levels,
                base_width: a.width,
                patch: [a.patch; 3],
                vae: a.vae,
                latent_dim: 16,
                ..ModelSpec::default()
            };
            base.validate().map_err(usage)?;
            let policies =
                [StoragePolicy::Store, StoragePolicy::Checkpoint { segment_len: None }, StoragePolicy::Invertible];
            let table = profile_table(&base, &archs, &a.blocks, &policies, precision)?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&table).expect("serializable table"));
            } else {
                print!("{table}");
            }
            Ok(0)
        }
        Command::Verify(a) => {
            let precision: Precision = a.precision.parse().map_err(usage)?;
            let checks = run_all(precision)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            Ok(u8::from(failed > 0))
        }
    }
}

fn memory_text(report: &TrainReport) -> String {
    let m = &report.memory;
    format!(
        "peak_stored_scalars {}\npeak_bytes {}\nrecompute_count {}\n",
        m.peak_stored_scalars, m.peak_bytes, m.recompute_count
    )
}

/// Splits off the held-out volumes, trains, scores the held-out part and
/// writes `train_report.json` to the output directory.
pub fn run_training<T: Scalar>(cfg: &TrainConfig) -> Result<TrainReport> {
    let dir = cfg.data_dir.as_deref().ok_or_else(|| Error::Usage("no dataset: set data.dir or pass --data".into()))?;
    let (_, data) = load_dataset(dir)?;
    let (train_set, held_out) = split_holdout(&data, cfg.holdout)?;
    if let Some(out) = &cfg.out_dir {
        fs::create_dir_all(out).map_err(Error::io(out))?;
    }
    let (model, mut report) = train::<T>(cfg, train_set, cfg.out_dir.as_deref())?;
    if !held_out.is_empty() {
        let eval_model = model.reshaped(1, cfg.model.patch)?;
        report.final_metrics = Some(evaluate(&eval_model, held_out, cfg.threads)?);
    }
    if let Some(out) = &cfg.out_dir {
        write_json(&out.join("train_report.json"), &report)?;
    }
    Ok(report)
}

type Split<'a> = (&'a [(Volume, LabelVolume)], &'a [(Volume, LabelVolume)]);

/// `(training, held-out)` with the last `holdout` volumes held out.
pub fn split_holdout(data: &[(Volume, LabelVolume)], holdout: usize) -> Result<Split<'_>> {
    if holdout >= data.len() {
        return Err(Error::Usage(format!("holdout {holdout} leaves no training volumes out of {}", data.len())));
    }
    let (a, b) = data.split_at(data.len() - holdout);
    Ok((a, b))
}

fn run_eval<T: Scalar>(cfg: &TrainConfig, checkpoint: &Path, data: &Dataset) -> Result<EvalReport> {
    let spec = ModelSpec { batch: 1, ..cfg.model.clone() };
    let mut model = Model::<T>::build(&spec)?;
    load_params(checkpoint, model.params_mut())?;
    evaluate(&model, data, cfg.threads)
}
