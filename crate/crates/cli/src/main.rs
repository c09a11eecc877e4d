//! `ccb`: generate toy data, train, evaluate, run ablations and render tables.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.

mod commands;
mod manifest;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use options::{DataArgs, ModelArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "ccb", version, about = "Content/context debiasing for VQA on a toy shifted-prior benchmark")]
struct Cli {
    /// TOML or JSON file with [data], [model] and [train] sections. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Default artifact root.
    #[arg(long, global = true, env = "CCB_DATA_DIR", default_value = "ccb-data")]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train / test / val splits.
    GenData {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        data: DataArgs,
        /// Output directory (defaults to the data dir).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Estimate the bias table from a training split and train a model.
    Train {
        /// Training split (defaults to <data-dir>/train.jsonl).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Training and initialization seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train_args: TrainArgs,
        /// Additive smoothing for the bias table counts.
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        /// Output directory (defaults to <data-dir>/runs/<loss>-seed<seed>).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Bias table; required only for models that keep the bias at inference.
        #[arg(long)]
        bias: Option<PathBuf>,
        /// In-distribution split; when given, the report carries the gap.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Head to score with: base, content or joint (default follows the loss mode).
        #[arg(long)]
        head: Option<ccb_core::model::Head>,
        /// Output directory (defaults to the checkpoint's directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the ablation grid (two baselines, r in {0, 0.5, 1, 2}, with and without context label).
    Ablate {
        /// Number of seeds, starting at --first-seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train_args: TrainArgs,
        /// Output directory (defaults to <data-dir>/ablation).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render result tables from metrics and ablation files.
    Report {
        /// `NAME=SHIFTED.json[,IN_DISTRIBUTION.json]`; repeatable.
        #[arg(long = "row", value_name = "NAME=FILES")]
        rows: Vec<String>,
        /// Ablation result (`ablation.json`) to render as the ablation table.
        #[arg(long)]
        ablation: Option<PathBuf>,
        /// Output directory (defaults to <data-dir>/report).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Re-run a command from its manifest and compare output hashes.
    Replay {
        manifest: PathBuf,
        /// Where to write the re-run outputs (defaults to a `replay` directory next to the manifest).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Marks an error as caused by bad input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ccb_core::Error>() {
            return if e.is_usage() { 2 } else { 3 };
        }
    }
    3
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = options::load_config(cli.config.as_deref())?;
    let root = cli.data_dir;
    match cli.command {
        Command::GenData { seed, data, out_dir } => {
            let mut cfg = file;
            data.apply(&mut cfg.data);
            if let Some(s) = seed {
                cfg.data.seed = s;
            }
            commands::gen_data(cfg.data, &out_dir.unwrap_or(root))
        }
        Command::Train {
            train,
            seed,
            model,
            train_args,
            smoothing,
            out_dir,
        } => {
            let mut cfg = file;
            model.apply(&mut cfg.model);
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            train_args.apply(&mut cfg.train)?;
            let train_split = train.unwrap_or_else(|| root.join("train.jsonl"));
            let out = out_dir.unwrap_or_else(|| {
                root.join("runs").join(format!(
                    "{}-seed{}",
                    serde_json::to_value(cfg.train.loss_mode).unwrap().as_str().unwrap_or("run"),
                    cfg.train.seed
                ))
            });
            commands::train(&train_split, cfg.model, cfg.train, smoothing, &out)
        }
        Command::Eval {
            checkpoint,
            split,
            bias,
            reference,
            head,
            out_dir,
        } => {
            let out = out_dir.unwrap_or_else(|| {
                checkpoint.parent().map(PathBuf::from).unwrap_or_default()
            });
            commands::eval(&checkpoint, &split, bias.as_deref(), reference.as_deref(), head, &out)
        }
        Command::Ablate {
            seeds,
            first_seed,
            data,
            model,
            train_args,
            out_dir,
        } => {
            if seeds == 0 {
                return Err(usage("--seeds must be at least 1"));
            }
            let mut cfg = file;
            data.apply(&mut cfg.data);
            model.apply(&mut cfg.model);
            train_args.apply(&mut cfg.train)?;
            let seeds: Vec<u64> = (first_seed..first_seed + seeds).collect();
            commands::ablate(cfg, seeds, &out_dir.unwrap_or_else(|| root.join("ablation")))
        }
        Command::Report { rows, ablation, out_dir } => {
            let table1 = rows
                .iter()
                .map(|r| options::parse_row(r))
                .collect::<anyhow::Result<Vec<_>>>()?;
            if table1.is_empty() && ablation.is_none() {
                return Err(usage("nothing to report: pass --row and/or --ablation"));
            }
            commands::report(table1, ablation, &out_dir.unwrap_or_else(|| root.join("report")))
        }
        Command::Replay { manifest, out_dir } => {
            let out = out_dir.unwrap_or_else(|| {
                manifest
                    .parent()
                    .map(PathBuf::from)
                    .unwrap_or_default()
                    .join("replay")
            });
            commands::replay(&manifest, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
