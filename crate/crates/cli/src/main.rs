//! Experiment runner: dataset synthesis, two-stage training, scoring,
//! metric reports, gradient-noise verification, and seed sweeps.
//!
//! Stages communicate through files in an output directory, so `metrics`
//! can also evaluate score CSVs produced elsewhere. Exit codes are
//! categorized: 0 success, 2 io, 3 parse, 4 configuration, 5 training
//! failure, 6 contract violation, 7 numeric domain, 8 oracle failure,
//! 9 undefined metric.

use clap::{Parser, Subcommand};
use ltood_core::experiment::{
    self as exp, checkpoint_path, data_paths, load_config, resolve_out_dir, scores_path,
    ExperimentConfig,
};
use ltood_core::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ltood")]
#[command(about = "Long-tailed out-of-distribution detection experiments")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the four dataset CSVs (train/test inliers, train/test OOD)
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output.dir)
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Re-derive every seed in the config from this base seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train both stages; writes checkpoint.json and loss_trace.csv
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding the dataset CSVs (defaults to the output dir)
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score the test CSVs with a checkpoint; writes scores.csv
    Score {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path (defaults to <out_dir>/checkpoint.json)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Score CSV destination (defaults to <out_dir>/scores.csv)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a score CSV; writes report.txt and report.json
    Metrics {
        /// Score CSV (ours or externally produced)
        #[arg(long)]
        scores: PathBuf,
        /// Config supplying the operating points (defaults otherwise)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Verify the gradient-noise identities on an OOD file
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to verify (defaults to a fresh initialization)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// OOD sample CSV (defaults to <out_dir>/train_out.csv)
        #[arg(long)]
        ood: Option<PathBuf>,
        /// Report CSV destination (defaults to <out_dir>/gradcheck.csv)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full pipeline per seed, aggregated as mean ± std
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds (default: 1,2,3,4,5,6)
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn load(config: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let cfg = load_config(config)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth {
            config,
            out_dir,
            seed,
        } => {
            let cfg = load(&config, seed)?;
            let dir = resolve_out_dir(&cfg, out_dir.as_deref());
            let paths = exp::cmd_synth(&cfg, &dir)?;
            println!("wrote {}", paths.train_in.display());
            println!("wrote {}", paths.test_in.display());
            println!("wrote {}", paths.train_out.display());
            println!("wrote {}", paths.test_out.display());
        }
        Command::Train {
            config,
            data_dir,
            out_dir,
            seed,
        } => {
            let cfg = load(&config, seed)?;
            let dir = resolve_out_dir(&cfg, out_dir.as_deref());
            let data = data_dir.unwrap_or_else(|| dir.clone());
            let ckpt = exp::cmd_train(&cfg, &data, &dir)?;
            println!("wrote {}", ckpt.display());
            println!("wrote {}", dir.join("loss_trace.csv").display());
        }
        Command::Score {
            config,
            checkpoint,
            data_dir,
            out,
            seed,
        } => {
            let cfg = load(&config, seed)?;
            let dir = resolve_out_dir(&cfg, None);
            let data = data_dir.unwrap_or_else(|| dir.clone());
            let ckpt = checkpoint.unwrap_or_else(|| checkpoint_path(&dir));
            let out = out.unwrap_or_else(|| scores_path(&dir));
            let paths = data_paths(&data);
            exp::cmd_score(
                cfg.train.method,
                &ckpt,
                &paths.test_in,
                &paths.test_out,
                &out,
            )?;
            println!("wrote {}", out.display());
        }
        Command::Metrics {
            scores,
            config,
            out_dir,
        } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => ExperimentConfig::default(),
            };
            let dir = out_dir.unwrap_or_else(|| {
                scores
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let report = exp::cmd_metrics(
                &scores,
                &cfg.metrics.tpr_points,
                &cfg.metrics.fpr_points,
                &dir,
            )?;
            print!("{}", report.to_text());
            println!("wrote {}", dir.join("report.txt").display());
            println!("wrote {}", dir.join("report.json").display());
        }
        Command::Gradcheck {
            config,
            checkpoint,
            ood,
            out,
            seed,
        } => {
            let cfg = load(&config, seed)?;
            let dir = resolve_out_dir(&cfg, None);
            let ood = ood.unwrap_or_else(|| data_paths(&dir).train_out);
            let out = out.unwrap_or_else(|| dir.join("gradcheck.csv"));
            let summary = exp::cmd_gradcheck(&cfg, checkpoint.as_deref(), &ood, &out)?;
            println!("{}", summary.report_line());
            println!("wrote {}", out.display());
        }
        Command::Sweep {
            config,
            seeds,
            out_dir,
        } => {
            let cfg = load_config(&config)?;
            let seeds = if seeds.is_empty() {
                vec![1, 2, 3, 4, 5, 6]
            } else {
                seeds
            };
            let dir = resolve_out_dir(&cfg, out_dir.as_deref());
            let report = exp::cmd_sweep(&cfg, &seeds, &dir)?;
            for (key, mean, std) in &report.rows {
                println!("{key} = {mean} ± {std}");
            }
            println!("wrote {}", dir.join("sweep_report.txt").display());
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 2,
        Error::Parse { .. } => 3,
        Error::Config(_) => 4,
        Error::Training { .. } => 5,
        Error::Contract(_) => 6,
        Error::Numeric { .. } => 7,
        Error::Oracle { .. } => 8,
        Error::UndefinedMetric(_) => 9,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
