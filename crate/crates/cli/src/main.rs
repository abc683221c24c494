//! `ftaed`: lane-level freeway anomaly detection pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod heatmap;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use ftaed::models::Architecture;

use commands::Ctx;
use config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(
    name = "ftaed",
    version,
    about = "Freeway traffic anomaly detection with graph autoencoders"
)]
struct Cli {
    /// Directory holding every stage's inputs and outputs.
    #[arg(long, global = true, default_value = "work")]
    work: PathBuf,
    /// `key=value` configuration file; unspecified keys keep their defaults.
    /// FTAED_SEED overrides `seed`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario: sensors.csv, incidents.csv, ground_truth.csv.
    Synth,
    /// Assemble sensor and incident CSVs into the grid archive and day split.
    Ingest {
        /// Sensor CSV [default: <work>/sensors.csv]
        #[arg(long)]
        sensors: Option<PathBuf>,
        /// Incident CSV [default: <work>/incidents.csv]
        #[arg(long)]
        incidents: Option<PathBuf>,
    },
    /// Fill missing cells: adaptive smoothing for speed, local means otherwise.
    Impute,
    /// Train an autoencoder on the training days.
    Train {
        /// mlp, gcn, stg-gcn, stg-gat or stg-rgcn
        #[arg(long, default_value = "gcn")]
        model: Architecture,
    },
    /// Set per-node thresholds from the trained model's training errors.
    Calibrate {
        #[arg(long, default_value = "gcn")]
        model: Architecture,
    },
    /// Flag (time, node) cells whose error exceeds alpha times the threshold.
    Detect {
        #[arg(long, default_value = "gcn")]
        model: Architecture,
        /// Threshold multiplier [default: the calibrated value, 1]
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Tune alpha on the validation days and report delay, misses, AUC.
    Evaluate {
        #[arg(long, default_value = "gcn")]
        model: Architecture,
        /// Validation false positive budget [default: eval.target_fpr, 0.05]
        #[arg(long)]
        target_fpr: Option<f64>,
    },
    /// Time-space SVG of one lane's speed with flags and crash reports.
    Heatmap {
        #[arg(long, default_value_t = 1)]
        lane: u8,
        /// Day to draw, YYYY-MM-DD [default: first day]
        #[arg(long)]
        day: Option<NaiveDate>,
        /// Overlay this model's detections.csv
        #[arg(long)]
        model: Option<Architecture>,
        /// Output path [default: <work>/heatmap_lane<N>_<day>.svg]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every configuration key with its default.
    Defaults,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Defaults = cli.command {
        print!("{}", config::defaults_text());
        return Ok(());
    }
    let config = PipelineConfig::load(cli.config.as_deref())?;
    let ctx = Ctx { work: cli.work, config };
    match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Ingest { sensors, incidents } => commands::ingest(&ctx, sensors.as_deref(), incidents.as_deref()),
        Command::Impute => commands::impute(&ctx),
        Command::Train { model } => commands::train(&ctx, model),
        Command::Calibrate { model } => commands::calibrate(&ctx, model),
        Command::Detect { model, alpha } => commands::detect(&ctx, model, alpha),
        Command::Evaluate { model, target_fpr } => commands::evaluate(&ctx, model, target_fpr),
        Command::Heatmap { lane, day, model, out } => commands::heatmap(&ctx, lane, day, model, out.as_deref()),
        Command::Defaults => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
