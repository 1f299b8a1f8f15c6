use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Online clustering of embedding streams.
#[derive(Debug, Parser)]
#[command(name = "ogmc", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster a vector file and write identity assignments.
    Run(RunConfig),
    /// Score an assignments file against truth labels.
    Eval(EvalConfig),
    /// Search for parameters on a labelled training set.
    Tune(TuneArgs),
    /// Measure per-sample latency as the database grows.
    Bench(BenchArgs),
    /// Write a synthetic labelled vector set.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(rename_all = "snake_case")]
pub struct RunConfig {
    #[arg(long)]
    pub vectors_path: PathBuf,
    #[arg(long)]
    pub labels_path: Option<PathBuf>,
    /// `thr_f,thr_wc,thr_sc,ns_r,nc_r` or a JSON params file.
    #[arg(long)]
    pub params: Option<String>,
    /// Shuffle the stream with this seed; file order when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stage1_only: bool,
    #[arg(long)]
    pub snapshot_in: Option<PathBuf>,
    #[arg(long)]
    pub snapshot_out: Option<PathBuf>,
    #[arg(long)]
    pub report_path: Option<PathBuf>,
    /// Defaults to `<vectors_path>.assignments.csv`.
    #[arg(long)]
    pub assignments_path: Option<PathBuf>,
    /// Added to every file row index to form sample ids.
    #[arg(long, default_value_t = 0)]
    pub id_offset: u64,
    /// Audit every rule after every event (slow).
    #[arg(long)]
    pub check_invariants: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(rename_all = "snake_case")]
pub struct EvalConfig {
    #[arg(long)]
    pub pred_csv: PathBuf,
    #[arg(long)]
    pub labels_path: PathBuf,
    #[arg(long)]
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(rename_all = "snake_case")]
pub struct TuneArgs {
    #[arg(long)]
    pub train_vectors: PathBuf,
    #[arg(long)]
    pub train_labels: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub threshold_lo: f64,
    #[arg(long, default_value_t = 2.0)]
    pub threshold_hi: f64,
    #[arg(long, default_value_t = 0.1)]
    pub initial_step: f64,
    #[arg(long, default_value_t = 4)]
    pub refinement_rounds: usize,
    /// Inclusive interval `lo,hi`.
    #[arg(long, default_value = "3,6")]
    pub ns_r_range: String,
    #[arg(long, default_value = "5,10,15,20,25")]
    pub nc_r_values: String,
    #[arg(long, env = "OGMC_WORKERS", default_value_t = 1)]
    pub parallel_workers: usize,
    /// Where the tuned params JSON goes.
    #[arg(long)]
    pub params_out: PathBuf,
    #[arg(long)]
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(rename_all = "snake_case")]
pub struct BenchArgs {
    #[arg(long)]
    pub vectors_path: PathBuf,
    #[arg(long)]
    pub labels_path: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<String>,
    /// Comma separated cumulative sample counts.
    #[arg(long)]
    pub checkpoints: String,
    /// Number of repetitions, each with its own shuffle.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Base shuffle seed; repetition `r` uses `seed + r`. File order when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stage1_only: bool,
    #[arg(long)]
    pub csv_path: PathBuf,
    #[arg(long)]
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(rename_all = "snake_case")]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 300)]
    pub n_identities: usize,
    #[arg(long, default_value_t = 30_000)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 1)]
    pub min_modes: usize,
    #[arg(long, default_value_t = 3)]
    pub max_modes: usize,
    #[arg(long, default_value_t = 0.6)]
    pub mode_offset: f64,
    #[arg(long, default_value_t = 0.7)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise_jitter: f64,
    #[arg(long, default_value_t = 0.3)]
    pub max_center_cos: f64,
    /// Identities appear progressively within this fraction of the stream.
    #[arg(long)]
    pub growth_window: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub vectors_out: PathBuf,
    #[arg(long)]
    pub labels_out: PathBuf,
}
