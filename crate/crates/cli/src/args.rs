use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "decolite", version, about = "Train, evaluate and analyse LITE ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one cross-entropy model per seed.
    Train(RunArgs),
    /// Train a base or decorrelated ensemble and score it on the test split.
    Ensemble(RunArgs),
    /// Score a trained ensemble on the test split.
    Evaluate(RunArgs),
    /// Pairwise comparison of classifiers from a results table.
    Mcm(RunArgs),
    /// Feature statistics, FID and filter distances of a trained ensemble.
    Diversity(RunArgs),
    /// Offline end-to-end checks on the bundled synthetic dataset.
    Smoke(SmokeArgs),
}

/// Flags shared by the run commands. Every value may also come from
/// `--config`; flags win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Root of the UCR archive (falls back to DECO_DATA_ROOT).
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Dataset name, or `synthetic` for the bundled two-class set.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Ensemble kind: base or deco.
    #[arg(long)]
    pub kind: Option<String>,
    /// Ensemble size.
    #[arg(long)]
    pub size: Option<usize>,
    /// Comma-separated seeds, e.g. 0,1,2.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Orthogonality normalisation: mean or raw.
    #[arg(long)]
    pub orth_norm: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat key=value file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Results table (CSV, one column per classifier). Read by `mcm`,
    /// updated by `evaluate`.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Flip one byte of the first checkpoint after it is written.
    Checkpoint,
}

#[derive(Debug, Clone, Args)]
pub struct SmokeArgs {
    #[arg(long, default_value = "smoke-out")]
    pub out: PathBuf,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}
