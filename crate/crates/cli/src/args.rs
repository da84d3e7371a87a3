use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "gil",
    version,
    about = "Gate-conditioned innovation statistics: tables, Monte Carlo experiments and NIS correction",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Contraction factor and post-gate mean NIS for each (P_g, m).
    GammaTable(GammaTableArgs),
    /// Gate-conditioned NIS and whitened covariance by Monte Carlo.
    GateExperiment(GateArgs),
    /// Minimum NIS over M in-gate candidates by Monte Carlo.
    NnExperiment(NnArgs),
    /// Constant-velocity tracking run with NIS consistency verdicts.
    Track(TrackArgs),
    /// Divide a stream of NIS values (one per line) by the contraction factor.
    NisCorrect(NisCorrectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Nominal,
    GateAware,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Update with the target measurement every step.
    Truth,
    /// Update with the NN-selected measurement; coast when the gate is empty.
    Selected,
}

/// Flags shared by the Monte Carlo subcommands.
#[derive(Debug, Args)]
pub struct Common {
    /// Base seed; every shard stream derives from it.
    #[arg(long, env = "GIL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Report destination; the summary always goes to standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// key=value file of flags; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GammaTableArgs {
    /// Gate probabilities.
    #[arg(long = "pg", value_delimiter = ',', default_values_t = vec![0.90, 0.95, 0.99])]
    pub p_gates: Vec<f64>,
    /// Measurement dimensions.
    #[arg(long = "m", value_delimiter = ',', default_values_t = vec![2])]
    pub m_values: Vec<u32>,
    /// Print full-precision values instead of the 3-decimal table.
    #[arg(long)]
    pub full_precision: bool,
    /// Write truncated chi-square density samples for each row here (CSV).
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    #[arg(long = "pg", default_value_t = 0.95)]
    pub p_gate: f64,
    #[arg(long = "m", default_value_t = 2)]
    pub m: u32,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    /// Write the gated NIS histogram with the analytic density (CSV).
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct NnArgs {
    #[arg(long = "pg", default_value_t = 0.95)]
    pub p_gate: f64,
    #[arg(long = "m", default_value_t = 2)]
    pub m: u32,
    /// Candidate multiplicities.
    #[arg(long = "M", value_delimiter = ',', default_values_t = vec![2, 3, 5])]
    pub multiplicities: Vec<u32>,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    /// Write per-M min-NIS histograms with analytic densities (CSV).
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Gate probability; 1 disables gating.
    #[arg(long = "pg", default_value_t = 0.95)]
    pub p_gate: f64,
    /// Candidates per step (the target plus M-1 in-gate draws).
    #[arg(long = "M", default_value_t = 1)]
    pub multiplicity: u32,
    #[arg(long, alias = "samples", default_value_t = 100_000)]
    pub steps: u64,
    /// Which NIS reference(s) to assess against.
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = PolicyArg::Truth)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    /// Process-noise power spectral density.
    #[arg(long, default_value_t = 0.01)]
    pub psd: f64,
    /// Measurement noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub meas_std: f64,
    /// Covariance-trace bound that aborts the run.
    #[arg(long, default_value_t = 1e6)]
    pub divergence_trace: f64,
    /// Write per-step trajectory records here (CSV).
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct NisCorrectArgs {
    #[arg(long = "pg", default_value_t = 0.95)]
    pub p_gate: f64,
    #[arg(long = "m", default_value_t = 2)]
    pub m: u32,
    /// Input file; standard input when absent.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}
