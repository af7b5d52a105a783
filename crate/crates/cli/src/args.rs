use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cox_overfit::precision::PrecisionMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "cox-overfit", version, about = "Overfitting in high-dimensional Cox regression")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; all randomness is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for replicate fits and ζ-grid points.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, value_parser = parse_precision)]
    pub precision: Option<PrecisionMode>,

    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// JSON file with the command's settings; explicit flags take priority.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

fn parse_precision(s: &str) -> Result<PrecisionMode, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic survival dataset.
    Gen(GenArgs),
    /// Fit a Cox model to a dataset CSV.
    Fit(FitArgs),
    /// Solve the variational equations over a ζ grid.
    Theory(TheoryArgs),
    /// Run a replicate experiment and compare with theory.
    Experiment(ExperimentArgs),
    /// Undo the overfitting distortion of a fit.
    Correct(CorrectArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Fit(_) => "fit",
            Command::Theory(_) => "theory",
            Command::Experiment(_) => "experiment",
            Command::Correct(_) => "correct",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HazardKind {
    Const,
    InverseSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingKind {
    /// β* has RMS S and enters as β*/√p.
    Theory,
    /// β* multiplies the covariates directly.
    Cox,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long, value_enum)]
    pub hazard: Option<HazardKind>,
    /// Amplitude of the a/√t hazard (default e^{S²}/√2).
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long, value_enum)]
    pub scaling: Option<ScalingKind>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV as written by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub beta_bound: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    pub zeta_grid: Option<String>,
    #[arg(long)]
    pub s: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub hermite_order: Option<usize>,
    #[arg(long)]
    pub laguerre_order: Option<usize>,
    #[arg(long)]
    pub solver_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long, value_enum)]
    pub hazard: Option<HazardKind>,
    #[arg(long)]
    pub a: Option<f64>,
    /// Number of replicate datasets.
    #[arg(long)]
    pub r: Option<usize>,
    /// Write the (β*, β̂) cloud of every replicate.
    #[arg(long)]
    pub emit_pairs: bool,
    /// Write (Λ₀, Λ̂) at every event time of every replicate.
    #[arg(long)]
    pub emit_hazard: bool,
    /// Run the train/validation accuracy sweep instead of the replicate experiment.
    #[arg(long)]
    pub figure1_demo: bool,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_validation: Option<usize>,
    /// Comma-separated covariate counts for the accuracy sweep.
    #[arg(long)]
    pub p_grid: Option<String>,
    #[arg(long)]
    pub informative: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    /// Fit JSON as written by `fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Sample size the fit was computed from.
    #[arg(long)]
    pub n: Option<usize>,
    /// Truth JSON supplying S; otherwise S is estimated from the fit.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, conflicts_with = "truth")]
    pub s: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
}
