use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rankmargin_core::ModelVariant;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "rankmargin", version, about = "Home advantage and rank-slot abilities from match margins")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Fit a model to a dataset and write draws, summaries and diagnostics.
    Fit(FitArgs),
    /// Predict margins and win probabilities for matchups from saved draws.
    Predict(PredictArgs),
    /// Generate a synthetic dataset from known parameters.
    Simulate(SimulateArgs),
    /// Write match counts, head-to-head records and the ability curve.
    Summarize(SummarizeArgs),
    /// Recompute convergence diagnostics for saved draws.
    Diagnose(DiagnoseArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Predict(_) => "predict",
            Command::Simulate(_) => "simulate",
            Command::Summarize(_) => "summarize",
            Command::Diagnose(_) => "diagnose",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Fit(a) => Some(a.sampler.seed),
            Command::Simulate(a) => Some(a.seed),
            _ => None,
        }
    }

    pub fn out_dir_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Fit(a) => Some(&mut a.out),
            Command::Predict(a) => Some(&mut a.out),
            Command::Simulate(a) => Some(&mut a.out),
            Command::Summarize(a) => Some(&mut a.out),
            Command::Diagnose(a) => Some(&mut a.out),
            Command::Rerun(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelArg {
    Global,
    Country,
}

impl From<ModelArg> for ModelVariant {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Global => ModelVariant::Global,
            ModelArg::Country => ModelVariant::CountryIntercepts,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub target_accept: f64,
    #[arg(long, default_value_t = 10)]
    pub max_treedepth: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Match records (.csv) or an encoded dataset (.json).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Global)]
    pub model: ModelArg,
    /// Highest rank kept; abilities are estimated for ranks 1..=RANKS.
    #[arg(long, default_value_t = 30)]
    pub ranks: usize,
    /// Countries with their own home intercept in the country model.
    #[arg(long, value_delimiter = ',', default_value = "EGY,ENG,USA")]
    pub countries: Vec<String>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 2.0)]
    pub prior_beta_scale: f64,
    #[arg(long, default_value_t = 2.0)]
    pub prior_gamma_scale: f64,
    /// Hold sigma_y and sigma_a fixed, e.g. `1.9,0.3`.
    #[arg(long, value_name = "SIGY,SIGA")]
    pub fixed_scales: Option<String>,
    /// Use one non-centering weight in [0, 1] for all abilities instead of
    /// the per-rank default chosen from match counts.
    #[arg(long, value_name = "W")]
    pub noncentering: Option<f64>,
    /// Column name overrides for CSV input, e.g. `rank1=Rank1,date=Played`.
    #[arg(long, value_name = "KEY=HEADER,...")]
    pub columns: Option<String>,
    /// Exit 0 even when R-hat or divergence checks fail.
    #[arg(long)]
    pub allow_bad_diagnostics: bool,
    #[arg(long, default_value = "fit")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    /// Draws file written by `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    /// CSV with columns rank1, rank2 and optionally label, venue, p1_home,
    /// p2_home, actual.
    #[arg(long, conflicts_with_all = ["rank1", "rank2"])]
    pub queries: Option<PathBuf>,
    #[arg(long, requires = "rank2")]
    pub rank1: Option<usize>,
    #[arg(long, requires = "rank1")]
    pub rank2: Option<usize>,
    #[arg(long)]
    pub venue: Option<String>,
    #[arg(long)]
    pub p1_home: bool,
    #[arg(long)]
    pub p2_home: bool,
    #[arg(long)]
    pub label: Option<String>,
    /// Model the queries are meant for; inferred from the draws if omitted.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Use posterior means instead of integrating over the draws.
    #[arg(long)]
    pub plug_in: bool,
    #[arg(long, default_value = "predict")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1400)]
    pub matches: usize,
    #[arg(long, default_value_t = 30)]
    pub ranks: usize,
    #[arg(long, default_value_t = 0.4)]
    pub h: f64,
    #[arg(long, default_value_t = 1.9)]
    pub sigma_y: f64,
    #[arg(long, default_value_t = 0.3)]
    pub sigma_a: f64,
    #[arg(long, default_value_t = -0.1, allow_hyphen_values = true)]
    pub beta: f64,
    #[arg(long, default_value_t = -0.2, allow_hyphen_values = true)]
    pub gamma: f64,
    #[arg(long, value_delimiter = ',', default_value = "EGY,ENG,USA")]
    pub countries: Vec<String>,
    /// Country intercepts, one per country; zero if omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub country_effects: Vec<f64>,
    /// Keep margins continuous instead of snapping to best-of-five outcomes.
    #[arg(long)]
    pub continuous: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "simulated")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SummarizeArgs {
    /// Match records (.csv) or an encoded dataset (.json).
    #[arg(long, required_unless_present = "draws")]
    pub data: Option<PathBuf>,
    /// Draws file written by `fit`.
    #[arg(long)]
    pub draws: Option<PathBuf>,
    /// Highest rank kept when reading match records.
    #[arg(long, default_value_t = 30)]
    pub ranks: usize,
    /// Size of the head-to-head table.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long)]
    pub columns: Option<String>,
    #[arg(long, default_value = "summary")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub allow_bad_diagnostics: bool,
    #[arg(long, default_value = "diagnostics")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; defaults to the one recorded in the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run even if an input file no longer matches its recorded digest.
    #[arg(long)]
    pub ignore_digests: bool,
}
