//! `mobsel` — characterize mobility datasets, recommend a model class and
//! evaluate next-place predictors.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 infeasible plan.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mobsel_core::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "mobsel", version, about = "Mobility dataset characterization and model selection")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, env = "MOBSEL_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "MOBSEL_THREADS")]
    pub threads: Option<usize>,

    /// Output file or directory.
    #[arg(long, global = true, env = "MOBSEL_OUT")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw GPS fixes or pre-symbolized sequences.
    Ingest(IngestArgs),
    /// Detect staypoints and cluster them into a POI alphabet.
    ExtractPoi(ExtractArgs),
    /// Generate a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Compute the meta-attribute report and plot data.
    Characterize(CharacterizeArgs),
    /// Cross-validate one predictor.
    Validate(ValidateArgs),
    /// Accuracy of one predictor under several validation schemes.
    Sensitivity(SensitivityArgs),
    /// Bits per symbol of several predictors under one plan.
    Compress(CompressArgs),
    /// Recommend a model class from a report.
    Recommend(RecommendArgs),
    /// Bundle component outputs into one report directory.
    Report(ReportArgs),
    /// Serve a native model over the external-predictor protocol on stdio.
    ServePredictor(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input file or directory.
    pub input: PathBuf,
    #[arg(long, default_value = "csv_gps")]
    pub format: String,
    /// Column map for CSV input.
    #[arg(long, default_value = "user=0,lat=1,lon=2,t=3")]
    pub cols: String,
    /// The first CSV line is a header.
    #[arg(long)]
    pub header: bool,
    /// Timestamps are local time at this UTC offset, in seconds.
    #[arg(long, allow_hyphen_values = true)]
    pub tz_offset: Option<i64>,
    /// Fail on duplicate timestamps instead of dropping them.
    #[arg(long)]
    pub strict_dedup: bool,
    /// Dataset name for symbol input.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory written by `ingest`.
    pub input: PathBuf,
    /// Staypoint radius, meters.
    #[arg(long, env = "MOBSEL_STAY_RADIUS", default_value_t = 200.0)]
    pub stay_radius: f64,
    /// Minimum staypoint duration, seconds.
    #[arg(long, env = "MOBSEL_STAY_MIN", default_value_t = 1200)]
    pub stay_min: i64,
    /// Cluster merge radius, meters.
    #[arg(long, env = "MOBSEL_MERGE_RADIUS", default_value_t = 250.0)]
    pub merge_radius: f64,
    /// Clusters visited fewer times are dropped.
    #[arg(long, env = "MOBSEL_MIN_VISITS", default_value_t = 2)]
    pub min_visits: usize,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// iid, periodic, markov, copy_with_gap or regime_switch (with --spec).
    #[arg(long)]
    pub kind: Option<String>,
    /// Source definition as JSON; overrides --kind.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Raw symbols per user.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub users: usize,
    #[arg(long, default_value_t = 8)]
    pub alphabet: usize,
    /// Copy gap.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Allow the copy driver to repeat symbols (runs are collapsed later).
    #[arg(long)]
    pub allow_repeats: bool,
    /// Cycle for the periodic source, e.g. 0,1,2.
    #[arg(long, value_delimiter = ',')]
    pub pattern: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct CharacterizeArgs {
    pub dataset: PathBuf,
    #[arg(long, env = "MOBSEL_DMAX", default_value_t = 1000)]
    pub dmax: usize,
    /// per_user or global.
    #[arg(long, default_value = "per_user")]
    pub fano_alphabet: String,
    /// per_user or dataset.
    #[arg(long, default_value = "per_user")]
    pub entropy_scope: String,
    /// per_user or dataset.
    #[arg(long, default_value = "dataset")]
    pub mi_scope: String,
    #[arg(long, env = "MOBSEL_EPS_FIT", default_value_t = 1e-3)]
    pub eps_fit: f64,
    #[arg(long, env = "MOBSEL_EPS_DEPTH", default_value_t = 0.1)]
    pub eps_depth: f64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// markov:<k>, mmc[:<states>], top or uniform, with optional
    /// ,alpha=<a> and ,fallback=backoff|uniform.
    #[arg(long, env = "MOBSEL_MODEL", default_value = "markov:1")]
    pub model: String,
    /// Run an external predictor instead (program and arguments, split on spaces).
    #[arg(long)]
    pub external: Option<String>,
    /// Context symbols sent to an external predictor.
    #[arg(long, default_value_t = mobsel_core::predictors::external::DEFAULT_CONTEXT_WINDOW)]
    pub context_window: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Use the model class recommended in this file (markov_class only).
    #[arg(long, conflicts_with = "external")]
    pub from_recommendation: Option<PathBuf>,
    #[arg(long, env = "MOBSEL_SCHEME", default_value = "block_rolling:k=10,p=1")]
    pub scheme: String,
    /// Train one model on every user's training part.
    #[arg(long)]
    pub pooled: bool,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Repeatable; defaults to holdout 80/70/60 and shuffled k-fold 3/5/10.
    #[arg(long = "scheme")]
    pub schemes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    pub dataset: PathBuf,
    /// Repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[arg(long, env = "MOBSEL_SCHEME", default_value = "block_rolling:k=10,p=1")]
    pub scheme: String,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    /// report.json written by `characterize`.
    pub report: PathBuf,
    /// Rule file replacing the default rules.
    #[arg(long, env = "MOBSEL_RULES")]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub dataset: PathBuf,
    /// report.json from `characterize`.
    #[arg(long)]
    pub characterization: PathBuf,
    /// Evaluation JSON written beside a `validate` fold CSV; repeatable.
    #[arg(long = "evaluation")]
    pub evaluations: Vec<PathBuf>,
    /// JSON written beside a `sensitivity` table.
    #[arg(long)]
    pub sensitivity: Option<PathBuf>,
    #[arg(long)]
    pub recommendation: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "markov:1")]
    pub model: String,
    /// Alphabet size; or give --dataset.
    #[arg(long, required_unless_present = "dataset")]
    pub alphabet: Option<usize>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(core) = cause.downcast_ref::<mobsel_core::Error>() {
            return match core.kind() {
                ErrorKind::InfeasiblePlan => 4,
                ErrorKind::Data => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MOBSEL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
