use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use trec::reconcile::Method;

mod commands;
mod config;
mod output;

#[derive(Parser, Debug)]
#[command(name = "trec", version, about = "Probabilistic reconciliation of hierarchical forecasts")]
struct Cli {
    /// More log output (repeat for more detail).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    /// On failure, print a JSON error object to stderr instead of text.
    #[arg(long, global = true)]
    error_json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reconcile one set of base forecasts.
    Reconcile(ReconcileArgs),
    /// Rolling-origin evaluation of reconciliation methods on a dataset.
    Evaluate(EvaluateArgs),
    /// Replication study on the simulated minimal hierarchy.
    Simulate(SimulateArgs),
    /// Fit the Inverse-Wishart prior and report it.
    FitPrior(FitPriorArgs),
    /// Turn an evaluation report or simulation output into tidy CSV.
    EmitPlotdata(PlotArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorArg {
    Diag,
    #[default]
    Full,
}

impl From<PriorArg> for trec::priorfit::PriorStructure {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::Diag => Self::Diagonal,
            PriorArg::Full => Self::Full,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceArg {
    /// Naive or seasonal naive, chosen per series.
    #[default]
    Baseline,
    /// Additive exponential smoothing.
    Smoothing,
}

fn parse_method(s: &str) -> Result<Method, trec::Error> {
    s.parse()
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconcileArgs {
    /// JSON file with default values for any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Hierarchy JSON (labels and aggregation matrix).
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Base point forecasts: CSV with columns `series,mean`.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// In-sample residuals of the base models, one column per series.
    #[arg(long)]
    pub residuals: Option<PathBuf>,
    /// Observed history, used to build the prior from naive baselines.
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Residuals to build the prior from, instead of `--series`.
    #[arg(long)]
    pub prior_residuals: Option<PathBuf>,
    #[arg(long)]
    pub season_length: Option<usize>,
    /// Comma-separated: base, mint, trec, trec-diag, trec-map, trec-min-nu0.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    /// Fix the prior degrees of freedom instead of optimizing them.
    #[arg(long)]
    pub nu0: Option<f64>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    /// Output file (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Wide CSV: time column followed by one column per series.
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Training window length(s), comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub train_length: Option<Vec<usize>>,
    /// Number of rolling origins.
    #[arg(long)]
    pub origins: Option<usize>,
    /// Distance between consecutive origins.
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    /// Built-in base forecaster, used when no bundle is given.
    #[arg(long, value_enum)]
    pub base_source: Option<SourceArg>,
    /// Directory with `mean_<k>.csv` and `residuals_<k>.csv` per origin.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub nu0: Option<f64>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    /// Draws for the energy score (0 disables it).
    #[arg(long)]
    pub es_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub season_length: Option<usize>,
    /// Run origins one after another.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sequential: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Training length(s), comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub train_length: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub es_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sequential: Option<bool>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Format of the summary on stdout when no directory is given.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitPriorArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Model residuals for choosing nu0 (baseline residuals if omitted).
    #[arg(long)]
    pub residuals: Option<PathBuf>,
    #[arg(long)]
    pub season_length: Option<usize>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    #[arg(long)]
    pub nu0: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Report JSON from `evaluate`, or an output directory of `simulate`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<trec::Error>()) {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn report_error(err: &anyhow::Error, code: u8, as_json: bool) {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<trec::Error>())
        .map_or("error", |e| e.kind());
    let mut stderr = std::io::stderr().lock();
    if as_json {
        let body = serde_json::json!({
            "error": { "kind": kind, "message": format!("{err:#}"), "exit_code": code }
        });
        let _ = writeln!(stderr, "{body}");
    } else {
        let _ = writeln!(stderr, "error: {err:#}");
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
            || e.downcast_ref::<csv::Error>().is_some_and(|c| matches!(c.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "error",
        1 => "warn",
        2 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Reconcile(a) => commands::reconcile(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::FitPrior(a) => commands::fit_prior(a),
        Command::EmitPlotdata(a) => commands::emit_plotdata(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            report_error(&err, code, cli.error_json);
            ExitCode::from(code)
        }
    }
}
