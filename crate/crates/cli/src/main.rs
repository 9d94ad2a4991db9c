//! `fcixnet`: batch front end for FCIX construction, eGC network inference,
//! joint efficiency tests, network statistics and synthetic data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod run;

#[derive(Parser, Debug)]
#[command(name = "fcixnet", version, about = "Financial chaos index and extended Granger causality networks")]
struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Increase log verbosity (-v info, -vv debug). Logs go to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Compute the FCIX series from a price panel.
    Fcix(FcixArgs),
    /// Infer an extended Granger causality network.
    Egc(EgcArgs),
    /// Joint test that no news series strictly lag-causes the target.
    Emh(EmhArgs),
    /// Node centralities, global statistics and DOT export for a network.
    Netstats(NetstatsArgs),
    /// Generate synthetic data with known ground truth.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Score an inferred network against a synthetic ground truth.
    Score(ScoreArgs),
}

#[derive(Args, Debug, Serialize)]
struct FcixArgs {
    /// Price panel CSV: `date,<asset>...`, one row per date.
    #[arg(long)]
    prices: PathBuf,
    /// Output CSV `date,FCIX,lambda_max`.
    #[arg(long)]
    out: PathBuf,
    /// Sliding window length in return periods; each window reports its last period.
    #[arg(long)]
    window: Option<usize>,
    /// Also dump the fitted factors as JSON.
    #[arg(long)]
    factors: Option<PathBuf>,
    /// Relative objective-change tolerance of the ALS fit.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Maximum ALS sweeps.
    #[arg(long, default_value_t = 500)]
    max_sweeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lags {
    Auto,
    Fixed(usize),
}

impl Serialize for Lags {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Lags::Auto => s.serialize_str("auto"),
            Lags::Fixed(p) => s.serialize_u64(*p as u64),
        }
    }
}

fn parse_lags(s: &str) -> Result<Lags, String> {
    if s == "auto" {
        return Ok(Lags::Auto);
    }
    match s.parse::<usize>() {
        Ok(p) if p >= 1 => Ok(Lags::Fixed(p)),
        _ => Err(format!("expected a lag order >= 1 or `auto`, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Scheme {
    Residual,
    Permutation,
}

/// Series ingestion and VAR options shared by `egc` and `emh`.
#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    /// Series CSV `date,<series>...`; repeat to inner-join several files on date.
    #[arg(long = "series", required = false)]
    series: Vec<PathBuf>,
    /// Comma-separated subset of columns to keep, in this order.
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    /// Take natural logs of every series (values must be positive).
    #[arg(long)]
    log: bool,
    /// First-difference every series (after --log).
    #[arg(long)]
    diff: bool,
    /// VAR lag order, or `auto` for BIC selection up to --max-lags.
    #[arg(long, default_value = "auto", value_parser = parse_lags)]
    lags: Lags,
    /// Largest lag order considered by `--lags auto`.
    #[arg(long, default_value_t = 8)]
    max_lags: usize,
    /// Drop the intercept from every equation.
    #[arg(long)]
    no_intercept: bool,
    /// Drop the lag-0 regressors (classical Granger setting).
    #[arg(long)]
    no_instantaneous: bool,
    /// Bootstrap replications per test (>= 1).
    #[arg(long, default_value_t = 500)]
    bootstrap: usize,
    /// Residual resampling scheme under the null.
    #[arg(long, value_enum, default_value_t = Scheme::Residual)]
    scheme: Scheme,
}

#[derive(Args, Debug, Serialize)]
struct EgcArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Significance level for keeping an edge.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Bootstrap seed (required).
    #[arg(long)]
    seed: u64,
    /// Output network JSON.
    #[arg(long)]
    out: PathBuf,
    /// Write `<prefix>_{lagged,instantaneous}_{measure,prob}.csv` heatmaps over all tests.
    #[arg(long)]
    heatmaps: Option<String>,
    /// Dump every target's full-equation coefficients as JSON.
    #[arg(long)]
    coefficients: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EmhArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Target series (e.g. FCIX).
    #[arg(long, required_unless_present = "pvalues_file")]
    target: Option<String>,
    /// Comma-separated news series.
    #[arg(long, value_delimiter = ',', required_unless_present = "pvalues_file")]
    news: Vec<String>,
    /// Joint rule: bonferroni or fisher.
    #[arg(long, default_value = "fisher")]
    method: String,
    /// Significance level of the joint test.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Bootstrap seed (required unless --pvalues-file is given).
    #[arg(long, required_unless_present = "pvalues_file")]
    seed: Option<u64>,
    /// Skip estimation and combine precomputed p-values from a `label,p` CSV.
    /// Values <= 0 are read as 1/(B+1) with B = --bootstrap.
    #[arg(long)]
    pvalues_file: Option<PathBuf>,
    /// Output HypothesisReport JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct NetstatsArgs {
    /// Network JSON as written by `egc`.
    #[arg(long)]
    network: PathBuf,
    /// Per-node CSV `node,authority,hub,pagerank,betweenness,bridging`.
    #[arg(long)]
    out: PathBuf,
    /// Global statistics JSON [default: <out> with extension .global.json].
    #[arg(long)]
    global: Option<PathBuf>,
    /// Also write a Graphviz DOT file.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Edge kinds to include, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "lagged,instantaneous")]
    kinds: Vec<String>,
    /// PageRank damping factor.
    #[arg(long, default_value_t = 0.85)]
    damping: f64,
    /// Weight HITS and PageRank by the eGC measure.
    #[arg(long)]
    weighted: bool,
    /// Convergence tolerance of HITS and PageRank.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Iteration cap of HITS and PageRank.
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum SynthCommand {
    /// Simulate a structural VAR from a JSON coefficient spec.
    Var(SynthVarArgs),
    /// Simulate a price panel with scheduled cross-sectional dispersion.
    Panel(SynthPanelArgs),
}

#[derive(Args, Debug, Serialize)]
struct SynthVarArgs {
    /// JSON with `lags` (list of KxK matrices, row = target), optional
    /// `instantaneous`, `noise_sd`, `names`.
    #[arg(long)]
    spec: PathBuf,
    /// Observations to keep.
    #[arg(long)]
    length: usize,
    #[arg(long)]
    seed: u64,
    /// Output series CSV.
    #[arg(long)]
    out: PathBuf,
    /// Leading observations simulated and discarded.
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    /// Truth edge sets JSON [default: <out> with extension .truth.json].
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SynthPanelArgs {
    /// JSON with `assets`, optional `market_vol`, `base_dispersion` and
    /// `regimes` (`[{start, end, dispersion}]` over return periods).
    #[arg(long)]
    spec: PathBuf,
    /// Number of price dates.
    #[arg(long)]
    length: usize,
    #[arg(long)]
    seed: u64,
    /// Output price panel CSV.
    #[arg(long)]
    out: PathBuf,
    /// Dispersion schedule JSON [default: <out> with extension .truth.json].
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ScoreArgs {
    /// Truth JSON written by `synth var`.
    #[arg(long)]
    truth: PathBuf,
    /// Network JSON written by `egc`.
    #[arg(long)]
    network: PathBuf,
    /// Output JSON [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(2);
    }
    match run::dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
