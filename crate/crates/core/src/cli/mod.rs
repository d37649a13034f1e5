//! `optiforest` command line: fit, score, eval, ablate and theory.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error
//! (missing/invalid input, dimension mismatch, unreadable model), 4 internal.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{load_csv, DataMatrix};
use crate::error::Error;
use crate::eval::{ablate, run_experiment, AblationAxis, AblationGrid, DEFAULT_REPEATS};
use crate::forest::{Epsilon, Forest, ForestConfig, Mode};
use crate::lsh_tree::LshParams;
use crate::model::{load_model, save_model};
use crate::theory::{efficiency_curve, theory_report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "optiforest", version, about = "Optimal isolation forest anomaly detector")]
pub struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a forest on a CSV file and write the model.
    Fit(FitArgs),
    /// Score a CSV file with a saved model.
    Score(ScoreArgs),
    /// Repeated fit/score runs against ground-truth labels.
    Eval(EvalArgs),
    /// Sweep branching factor, cut threshold or sample size.
    Ablate(AblateArgs),
    /// Numeric checks of the branching-factor theory.
    Theory(TheoryArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Name of the 0/1 label column (removed from the features).
    #[arg(long = "label-col")]
    pub label_col: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ForestArgs {
    /// JSON forest config; explicit flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of trees [default: 100].
    #[arg(long)]
    pub trees: Option<usize>,
    /// Rows sampled per tree [default: 512].
    #[arg(long = "sample-size")]
    pub sample_size: Option<usize>,
    /// Cut threshold: integer, auto, psi, or e2..e8 (rounded powers of e)
    /// [default: auto, or psi with --mode lsh-only].
    #[arg(long)]
    pub epsilon: Option<String>,
    /// Branching law: finite23, geometric, factorial or fixed:<v>
    /// [default: finite23].
    #[arg(long)]
    pub distribution: Option<String>,
    /// opt-iforest or lsh-only (no learning) [default: opt-iforest].
    #[arg(long)]
    pub mode: Option<String>,
    /// Random seed [default: 42].
    #[arg(long, env = "OPTIFOREST_SEED")]
    pub seed: Option<u64>,
    /// Maximum parallel tree builds (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Target LSH fan-out per node [default: two-to-three-way buckets].
    #[arg(long = "lsh-fanout")]
    pub lsh_fanout: Option<u32>,
    /// Min-max scale features before fitting.
    #[arg(long)]
    pub minmax: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// Model output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Maximum scoring threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,
    /// Report path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// branching, epsilon or sample_size.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated grid (axis default when omitted).
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV table path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Format written to stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// Emit (v, eta(v)) pairs as CSV for this isolation area instead of the
    /// JSON report.
    #[arg(long)]
    pub curve: Option<f64>,
    /// Isolation areas checked by the optimal-branching search.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 6.0, 100.0])]
    pub areas: Vec<f64>,
    /// Tolerance of the optimal-branching search.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) | Error::Domain(_) => EXIT_USAGE,
            Error::Overflow(_) => EXIT_INTERNAL,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

impl ForestArgs {
    /// Resolves the config file and flags into a validated config. Runs
    /// before any input is read.
    pub fn to_config(&self) -> CliResult<ForestConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError {
                    code: EXIT_DATA,
                    message: format!("cannot read config {}: {e}", path.display()),
                })?;
                serde_json::from_str::<ForestConfig>(&text)
                    .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => ForestConfig::default(),
        };
        if let Some(t) = self.trees {
            config.trees = t;
        }
        if let Some(n) = self.sample_size {
            config.sample_size = n;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(m) = &self.mode {
            config.mode = m.parse()?;
            if self.epsilon.is_none() {
                config.epsilon = match config.mode {
                    Mode::OptIForest => Epsilon::Auto,
                    Mode::LshOnly => Epsilon::Psi,
                };
            }
        }
        if let Some(d) = &self.distribution {
            config.distribution = d.parse()?;
        }
        if let Some(e) = &self.epsilon {
            config.epsilon = e.parse()?;
            if config.mode == Mode::LshOnly && config.epsilon != Epsilon::Psi {
                return Err(CliError::usage(
                    "--epsilon conflicts with --mode lsh-only (no cut is taken); omit it or pass psi",
                ));
            }
        }
        if config.mode == Mode::LshOnly && self.distribution.is_some() {
            return Err(CliError::usage(
                "--distribution conflicts with --mode lsh-only (no merging is done)",
            ));
        }
        match self.lsh_fanout {
            None => {}
            Some(v) if v >= 2 => config.lsh = LshParams::with_fanout(v),
            Some(v) => return Err(CliError::usage(format!("--lsh-fanout must be >= 2, got {v}"))),
        }
        if self.minmax {
            config.minmax = true;
        }
        if config.mode == Mode::LshOnly && config.epsilon == Epsilon::Auto {
            config.epsilon = Epsilon::Psi;
        }
        config.validate()?;
        Ok(config)
    }
}

fn load(input: &InputArgs) -> CliResult<DataMatrix> {
    if !input.input.exists() {
        return Err(CliError {
            code: EXIT_DATA,
            message: format!("input file not found: {}", input.input.display()),
        });
    }
    Ok(load_csv(&input.input, input.label_col.as_deref())?)
}

fn write_output(path: Option<&Path>, contents: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, contents)
            .map_err(|e| CliError::internal(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::internal(format!("cannot write to stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::internal(e.to_string()))
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
    pool.install(f)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    model: &'a Path,
    trees: usize,
    psi_effective: usize,
    epsilon_used: usize,
    n_rows: usize,
    n_features: usize,
    mean_branching: f64,
    build_time_s: f64,
    config: &'a ForestConfig,
}

fn cmd_fit(args: &FitArgs, verbose: u8) -> CliResult<()> {
    let config = args.forest.to_config()?;
    let data = load(&args.input)?;
    if verbose > 0 {
        eprintln!("fitting {} trees on {} rows x {} features", config.trees, data.n_rows(), data.n_cols());
    }
    let started = Instant::now();
    let forest = with_jobs(args.forest.jobs, || Ok(Forest::fit(&data, &config)?))?;
    let build_time_s = started.elapsed().as_secs_f64();
    save_model(&forest, &args.out).map_err(|e| CliError::internal(e.to_string()))?;
    let mean_branching =
        forest.trees.iter().map(|t| t.mean_branching()).sum::<f64>() / forest.trees.len() as f64;
    let summary = FitSummary {
        model: &args.out,
        trees: forest.trees.len(),
        psi_effective: forest.psi_effective,
        epsilon_used: forest.epsilon_used,
        n_rows: data.n_rows(),
        n_features: data.n_cols(),
        mean_branching,
        build_time_s,
        config: &forest.config,
    };
    write_output(None, &to_json(&summary)?)
}

pub fn format_scores(scores: &[f64], format: Format) -> CliResult<String> {
    match format {
        Format::Csv => {
            let mut out = String::from("row_index,score\n");
            for (i, s) in scores.iter().enumerate() {
                out.push_str(&format!("{i},{s}\n"));
            }
            Ok(out)
        }
        Format::Json => serde_json::to_string(scores)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| CliError::internal(e.to_string())),
    }
}

fn cmd_score(args: &ScoreArgs, verbose: u8) -> CliResult<()> {
    let forest = load_model(&args.model)?;
    let data = load(&args.input)?;
    if verbose > 0 {
        eprintln!("scoring {} rows with {} trees", data.n_rows(), forest.trees.len());
    }
    if !data.is_empty() && data.n_cols() != forest.n_features {
        return Err(Error::DimensionMismatch {
            expected: forest.n_features,
            got: data.n_cols(),
        }
        .into());
    }
    let scores = with_jobs(args.jobs, || Ok(forest.score_all(&data)?))?;
    write_output(args.out.as_deref(), &format_scores(&scores, args.format)?)
}

fn cmd_eval(args: &EvalArgs, verbose: u8) -> CliResult<()> {
    let config = args.forest.to_config()?;
    if args.repeats < 1 {
        return Err(CliError::usage("--repeats must be >= 1"));
    }
    let data = load(&args.input)?;
    if data.labels().is_none() {
        return Err(CliError {
            code: EXIT_DATA,
            message: "eval needs ground-truth labels; pass --label-col".into(),
        });
    }
    if verbose > 0 {
        eprintln!("evaluating {} runs", args.repeats);
    }
    let report = with_jobs(args.forest.jobs, || Ok(run_experiment(&data, &config, args.repeats)?))?;
    write_output(args.out.as_deref(), &to_json(&report)?)
}

fn cmd_ablate(args: &AblateArgs, verbose: u8) -> CliResult<()> {
    let config = args.forest.to_config()?;
    let axis: AblationAxis = args.axis.parse()?;
    let grid = match &args.grid {
        Some(g) => AblationGrid::parse(axis, g)?,
        None => AblationGrid::default_for(axis),
    };
    if args.repeats < 1 {
        return Err(CliError::usage("--repeats must be >= 1"));
    }
    let data = load(&args.input)?;
    if data.labels().is_none() {
        return Err(CliError {
            code: EXIT_DATA,
            message: "ablate needs ground-truth labels; pass --label-col".into(),
        });
    }
    if verbose > 0 {
        eprintln!("ablating {axis} over {grid:?}");
    }
    let table = with_jobs(args.forest.jobs, || Ok(ablate(&data, &config, &grid, args.repeats)?))?;
    let json = to_json(&table)?;
    let csv = table.to_csv();
    if let Some(p) = &args.out {
        write_output(Some(p), &json)?;
    }
    if let Some(p) = &args.csv {
        write_output(Some(p), &csv)?;
    }
    let stdout = match args.format {
        Format::Json => json,
        Format::Csv => csv,
    };
    write_output(None, &stdout)
}

fn cmd_theory(args: &TheoryArgs) -> CliResult<()> {
    if let Some(area) = args.curve {
        let curve = efficiency_curve(area, 1.1, 10.0, 0.01)?;
        let mut out = String::from("v,eta\n");
        for (v, eta) in curve {
            out.push_str(&format!("{v},{eta}\n"));
        }
        return write_output(args.out.as_deref(), &out);
    }
    let report = theory_report(&args.areas, args.tol)?;
    write_output(args.out.as_deref(), &to_json(&report)?)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, cli.verbose),
        Command::Score(a) => cmd_score(a, cli.verbose),
        Command::Eval(a) => cmd_eval(a, cli.verbose),
        Command::Ablate(a) => cmd_ablate(a, cli.verbose),
        Command::Theory(a) => cmd_theory(a),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
