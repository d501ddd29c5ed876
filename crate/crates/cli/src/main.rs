//! labelfuse command-line driver.
//!
//! Three subcommands: `synth` writes a synthetic dataset with ground
//! truth, `run` executes one aggregation method on a label file, `sweep`
//! varies one parameter over synthetic trials and emits a columnar table.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
//! malformed input, dataset too small for the method), 3 numerical
//! failure (moment stage unusable even after fallback, degenerate
//! statistics).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use labelfuse::dataio;
use labelfuse::em::EmRounds;
use labelfuse::error::Error;
use labelfuse::model::ClassPrior;
use labelfuse::run::{self, Method, RunConfig, SweepConfig, SweepVariable, Truth};
use labelfuse::synth::{self, ConfusionRegime, SynthConfig};

#[derive(Parser)]
#[command(
    name = "labelfuse",
    version,
    about = "Crowdsourced label aggregation: spectral initialization plus EM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground truth
    Synth(SynthArgs),
    /// Run an aggregation method on a label file
    Run(RunArgs),
    /// Vary one parameter over synthetic trials and tabulate the results
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of workers
    #[arg(long, default_value_t = 100)]
    workers: usize,
    /// Number of items
    #[arg(long, default_value_t = 1000)]
    items: usize,
    /// Number of classes
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Probability that a worker labels an item
    #[arg(long, default_value_t = 1.0)]
    sparsity: f64,
    /// Class prior as comma-separated weights (default uniform)
    #[arg(long, value_delimiter = ',')]
    prior: Option<Vec<f64>>,
    /// Confusion regime: "paper-binary" or "one-coin:LO,HI"
    #[arg(long, default_value = "paper-binary")]
    regime: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the `worker,item,label` file
    #[arg(long)]
    labels: PathBuf,
    /// Where to write the `item,label` ground-truth file
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    method: Method,
    /// Number of classes
    #[arg(long)]
    k: usize,
    /// EM rounds: a count, or "converge"
    #[arg(long, default_value = "10")]
    em_rounds: EmRounds,
    /// Confusion-matrix clamp threshold
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
    /// Label file to aggregate
    #[arg(long)]
    labels: PathBuf,
    /// Optional ground truth for evaluation
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory for predictions.csv, report.txt, and idmap.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the worker partition (tensor restarts use seed+1)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initialize from one-hot majority votes instead of vote shares
    #[arg(long)]
    hard_votes: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    method: Method,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value = "10")]
    em_rounds: EmRounds,
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Synthetic dataset shape
    #[arg(long, default_value_t = 100)]
    workers: usize,
    #[arg(long, default_value_t = 1000)]
    items: usize,
    #[arg(long, default_value_t = 1.0)]
    sparsity: f64,
    #[arg(long, value_delimiter = ',')]
    prior: Option<Vec<f64>>,
    #[arg(long, default_value = "paper-binary")]
    regime: String,
    /// Which parameter the sweep varies: n | pi | delta | em-rounds
    #[arg(long)]
    variable: SweepVariable,
    /// Comma-separated values for the swept parameter
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Independent synthetic trials per value
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Output file for the table (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.exit_code() == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ParseError { .. }
        | Error::LabelOutOfRange { .. }
        | Error::DuplicateLabel { .. }
        | Error::Io(_)
        | Error::EmptyDataset
        | Error::NoOverlap { .. }
        | Error::TooFewWorkers { .. } => 2,
        Error::InvalidConfig(_) | Error::InvalidRho { .. } => 1,
        _ => 3,
    }
}

/// Writes through a temporary file in the target directory and renames,
/// so readers never observe a half-written file.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Error> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn parse_regime(spec: &str) -> Result<ConfusionRegime, Error> {
    if spec == "paper-binary" {
        return Ok(ConfusionRegime::PaperBinary);
    }
    if let Some(range) = spec.strip_prefix("one-coin:") {
        let parts: Vec<&str> = range.split(',').collect();
        if parts.len() == 2 {
            if let (Ok(lo), Ok(hi)) = (parts[0].parse::<f64>(), parts[1].parse::<f64>()) {
                return Ok(ConfusionRegime::OneCoin { lo, hi });
            }
        }
    }
    Err(Error::InvalidConfig(format!(
        "unknown regime '{spec}' (expected paper-binary or one-coin:LO,HI)"
    )))
}

fn build_prior(weights: Option<Vec<f64>>, k: usize) -> Result<ClassPrior, Error> {
    match weights {
        Some(w) => ClassPrior::new(w),
        None => Ok(ClassPrior::uniform(k)),
    }
}

fn build_synth_config(
    workers: usize,
    items: usize,
    k: usize,
    sparsity: f64,
    prior: Option<Vec<f64>>,
    regime: &str,
    seed: u64,
) -> Result<SynthConfig, Error> {
    Ok(SynthConfig {
        m: workers,
        n: items,
        k,
        sparsity,
        prior: build_prior(prior, k)?,
        regime: parse_regime(regime)?,
        seed,
    })
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let config = build_synth_config(
        args.workers,
        args.items,
        args.k,
        args.sparsity,
        args.prior,
        &args.regime,
        args.seed,
    )?;
    let (labels, model) = synth::generate(&config)?;
    write_atomic(&args.labels, &dataio::render_labels(&labels, None))?;
    if let Some(truth_path) = &args.truth {
        write_atomic(truth_path, &dataio::render_truth(model.truth(), None))?;
    }
    println!(
        "wrote {} labels ({} workers, {} items, k={}) to {}",
        labels.len(),
        labels.num_workers(),
        labels.num_items(),
        labels.num_classes(),
        args.labels.display()
    );
    Ok(())
}

fn build_run_config(
    method: Method,
    k: usize,
    em_rounds: EmRounds,
    threshold: f64,
    seed: u64,
    hard_votes: bool,
) -> RunConfig {
    let mut config = RunConfig::new(method, k);
    config.em_rounds = em_rounds;
    config.delta = threshold;
    config.seed = seed;
    config.mv_hard = hard_votes;
    config
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let (labels, maps) = dataio::read_labels(&args.labels, args.k)?;
    let truth = args
        .truth
        .as_deref()
        .map(|path| -> Result<Truth, Error> {
            let pairs = dataio::read_truth(path)?;
            let by_index = dataio::truth_by_index(&pairs, &maps, labels.num_items(), args.k)?;
            Ok(Truth::from_labels(by_index))
        })
        .transpose()?;
    let config = build_run_config(
        args.method,
        args.k,
        args.em_rounds,
        args.threshold,
        args.seed,
        args.hard_votes,
    );
    let outcome = run::run(&config, &labels, truth.as_ref())?;
    let report = outcome.report.render();
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        write_atomic(
            &dir.join("predictions.csv"),
            &dataio::render_predictions(&outcome.predictions, Some(&maps)),
        )?;
        write_atomic(&dir.join("report.txt"), &report)?;
        write_atomic(&dir.join("idmap.csv"), &dataio::render_id_maps(&maps))?;
    }
    print!("{report}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let config = SweepConfig {
        run: build_run_config(
            args.method,
            args.k,
            args.em_rounds,
            args.threshold,
            args.seed,
            false,
        ),
        synth: build_synth_config(
            args.workers,
            args.items,
            args.k,
            args.sparsity,
            args.prior,
            &args.regime,
            args.seed,
        )?,
        variable: args.variable,
        values: args.values,
        trials: args.trials,
    };
    let rows = run::sweep(&config)?;
    let table = run::render_sweep_table(&config, &rows);
    match &args.out {
        Some(path) => write_atomic(path, &table)?,
        None => print!("{table}"),
    }
    Ok(())
}
