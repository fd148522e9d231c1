//! `eigenshift` command line.
//!
//! Exit status: 0 on success, 1 when a deterministic claim is violated,
//! 2 on any other error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use eigenshift::error::{Error, Result};
use eigenshift::harness::record::{records_to_csv, write_records, TrialRecord, COLUMNS};
use eigenshift::harness::summary::write_summary;
use eigenshift::harness::{run_study, run_suite, ExperimentConfig, SuiteSizes, Tolerances, SEED_ENV};
use eigenshift::models::{PerturbedPair, Provenance};
use eigenshift::spectral::{IndexSet, SymMatrix};

#[derive(Parser)]
#[command(
    name = "eigenshift",
    version,
    about = "Eigenspace perturbation bounds and Monte Carlo validation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every bound for the pair (A, B) read from matrix files.
    Bound {
        a: PathBuf,
        b: PathBuf,
        /// Index set `I`, e.g. `1..3` or `1,2,5`.
        #[arg(long, default_value = "1")]
        set: String,
        /// Output format (default: one `name value` line per quantity).
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Run the study described by a TOML configuration file.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory for `records.csv` and `summary.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tolerance_slope: Option<f64>,
        /// With `--out`: write only this artifact. Without: what to print (default json).
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Run the deterministic property suite.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Write the suite summary JSON to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(violations) => {
            eprintln!("{violations} deterministic violation(s)");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u64> {
    match cli.command {
        Command::Bound { a, b, set, format } => bound(&a, &b, &set, format),
        Command::Simulate {
            config,
            seed,
            trials,
            workers,
            out,
            tolerance_slope,
            format,
        } => {
            let mut cfg = ExperimentConfig::read(&config)?;
            cfg.apply_env()?;
            if let Some(s) = seed {
                cfg.seed_base = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(t) = tolerance_slope {
                cfg.tolerances.slope = t;
            }
            if out.is_some() {
                cfg.output = out;
            }
            cfg.validate()?;
            let output = run_study(&cfg)?;
            match &cfg.output {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                        path: dir.clone(),
                        source: e,
                    })?;
                    if format != Some(Format::Json) {
                        write_records(&output.records, dir.join("records.csv"))?;
                    }
                    if format != Some(Format::Csv) {
                        write_summary(&output.summary, dir.join("summary.json"))?;
                    }
                }
                None => match format {
                    Some(Format::Csv) => print!("{}", records_to_csv(&output.records)),
                    _ => println!("{}", output.summary.to_json()),
                },
            }
            Ok(output.deterministic_violations())
        }
        Command::Verify {
            seed,
            workers,
            out,
            format,
        } => {
            let mut seed_base = 0;
            if let Ok(v) = std::env::var(SEED_ENV) {
                seed_base = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
            }
            if let Some(s) = seed {
                seed_base = s;
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers.unwrap_or(0))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            let report = pool.install(|| run_suite(seed_base, &SuiteSizes::default(), Tolerances::default().identity));
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                let path = dir.join("suite.json");
                std::fs::write(&path, json.clone() + "\n").map_err(|e| Error::Io { path, source: e })?;
            }
            if format == Some(Format::Json) {
                println!("{json}");
            } else {
                println!(
                    "{:<18} {:>8} {:>10} {:>14}",
                    "section", "checked", "violations", "worst_margin"
                );
                for s in &report.sections {
                    println!(
                        "{:<18} {:>8} {:>10} {:>14.3e}",
                        s.name, s.checked, s.violations, s.worst_margin
                    );
                }
            }
            Ok(report.total_violations())
        }
    }
}

fn bound(a: &Path, b: &Path, set: &str, format: Option<Format>) -> Result<u64> {
    let sigma = SymMatrix::read(a)?;
    let sigma_hat = SymMatrix::read(b)?;
    let set = IndexSet::parse(set)?;
    set.check_within(sigma.dim())?;
    let pair = PerturbedPair::new(sigma, sigma_hat, Provenance::fixed("cli"))?;
    let record = TrialRecord::evaluate(0, 0, "fixed", 0.0, &pair, &set, None);
    let fields = record.fields();
    match format {
        Some(Format::Csv) => print!("{}", records_to_csv(std::slice::from_ref(&record))),
        Some(Format::Json) => {
            let map: serde_json::Map<String, serde_json::Value> = COLUMNS
                .iter()
                .zip(&fields)
                .skip(5)
                .map(|(k, v)| (k.to_string(), json_value(v)))
                .collect();
            println!("{}", serde_json::to_string_pretty(&map).expect("map serializes"));
        }
        None => {
            for (k, v) in COLUMNS.iter().zip(&fields).skip(5) {
                println!("{k:<20} {v}");
            }
        }
    }
    if record.failed {
        return Err(Error::InvalidParameter("could not evaluate the pair".into()));
    }
    Ok(record.violations().len() as u64)
}

/// A CSV cell as JSON: finite numbers and booleans natively, empty as
/// `null`, anything else (`inf`, `NaN`) as a string.
fn json_value(cell: &str) -> serde_json::Value {
    use serde_json::Value;
    match cell {
        "" => Value::Null,
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => cell
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map_or_else(|| Value::String(cell.to_string()), Value::Number),
    }
}
