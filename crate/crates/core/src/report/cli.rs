//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::analysis::{analyze, AnalysisConfig, FigureInput};
use super::csv_io::{read_long_csv, Mode};
use crate::error::{Error, Result};
use crate::pooling::PoolMethod;
use crate::simulation::{build_scenario, large_sample_weights, run_study, ScenarioId, SimConfig, WeightBasis};

#[derive(Debug, Parser)]
#[command(name = "multiverse", version, about = "Aggregate effect estimates across analysis pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate, test and pool a long-format dataset.
    Analyze(AnalyzeArgs),
    /// Run the simulation study and write its summary table.
    Simulate(SimulateArgs),
    /// Print large-sample pooling weights of a scenario, in percent.
    Weights(WeightsArgs),
    /// Re-render the figures of a saved report.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = ["one-sample", "two-sample"])]
    mode: String,
    #[arg(long, allow_negative_numbers = true)]
    reference: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bootstrap replicates for the proportion estimator.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// s1, s2, s3 or all
    #[arg(long, default_value = "all")]
    scenario: String,
    /// Subjects per group, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    beta: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the per-replicate critical value and proportion estimate.
    #[arg(long)]
    no_eta: bool,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct WeightsArgs {
    #[arg(long)]
    scenario: String,
    /// Covariance the weights are computed from: noise or estimate.
    #[arg(long, default_value = "noise")]
    basis: String,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Directory written by `analyze`.
    #[arg(long)]
    report_dir: PathBuf,
    /// Defaults to the report directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Entry point used by the binary.
pub fn run() -> i32 {
    run_with_io(std::env::args(), &mut std::io::stdout(), &mut std::io::stderr())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run_with_io<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let msg = e.render().to_string();
                    let _ = writeln!(err, "ERROR[1]: {}", msg.trim_end());
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let _ = writeln!(err, "ERROR[{code}]: {e}");
            code
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::Usage("--threads must be positive".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Usage(e.to_string()))?
            .install(f),
    }
}

fn usage(e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::Usage(m),
        other => other,
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Analyze(a) => {
            let mode: Mode = a.mode.parse()?;
            let cfg = AnalysisConfig {
                mode,
                reference: a.reference,
                alpha: a.alpha,
                seed: a.seed,
                bootstrap: a.bootstrap,
                ..AnalysisConfig::default()
            };
            let data = read_long_csv(&a.input, mode, a.reference)?;
            let report = with_threads(a.threads, || analyze(&data, &cfg))?;
            report.write(&a.out_dir)
        }
        Command::Simulate(a) => {
            let defaults = SimConfig::default();
            let scenarios = if a.scenario == "all" {
                ScenarioId::ALL.to_vec()
            } else {
                vec![a.scenario.parse().map_err(usage)?]
            };
            let config = SimConfig {
                scenarios,
                n_grid: a.n.unwrap_or(defaults.n_grid.clone()),
                betas: a.beta.unwrap_or(defaults.betas.clone()),
                replicates: a.replicates,
                seed: a.seed,
                eta: if a.no_eta { None } else { defaults.eta },
                ..defaults
            };
            let results = with_threads(a.threads, || run_study(&config).map_err(usage))?;
            let csv = results.to_csv();
            match a.out {
                Some(path) => std::fs::write(&path, csv)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
                None => out.write_all(csv.as_bytes()).map_err(Error::from),
            }
        }
        Command::Weights(a) => {
            let id: ScenarioId = a.scenario.parse().map_err(usage)?;
            let basis: WeightBasis = a.basis.parse().map_err(usage)?;
            let table = large_sample_weights(&build_scenario(id), basis)?;
            let names: Vec<&str> = PoolMethod::ALL.iter().map(|m| m.name()).collect();
            writeln!(out, "pipeline,{}", names.join(","))?;
            let j = table.rows[0].1.len();
            for k in 0..j {
                let cells: Vec<String> = PoolMethod::ALL
                    .iter()
                    .map(|&m| format!("{:.2}", 100.0 * table.weights(m)[k]))
                    .collect();
                writeln!(out, "p{},{}", k + 1, cells.join(","))?;
            }
            Ok(())
        }
        Command::Plot(a) => {
            let fig = FigureInput::load(&a.report_dir)?;
            fig.write(a.out_dir.as_ref().unwrap_or(&a.report_dir))
        }
    }
}
