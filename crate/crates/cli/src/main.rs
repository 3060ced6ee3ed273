use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use safecast::calibration::{ScaleSelection, SelectionResult};
use safecast::data::{ingest_csv, write_csv, CsvSchema, Trace};
use safecast::experiment::{
    default_epsilons, emit_report, load_trace, run_experiment, run_frontier, DatasetConfig,
    ExperimentBundle, ExperimentConfig, Format,
};

#[derive(Parser)]
#[command(name = "safecast", version, about = "Risk-budgeted safe throughput forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::from_file(&self.config)
            .with_context(|| format!("stage `config` failed for {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a CSV trace and print a summary; optionally write it back
    /// sorted and normalized.
    Ingest {
        csv: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate the synthetic trace described by a config.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train, calibrate, evaluate and write a run directory.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the risk budget.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Sweep the risk budget and write the frontier table.
    Frontier {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Comma-separated budgets, increasing.
        #[arg(long, value_delimiter = ',')]
        epsilon: Vec<f64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Re-emit the tables of a finished run.
    Report {
        run_dir: PathBuf,
        /// Destination directory; defaults to the run directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Print a saved selection report.
    Inspect { path: PathBuf },
}

fn summarize(trace: &Trace) -> serde_json::Value {
    let y = trace.throughput();
    let ts = trace.timestamps();
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    serde_json::json!({
        "name": trace.name(),
        "rows": trace.len(),
        "first_timestamp": ts.first(),
        "last_timestamp": ts.last(),
        "mean_throughput": trace.mean_throughput(),
        "min_throughput": min,
        "max_throughput": max,
        "aux": trace.aux().keys().map(|k| k.column()).collect::<Vec<_>>(),
    })
}

fn write_trace(trace: &Trace, path: &Path) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(trace, file)?;
    Ok(())
}

fn print_selection(selection: &SelectionResult, scale: Option<&ScaleSelection>) {
    println!("budget epsilon     {}", selection.epsilon);
    println!("penalty lambda     {}", selection.lambda);
    println!("regime             {:?}", selection.regime);
    println!(
        "boundary           [{}, {}]",
        selection.boundary.0, selection.boundary.1
    );
    println!("trainings          {}", selection.n_trainings);
    println!("{:>10} {:>12} {:>10}  stage", "tau", "mae", "over_rate");
    for e in &selection.coarse {
        println!("{:>10.4} {:>12.4} {:>10.4}  coarse", e.tau, e.mae, e.over_rate);
    }
    for e in &selection.fine_grid {
        let mark = if e.tau == selection.tau_star { "  <- selected" } else { "" };
        println!("{:>10.4} {:>12.4} {:>10.4}  fine{mark}", e.tau, e.mae, e.over_rate);
    }
    println!(
        "tau*               {} (feasible: {}, fallback: {})",
        selection.tau_star, selection.feasible, selection.fallback_used
    );
    if let Some(s) = scale {
        println!(
            "budget-scale c*    {} (feasible: {}, mae {:.4}, over_rate {:.4})",
            s.c_star, s.feasible, s.mae, s.over_rate
        );
    }
}

fn inspect(path: &Path) -> Result<()> {
    let file = if path.is_dir() {
        path.join("selection.json")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let selection: SelectionResult = serde_json::from_value(value["selection"].clone())
        .with_context(|| format!("{} is not a selection report", file.display()))?;
    let scale: Option<ScaleSelection> = serde_json::from_value(value["scale"].clone())?;
    print_selection(&selection, scale.as_ref());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { csv, output } => {
            let trace = ingest_csv(&csv, &CsvSchema::default())
                .map_err(|e| anyhow::anyhow!("stage `ingest` failed: {e}"))?;
            println!("{}", serde_json::to_string_pretty(&summarize(&trace))?);
            if let Some(out) = output {
                write_trace(&trace, &out)?;
            }
        }
        Command::Synth { config, output } => {
            let config = config.load()?;
            if !matches!(config.dataset, DatasetConfig::Synthetic(_)) {
                bail!("stage `synth` failed: config dataset is not synthetic");
            }
            let trace = load_trace(&config)
                .map_err(|e| anyhow::anyhow!("stage `synth` failed: {e}"))?;
            write_trace(&trace, &output)?;
            println!("{}", serde_json::to_string_pretty(&summarize(&trace))?);
        }
        Command::Run {
            config,
            output,
            epsilon,
            format,
        } => {
            let mut config = config.load()?;
            if let Some(eps) = epsilon {
                config.risk = config.risk.with_epsilon(eps);
                config.validate()?;
            }
            if let Some(out) = output {
                config.output_dir = out;
            }
            let experiment = run_experiment(&config)?;
            let written = experiment.write(&config.output_dir, format.into())?;
            for path in written {
                println!("{}", path.display());
            }
        }
        Command::Frontier {
            config,
            output,
            epsilon,
            format,
        } => {
            let mut config = config.load()?;
            if let Some(out) = output {
                config.output_dir = out;
            }
            let epsilons = if epsilon.is_empty() {
                default_epsilons()
            } else {
                epsilon
            };
            let frontier = run_frontier(&config, &epsilons)?;
            for path in frontier.write(&config.output_dir, format.into())? {
                println!("{}", path.display());
            }
        }
        Command::Report {
            run_dir,
            output,
            format,
        } => {
            let bundle = ExperimentBundle::load(run_dir.join("bundle.json"))
                .map_err(|e| anyhow::anyhow!("stage `report` failed: {e}"))?;
            let dest = output.unwrap_or(run_dir);
            for path in emit_report(&bundle, &dest, format.into())? {
                println!("{}", path.display());
            }
        }
        Command::Inspect { path } => inspect(&path)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
