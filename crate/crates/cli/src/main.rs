use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradnoise_cli::commands;
use gradnoise_cli::export::{export, Format};
use gradnoise_cli::sweep::run_sweep;
use gradnoise_cli::{parse_config, CliError, ExperimentConfig};

const DEFAULT_OUT: &str = "gradnoise-out";

/// Gradient noise scale experiments on desk-scale tasks.
#[derive(Debug, Parser)]
#[command(name = "gradnoise", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long, env = "GRADNOISE_OUT")]
    out: Option<PathBuf>,
    /// Replaces the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Batch-size × learning-rate sweep, Pareto fronts and B_crit per goal.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads for training runs.
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// One fixed-schedule run with noise-scale tracking.
    MeasureNoise {
        #[command(flatten)]
        common: Common,
        /// Global batch size (default: the first configured one).
        #[arg(long)]
        batch_size: Option<usize>,
        /// Learning rate (default: the rule's central rate at that batch).
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Optimal one-step improvement versus batch size, with the fitted curve.
    DeltaL {
        #[command(flatten)]
        common: Common,
    },
    /// Training with the batch size adapted to the tracked noise scale.
    Adaptive {
        #[command(flatten)]
        common: Common,
    },
    /// Learning-rate / batch perturbation within a single run.
    Temperature {
        #[command(flatten)]
        common: Common,
    },
    /// Update-optimality ratio and gradient autocorrelation.
    Diagnose {
        #[command(flatten)]
        common: Common,
    },
    /// Export tables from an output directory.
    Export {
        /// Output directory to read (and write `export/` into).
        #[arg(long, env = "GRADNOISE_OUT", default_value = DEFAULT_OUT)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| CliError::io(format!("reading {}", common.config.display()), e))?;
    let mut config = parse_config(&text)?;
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    let out = common.out.clone().or_else(|| config.out_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok((config, out))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sweep { common, jobs } => {
            let (config, out) = load(&common)?;
            let summary = run_sweep(&config, &out, jobs)?;
            println!("runs: {} trained, {} reused", summary.trained, summary.reused);
            for f in &summary.failures {
                eprintln!("warning: batch size {}: {}", f.batch_size, f.error);
            }
            for r in &summary.reports {
                match (&r.fit, &r.fit_error) {
                    (Some(fit), _) => println!(
                        "goal {} (threshold {}): B_crit {:.4} S_min {:.4} E_min {:.4} from {} points",
                        r.goal_index,
                        r.goal.threshold,
                        fit.b_crit,
                        fit.s_min,
                        fit.e_min,
                        r.points.len()
                    ),
                    (None, e) => println!(
                        "goal {} (threshold {}): no fit ({})",
                        r.goal_index,
                        r.goal.threshold,
                        e.as_deref().unwrap_or("unknown")
                    ),
                }
            }
            report_out(&out);
        }
        Command::MeasureNoise { common, batch_size, lr } => {
            let (config, out) = load(&common)?;
            print_json(&commands::measure_noise(&config, &out, batch_size, lr)?)?;
            report_out(&out);
        }
        Command::DeltaL { common } => {
            let (config, out) = load(&common)?;
            print_json(&commands::delta_l(&config, &out)?)?;
            report_out(&out);
        }
        Command::Adaptive { common } => {
            let (config, out) = load(&common)?;
            let r = commands::adaptive(&config, &out)?;
            println!(
                "adaptive: {} steps, {} examples, {} re-estimations, exchange rate {:.4}",
                r.steps,
                r.examples,
                r.decisions.len(),
                r.exchange_rate
            );
            report_out(&out);
        }
        Command::Temperature { common } => {
            let (config, out) = load(&common)?;
            print_json(&commands::temperature(&config, &out)?)?;
            report_out(&out);
        }
        Command::Diagnose { common } => {
            let (config, out) = load(&common)?;
            let r = commands::diagnose(&config, &out)?;
            println!("mean update-optimality ratio: {:.4}", r.mean_ratio);
            for lc in &r.autocorrelation {
                println!("lag {}: autocorrelation {:.4} over {} pairs", lc.lag, lc.correlation, lc.pairs);
            }
            report_out(&out);
        }
        Command::Export { out, format } => {
            let summary = export(&out, format)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            for f in &summary.written {
                println!("{}", out.join(f).display());
            }
        }
    }
    Ok(())
}

fn report_out(out: &Path) {
    println!("results in {}", out.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
