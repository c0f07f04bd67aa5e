//! `humeval`: operator and developer command line for the leaderboard.

mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "humeval", version, about = "Human evaluation leaderboard tools")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Service configuration file.
    #[arg(long, global = true, env = "HUMEVAL_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write the report as JSON to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CombineArg {
    Mean,
    MajorityVote,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a predictions file against a task's test set.
    Validate {
        #[arg(long)]
        task: String,
        /// Line-delimited `{"id", "prediction"}` records.
        #[arg(long)]
        predictions: PathBuf,
        /// Line-delimited instances; defaults to the configured file.
        #[arg(long)]
        instances: Option<PathBuf>,
    },
    /// Submit predictions to the local data directory.
    Submit {
        #[arg(long)]
        task: String,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        submitter: String,
        #[arg(long)]
        system_name: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Finish annotation immediately with this many simulated
        /// annotators on a virtual clock.
        #[arg(long)]
        simulate_crowd: Option<usize>,
    },
    /// Instances and cost needed for a standard-error target or budget.
    PlanBudget {
        #[arg(long)]
        cost_per_instance: f64,
        #[arg(long, conflicts_with = "budget", required_unless_present = "budget")]
        target_se: Option<f64>,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long, default_value_t = 1)]
        labels_per_instance: usize,
        #[arg(long, default_value_t = humeval_core::planner::DEFAULT_BATCH_SIZE)]
        granularity: usize,
        /// Size of the test set the subset is drawn from.
        #[arg(long)]
        available: Option<usize>,
    },
    /// Aggregate annotation records into per-aspect scores with intervals.
    Score {
        #[arg(long)]
        task: String,
        /// Line-delimited annotation records of one submission.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, value_enum, default_value_t = CombineArg::Mean)]
        combine: CombineArg,
        /// 1 scores each instance from a single label.
        #[arg(long, default_value_t = 1)]
        labels_per_instance: usize,
        #[arg(long, default_value_t = humeval_core::uncertainty::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = humeval_core::uncertainty::DEFAULT_LEVEL)]
        level: f64,
    },
    /// Percentile bootstrap interval for the mean of a list of scores.
    Bootstrap {
        /// Numbers separated by whitespace, or a JSON array.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = humeval_core::uncertainty::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = humeval_core::uncertainty::DEFAULT_LEVEL)]
        level: f64,
    },
    /// Variance of repeated evaluations under each labeling policy.
    SimulateReproducibility {
        #[arg(long, default_value_t = 360)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 500)]
        rounds: usize,
        #[arg(long, default_value_t = 3)]
        days: usize,
        #[arg(long, default_value_t = 0.0)]
        drift: f64,
    },
    /// Automatic metrics for line-aligned hypothesis and reference files.
    Metrics {
        #[arg(long)]
        hypotheses: PathBuf,
        /// Repeat for multiple references per line.
        #[arg(long = "references", required = true)]
        references: Vec<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Seconds between pipeline steps; 0 leaves stepping to the admin
        /// endpoint.
        #[arg(long, default_value_t = 60)]
        step_interval: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.global, cli.command) {
        Ok(report) => {
            if let Some(path) = &cli.global.out {
                let json = serde_json::to_string_pretty(&report.json).expect("report serializes") + "\n";
                if let Err(e) = std::fs::write(path, json) {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
            match cli.global.format {
                Format::Text => print!("{}", report.text),
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&report.json).expect("report serializes")
                ),
            }
            if report.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
