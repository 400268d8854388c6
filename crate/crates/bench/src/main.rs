use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use vi_bench::config::ExperimentConfig;
use vi_bench::experiment::{probe, run_experiment};
use vi_bench::report::report_dir;
use vi_bench::BenchError;

/// Extragradient sliding benchmarks.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write CSVs plus summary.json.
    Run { config: PathBuf },
    /// Compare the runs in an output directory.
    Report { dir: PathBuf },
    /// Sampled Lipschitz and monotonicity checks on the first seed's instance.
    Probe {
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => ExperimentConfig::load(&config).and_then(|c| {
            let outcome = run_experiment(&c)?;
            for path in &outcome.csv_paths {
                println!("{}", path.display());
            }
            println!("{}", outcome.summary_path.display());
            if outcome.failures.is_empty() {
                Ok(())
            } else {
                Err(BenchError::Numeric(outcome.failures.join("; ")))
            }
        }),
        Command::Report { dir } => report_dir(&dir).map(|table| print!("{table}")),
        Command::Probe { config, trials } => {
            ExperimentConfig::load(&config).and_then(|c| probe(&c, trials)).map(|text| print!("{text}"))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
