//! Command-line entry point: serve the HTTP API or run the benchmark grid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stateplane::bench::suite::{run_ablation, run_suite, write_results, BenchConfig};
use stateplane::http::{serve, ServerConfig};

#[derive(Parser)]
#[command(name = "stateplane", about = "Governed cognitive state service and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API over a persistent store.
    Serve {
        /// Server configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Directory holding the append-only log and snapshots.
        #[arg(long)]
        store_dir: PathBuf,
        /// TCP port to listen on.
        #[arg(long)]
        port: u16,
    },
    /// Run or ablate the deterministic benchmark grid.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run the full grid and write results.csv plus summary.md.
    Run {
        /// Benchmark configuration file (JSON); defaults apply if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Rerun the service rows with one component disabled.
    Ablate {
        /// Component to disable: boundary, salience, write_gate, decay,
        /// intent, or mmr.
        #[arg(long)]
        disable: String,
        /// Benchmark configuration file (JSON); defaults apply if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

fn load_bench_config(path: Option<&PathBuf>) -> Result<BenchConfig, String> {
    match path {
        Some(p) => BenchConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(BenchConfig::default()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), String> = match cli.command {
        Command::Serve { config, store_dir, port } => {
            let cfg = match ServerConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: cannot load {}: {e}", config.display());
                    return ExitCode::FAILURE;
                }
            };
            let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
            runtime
                .block_on(serve(cfg, &store_dir, port))
                .map_err(|e| e.to_string())
        }
        Command::Bench { command: BenchCommand::Run { config, out } } => {
            load_bench_config(config.as_ref()).and_then(|cfg| {
                let rows = run_suite(&cfg).map_err(|e| e.to_string())?;
                write_results(&rows, &out).map_err(|e| e.to_string())?;
                println!("wrote {} rows to {}", rows.len(), out.display());
                Ok(())
            })
        }
        Command::Bench { command: BenchCommand::Ablate { disable, config, out } } => {
            load_bench_config(config.as_ref()).and_then(|cfg| {
                let rows = run_ablation(&cfg, &disable).map_err(|e| e.to_string())?;
                let dir = out.join(format!("ablate-{disable}"));
                write_results(&rows, &dir).map_err(|e| e.to_string())?;
                println!("wrote {} rows to {}", rows.len(), dir.display());
                Ok(())
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
