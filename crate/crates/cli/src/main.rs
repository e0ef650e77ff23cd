use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rpl_core::cache::Cache;
use rpl_core::pipeline::{load_report, render_report};
use rpl_core::{run_pipeline, Error};

#[derive(Parser)]
#[command(name = "rpl", version, about = "Soliton profiles, internal-mode resonances and radiation damping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the stages requested in a TOML config.
    Run { config: PathBuf },
    /// Print a summary of report.json in an output directory.
    Report { dir: PathBuf },
    /// Delete every cached artifact under a cache directory.
    CleanCache { dir: PathBuf },
}

// 1: a stage failed, 2: bad config or unreadable input
fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => match run_pipeline(&config) {
            Ok(outcome) => {
                print!("{}", render_report(&outcome.report));
                println!(
                    "output: {}  cache: {} hits, {} misses",
                    outcome.output_dir.display(),
                    outcome.meta.cache_hits,
                    outcome.meta.cache_misses
                );
                ExitCode::from(outcome.exit_code() as u8)
            }
            Err(e) => fail(&e),
        },
        Command::Report { dir } => match load_report(&dir) {
            Ok(r) => {
                print!("{}", render_report(&r));
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::CleanCache { dir } => match Cache::new(&dir).clear() {
            Ok(n) => {
                println!("removed {n} cached artifacts from {}", dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
