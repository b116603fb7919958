use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nmcorr::config::ScenarioConfig;
use nmcorr::runner::{self, RunOptions};

/// Multitime correlators of open quantum systems with finite memory.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; defaults to the scenario's `output_dir` or `./out`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for cached dynamical maps.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Seed for randomized scenarios.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write CSVs, a manifest and a timing sidecar.
    Run { config: PathBuf },
    /// Time every configured engine and write a comparison table.
    Bench { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(runner::EXIT_VALIDATION as u8);
        }
    }
    let path = match &cli.command {
        Command::Run { config } | Command::Bench { config } => config,
    };
    let config = match ScenarioConfig::from_path(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(runner::exit_code(&e) as u8);
        }
    };
    let options = RunOptions {
        output_dir: cli
            .output_dir
            .clone()
            .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out")),
        cache_dir: cli.cache_dir.clone(),
        seed: cli.seed,
    };
    let code = match cli.command {
        Command::Run { .. } => match runner::run_scenario(&config, &options) {
            Ok(outcome) => {
                for a in &outcome.agreements {
                    let verdict = if a.pass { "ok" } else { "FAILED" };
                    println!(
                        "{}: {:.3e} (tolerance {:.1e}) {verdict}",
                        a.metric, a.value, a.tolerance
                    );
                }
                println!(
                    "wrote {} files to {}",
                    outcome.files.len(),
                    options.output_dir.display()
                );
                outcome.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                runner::exit_code(&e)
            }
        },
        Command::Bench { .. } => match runner::bench_report(&config, &options) {
            Ok(rows) => {
                print!("{}", runner::format_bench(&rows));
                runner::EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                runner::exit_code(&e)
            }
        },
    };
    ExitCode::from(code as u8)
}
