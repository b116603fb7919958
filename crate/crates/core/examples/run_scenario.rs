//! Run a scenario file programmatically and print its agreement checks.
//!
//! `cargo run --release --example run_scenario -- scenarios/g1.toml`

use std::path::PathBuf;

use nmcorr::config::ScenarioConfig;
use nmcorr::runner::{run_scenario, RunOptions};

fn main() -> nmcorr::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/g1.toml")));
    let config = ScenarioConfig::from_path(&path)?;
    let options = RunOptions {
        output_dir: std::env::temp_dir().join("nmcorr-run-scenario"),
        ..Default::default()
    };
    let outcome = run_scenario(&config, &options)?;
    for a in &outcome.agreements {
        println!("{}: {:.2e} < {:.0e}: {}", a.metric, a.value, a.tolerance, a.pass);
    }
    for t in &outcome.timings {
        println!(
            "{:<10} {:.4} s, {:.0} ps propagated",
            t.engine, t.wall_time_s, t.temporal_volume_ps
        );
    }
    println!("artifacts in {}", options.output_dir.display());
    Ok(())
}
