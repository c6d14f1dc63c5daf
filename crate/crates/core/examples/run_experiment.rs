//! Runs the bundled sample experiment through the same entry point as the
//! `run-experiment` subcommand and prints the aggregated report.
//!
//! cargo run --release --example run_experiment -- [config] [output-dir]

use std::path::PathBuf;

use codeswitch::cli::{run_experiment, RunArgs};

fn main() -> codeswitch::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/sample/config.json"));
    let output_dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("codeswitch-sample"));

    let outcome = run_experiment(&RunArgs {
        config,
        seeds: None,
        output_dir: Some(output_dir),
        workers: Some(2),
    })?;
    let report = &outcome.run.report;
    for s in &report.per_seed {
        println!("seed {:>3}: test {} {:.3}", s.seed, report.metric.name(), s.score);
    }
    println!("mean {:.3} ± {:.3}, max {:.3}", report.mean, report.std, report.max);
    println!("artifacts in {}", outcome.output_dir.display());
    Ok(())
}
