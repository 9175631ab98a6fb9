//! `synth`: scenario-driven controller synthesis with certified
//! satisfaction lower bounds.
//!
//! Exit codes: 0 on a full pass, 2 when the Monte Carlo bound check fails,
//! 1 on any error. Log verbosity is controlled by `RUST_LOG` only.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use subsim_core::pipeline::{run_pipeline, PipelineConfig, Stage};
use subsim_core::scenario::load_scenario;

#[derive(Parser)]
#[command(name = "synth", version, about = "Certified controller synthesis for uncertain stochastic networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthesis pipeline on a scenario file.
    Run {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Comma-separated stage filter
        /// (certify,abstract,synthesize,compose,validate).
        #[arg(long)]
        stages: Option<String>,
        /// Output directory (defaults to the scenario's `output_dir`, else
        /// `./out/<scenario-name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validation seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread count (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            stages,
            out,
            seed,
            threads,
        } => match run(scenario, stages, out, seed, threads) {
            Ok(bound_failed) => {
                if bound_failed {
                    ExitCode::from(2)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                let mut cause = e.source();
                while let Some(c) = cause {
                    eprintln!("  caused by: {c}");
                    cause = c.source();
                }
                ExitCode::from(1)
            }
        },
    }
}

fn run(
    scenario_path: PathBuf,
    stages: Option<String>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<bool, Box<dyn std::error::Error>> {
    if let Some(n) = threads {
        configure_threads(n);
    }
    let stages = match stages {
        None => Stage::ALL.to_vec(),
        Some(s) => Stage::parse_list(&s)?,
    };
    let bytes = std::fs::read(&scenario_path)?;
    let scenario = load_scenario(&scenario_path)?;
    let out_dir = out
        .or_else(|| scenario.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
    log::info!(
        "scenario `{}`: {} subsystem(s), stages {:?}, out {}",
        scenario.name,
        scenario.subsystems.len(),
        stages,
        out_dir.display()
    );
    let outcome = run_pipeline(
        &scenario,
        &bytes,
        &PipelineConfig {
            out_dir: out_dir.clone(),
            stages,
            seed_override: seed,
        },
    )?;
    if let Some(bounds) = &outcome.global_bounds {
        for entry in &bounds.per_initial_state {
            println!(
                "global bound {:.6} at {:?}",
                entry.bound.combined, entry.initial_state
            );
        }
    }
    if let Some(v) = &outcome.validation {
        for r in &v.records {
            println!(
                "validate: initial {} theta {}: bound {:.6}, empirical {:.6} (wilson low {:.6}) -> {}",
                r.initial_index,
                r.theta_index,
                r.bound,
                r.run.rate,
                r.run.wilson_low,
                if r.check.pass { "pass" } else { "FAIL" }
            );
        }
        println!(
            "validation: {}/{} checks passed",
            v.records.len() - v.failures,
            v.records.len()
        );
    }
    println!("artifacts in {}", out_dir.display());
    Ok(outcome.bound_check_failed())
}

#[cfg(feature = "parallel")]
fn configure_threads(n: usize) {
    if n > 0 {
        if let Err(e) = rayon_global(n) {
            log::warn!("thread pool already initialized: {e}");
        }
    }
}

#[cfg(feature = "parallel")]
fn rayon_global(n: usize) -> Result<(), Box<dyn std::error::Error>> {
    // reach rayon through the core crate's dependency
    subsim_core::par::build_global_pool(n)?;
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_n: usize) {
    log::warn!("built without the `parallel` feature; --threads is ignored");
}
