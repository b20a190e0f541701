//! Experiment driver CLI.
//!
//! Exit codes: 0 success, 2 configuration errors (with line-level
//! diagnostics), 1 runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use precache_core::config::ExperimentConfig;
use precache_core::pipeline;

#[derive(Parser)]
#[command(
    name = "precache",
    about = "Speculative embedding precompute simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output_dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the world seed (and multi-seed list) with a single seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Paired baseline/treatment run on one trace; writes report.json,
    /// records.jsonl, baseline_records.jsonl, cycles.jsonl.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Oracle coverage sweep; writes sweep.csv and sweep.json.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated coverage levels in [0, 1], sorted ascending.
        #[arg(long, default_value = "0,0.2,0.5,0.6,1.0")]
        levels: String,
    },
    /// Enrichment ablation grid {none, +agg, +similarity, +both}; writes
    /// ablate.csv and ablate.json.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 1;

fn load_config(common: &CommonArgs) -> Result<(ExperimentConfig, PathBuf), String> {
    let mut config = ExperimentConfig::from_path(&common.config)
        .map_err(|e| format!("{}: {e}", common.config.display()))?;
    if let Some(seed) = common.seed_override {
        config.world.seed = seed;
        config.run.seeds = vec![seed];
        config.validate().map_err(|e| e.to_string())?;
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));
    Ok((config, out))
}

fn parse_levels(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad sweep level {s:?}: {e}"))
        })
        .collect()
}

fn run_simulate(config: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let output = pipeline::simulate_to_dir(config, out)?;
    let t = &output.treatment.report;
    println!(
        "simulate: {} requests, coverage exact {:.4} / effective {:.4} / any {:.4}, \
         bce {:.5} (baseline {:.5}), report in {}",
        t.n_requests_total,
        t.coverage_labeled.exact,
        t.coverage_labeled.effective,
        t.coverage_labeled.any_signal,
        t.bce,
        output.baseline.report.bce,
        out.display()
    );
    Ok(())
}

fn run_sweep(config: &ExperimentConfig, levels: &[f64], out: &Path) -> anyhow::Result<()> {
    let table = pipeline::sweep_to_dir(config, levels, out)?;
    for (level, bce) in table.levels.iter().zip(&table.mean_bce) {
        println!("sweep: level {level} -> mean bce {bce:.5}");
    }
    println!("sweep: table in {}", out.display());
    Ok(())
}

fn run_ablate(config: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let table = pipeline::ablate_to_dir(config, out)?;
    for arm in &table.arms {
        println!(
            "ablate: {} coverage exact {:.4} / effective {:.4} / any {:.4}, bce {:.5}",
            arm.name,
            arm.report.coverage_labeled.exact,
            arm.report.coverage_labeled.effective,
            arm.report.coverage_labeled.any_signal,
            arm.report.bce
        );
    }
    println!("ablate: table in {}", out.display());
    Ok(())
}

fn config_error(message: &str) -> ExitCode {
    eprintln!("config error: {message}");
    ExitCode::from(EXIT_CONFIG)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, levels) = match &cli.command {
        Command::Simulate { common } | Command::Ablate { common } => (common, None),
        Command::Sweep { common, levels } => (common, Some(levels.clone())),
    };
    let levels = match levels.as_deref().map(parse_levels).transpose() {
        Ok(l) => l,
        Err(e) => return config_error(&e),
    };
    let (config, out) = match load_config(common) {
        Ok(pair) => pair,
        Err(e) => return config_error(&e),
    };
    let result = match &cli.command {
        Command::Simulate { .. } => run_simulate(&config, &out),
        Command::Sweep { .. } => run_sweep(&config, &levels.expect("sweep has levels"), &out),
        Command::Ablate { .. } => run_ablate(&config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
