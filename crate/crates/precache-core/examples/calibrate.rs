//! Calibration helper: prints the 6-hour candidate-overlap statistics for a
//! config, and optionally the paired-run coverage figures used to pin the
//! shipped defaults.
//!
//! Usage: cargo run --release -p precache-core --example calibrate -- <config.json> [--full]

use precache_core::config::ExperimentConfig;
use precache_core::pipeline;
use precache_core::world::{generate_world, mean_candidate_overlap, RequestGenerator};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: calibrate <config.json> [--full]");
    let full = args.next().as_deref() == Some("--full");
    let config = ExperimentConfig::from_path(path.as_ref()).expect("config");

    let world = generate_world(&config.world).expect("world");
    let requests = RequestGenerator::new(&world).take_stream(12_000);
    let stats = mean_candidate_overlap(&requests, 6.0 * 3600.0);
    println!(
        "overlap: mean {:.4} over {} requests ({} with 6h history; conditional {:.4})",
        stats.mean_overlap,
        stats.n_requests,
        stats.n_with_history,
        stats.mean_overlap * stats.n_requests as f64 / stats.n_with_history.max(1) as f64,
    );

    if full {
        let out = pipeline::run_paired_simulation(&config).expect("paired run");
        let cov = out.treatment.report.coverage_labeled;
        println!(
            "coverage: exact {:.4} effective {:.4} any {:.4} | bce {:.5} vs baseline {:.5}",
            cov.exact,
            cov.effective,
            cov.any_signal,
            out.treatment.report.bce,
            out.baseline.report.bce
        );
    }
}
