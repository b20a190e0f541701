//! Cross-module invariants checked on real end-to-end runs.

use precache_core::config::ExperimentConfig;
use precache_core::metrics::bce;
use precache_core::pipeline;
use precache_core::replay::{requests_from_jsonl, requests_to_jsonl};
use precache_core::teacher::Teacher;
use precache_core::world::{generate_world, sigmoid, RequestGenerator, WorldConfig};

fn small_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.world.n_users = 80;
    config.world.n_items = 2_000;
    config.world.candidates_per_request = 40;
    config.world.seed = 17;
    config.enrichment.k_neighbors = 15;
    config.run.n_requests = 800;
    config.run.seeds = vec![17];
    config
}

/// Work conservation: every processed task became a cache insertion or a
/// recorded failure, and the cache's insertion counter agrees.
#[test]
fn precompute_work_is_conserved() {
    let output = pipeline::run_paired_simulation(&small_config()).unwrap();
    let report = &output.treatment.report;
    let pre = report.precompute.as_ref().unwrap();
    let cache = report.cache.as_ref().unwrap();
    assert_eq!(pre.tasks_processed, pre.embeddings_written + pre.failures);
    assert_eq!(pre.failures, 0);
    assert_eq!(cache.stats.insertions, pre.embeddings_written);
    // Stats identity on the real run.
    assert_eq!(
        cache.stats.lookups,
        cache.stats.exact_hits + cache.stats.expired_hits + cache.stats.misses
    );
    // Coverage chain holds on real reports for both scopes.
    for cov in [report.coverage_labeled, report.coverage_all_lookups] {
        assert!(cov.exact <= cov.effective + 1e-12);
        assert!(cov.effective <= cov.any_signal + 1e-12);
    }
}

/// Report BCE equals an independent recount over the emitted records.
#[test]
fn report_bce_matches_recount_over_records() {
    let config = small_config();
    let output = pipeline::run_paired_simulation(&config).unwrap();
    let records = &output.treatment.records;
    let skip = (records.len() as f64 * config.run.warmup_fraction).floor() as usize;
    let mut loss = 0.0;
    let mut n = 0u64;
    for record in &records[skip..] {
        for imp in &record.labeled {
            loss += bce(imp.prediction, imp.label);
            n += 1;
        }
    }
    assert_eq!(output.treatment.report.n_labeled, n);
    assert!((output.treatment.report.bce - loss / n as f64).abs() < 1e-12);
}

/// Replaying an exported trace reproduces the run record-for-record.
#[test]
fn exported_trace_replays_identically() {
    let config = small_config();
    let direct = pipeline::run_paired_simulation(&config).unwrap();

    let world = generate_world(&config.world).unwrap();
    let requests = RequestGenerator::new(&world).take_stream(config.run.n_requests);
    let text = requests_to_jsonl(&requests).unwrap();
    let imported = requests_from_jsonl(&text).unwrap();
    assert_eq!(requests, imported);
    let replayed = pipeline::run_paired_simulation_with_trace(&config, &imported).unwrap();

    assert_eq!(direct.treatment.records, replayed.treatment.records);
    assert_eq!(direct.baseline.records, replayed.baseline.records);
    assert_eq!(
        serde_json::to_string(&direct.treatment.report).unwrap(),
        serde_json::to_string(&replayed.treatment.report).unwrap()
    );
}

/// A logistic probe trained on the interaction embedding alone beats the
/// constant-rate predictor on held-out labels; the embedding carries signal,
/// which is what makes coverage matter. The probe is a test-local model
/// independent of the serving implementation.
#[test]
fn teacher_embedding_is_informative() {
    let config = WorldConfig {
        n_users: 300,
        n_items: 2_000,
        d_lat: 16,
        candidates_per_request: 10,
        seed: 5,
        ..WorldConfig::default()
    };
    let world = generate_world(&config).unwrap();
    let teacher = Teacher::new(config.seed, config.d_lat, 8).unwrap();
    let mut r = precache_core::rng::rng_from(&[5, 123]);
    use rand::Rng;
    let mut examples: Vec<(Vec<f64>, bool)> = Vec::new();
    for _ in 0..15_000 {
        let user = r.gen_range(0..config.n_users) as u64;
        let item = r.gen_range(0..config.n_items) as u64;
        let emb = teacher
            .compute_interaction_embedding(&world, user, item, 0.0)
            .unwrap();
        let label = world.true_label(user, item, 0.0).unwrap();
        examples.push((emb.vector, label));
    }
    let (train, held_out) = examples.split_at(12_000);

    // Tiny logistic regression on [embedding | bias].
    let dim = 9;
    let mut w = vec![0.0f64; dim];
    for _ in 0..3 {
        for (x, y) in train {
            let z: f64 = w[8] + x.iter().zip(&w[..8]).map(|(a, b)| a * b).sum::<f64>();
            let g = sigmoid(z) - f64::from(*y);
            for (wi, xi) in w[..8].iter_mut().zip(x) {
                *wi -= 0.1 * g * xi;
            }
            w[8] -= 0.1 * g;
        }
    }
    let rate = train.iter().filter(|(_, y)| *y).count() as f64 / train.len() as f64;
    let mut model_loss = 0.0;
    let mut const_loss = 0.0;
    for (x, y) in held_out {
        let z: f64 = w[8] + x.iter().zip(&w[..8]).map(|(a, b)| a * b).sum::<f64>();
        model_loss += bce(sigmoid(z), *y);
        const_loss += bce(rate, *y);
    }
    let n = held_out.len() as f64;
    assert!(
        model_loss / n < const_loss / n - 0.005,
        "embedding probe {:.5} must beat constant predictor {:.5}",
        model_loss / n,
        const_loss / n
    );
}

/// Verifier decisions on the live pipeline keep cardinality: the treatment
/// run's speculation enqueues never exceed ceil(fraction * candidates) per
/// request.
#[test]
fn speculation_volume_is_bounded_by_the_verifier_fraction() {
    let mut config = small_config();
    config.run.log_decisions = true;
    let output = pipeline::run_paired_simulation(&config).unwrap();
    let decisions = output.treatment.decisions.as_ref().unwrap();
    assert_eq!(decisions.len(), config.run.n_requests);
    let cap = (config.verifier.fraction * config.world.candidates_per_request as f64).ceil() as usize;
    for d in decisions {
        assert_eq!(d.selected.len(), cap);
        assert_eq!(d.selected.len() + d.rejected.len(), config.world.candidates_per_request);
    }
}
