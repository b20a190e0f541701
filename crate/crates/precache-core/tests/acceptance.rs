//! Acceptance suite: one test per shipped criterion, each printing a
//! PASS/FAIL line. Criteria 2-4 share one default end-to-end run; run with
//! `cargo test -p precache-core --test acceptance -- --nocapture` to see the
//! lines.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::OnceLock;

use precache_core::cache::{CacheKey, EmbedCache};
use precache_core::config::ExperimentConfig;
use precache_core::enrichment::FeatureSource;
use precache_core::metrics::bce;
use precache_core::pipeline::{self, SimOutput};
use precache_core::rng;
use precache_core::serving::{
    assemble_features, FeatureLayout, VerticalModel,
};
use precache_core::teacher::TeacherEmbedding;
use precache_core::verifier::select_candidates;
use precache_core::world::{
    generate_world, mean_candidate_overlap, sigmoid, RankingRequest, RequestGenerator,
};
use rand::Rng;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn default_config() -> ExperimentConfig {
    ExperimentConfig::from_path(&configs_dir().join("default.json")).expect("shipped default config")
}

fn sweep_config() -> ExperimentConfig {
    ExperimentConfig::from_path(&configs_dir().join("sweep.json")).expect("shipped sweep config")
}

fn default_run() -> &'static SimOutput {
    static RUN: OnceLock<SimOutput> = OnceLock::new();
    RUN.get_or_init(|| {
        pipeline::run_paired_simulation(&default_config()).expect("default paired run")
    })
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion} failed: {detail}");
}

/// Criterion 1: with the shipped default config, the mean 6-hour candidate
/// overlap over >= 10,000 requests lies in [0.55, 0.65].
#[test]
fn criterion_01_locality_calibration() {
    let config = default_config();
    let world = generate_world(&config.world).unwrap();
    let requests = RequestGenerator::new(&world).take_stream(12_000);
    let stats = mean_candidate_overlap(&requests, 6.0 * 3600.0);
    let pass = (0.55..=0.65).contains(&stats.mean_overlap);
    report(
        "01 locality-calibration",
        pass,
        &format!(
            "mean 6h overlap {:.4} over {} requests, target [0.55, 0.65]",
            stats.mean_overlap, stats.n_requests
        ),
    );
}

/// Criterion 2: the default end-to-end run (>= 50,000 requests, 20% warmup)
/// yields exact coverage in [0.35, 0.55] over labeled examples.
#[test]
fn criterion_02_exact_coverage_band() {
    let run = default_run();
    let exact = run.treatment.report.coverage_labeled.exact;
    assert!(run.treatment.report.n_requests_total >= 50_000);
    let pass = (0.35..=0.55).contains(&exact);
    report(
        "02 exact-coverage-band",
        pass,
        &format!("coverage_exact {exact:.4}, target [0.35, 0.55]"),
    );
}

/// Criterion 3: with the aggregated user embedding enabled, any-signal
/// coverage reaches at least 0.85.
#[test]
fn criterion_03_aggregated_lift() {
    let run = default_run();
    let any = run.treatment.report.coverage_labeled.any_signal;
    let pass = any >= 0.85;
    report(
        "03 aggregated-embedding-lift",
        pass,
        &format!("coverage_any_signal {any:.4}, target >= 0.85"),
    );
}

/// Criterion 4: similarity imputation (k = 100) lifts effective coverage by
/// at least 0.20 over exact, landing in [0.60, 0.80].
#[test]
fn criterion_04_similarity_lift() {
    let run = default_run();
    let cov = run.treatment.report.coverage_labeled;
    let lift = cov.effective - cov.exact;
    let pass = lift >= 0.20 && (0.60..=0.80).contains(&cov.effective);
    report(
        "04 similarity-lift",
        pass,
        &format!(
            "coverage_effective {:.4} (target [0.60, 0.80]), lift {:.4} (target >= 0.20)",
            cov.effective, lift
        ),
    );
}

/// Criterion 5: seed-averaged BCE strictly decreases from coverage 0 to 1.0
/// and is non-increasing across adjacent levels within a 0.1%-relative
/// tolerance, allowing at most one adjacent violation.
#[test]
fn criterion_05_coverage_loss_trend() {
    let config = sweep_config();
    let levels = [0.0, 0.2, 0.5, 0.6, 1.0];
    let table = pipeline::run_sweep(&config, &levels).unwrap();
    let mean = &table.mean_bce;
    let endpoints_strict = mean[0] > mean[levels.len() - 1];
    let mut violations = 0;
    for w in mean.windows(2) {
        if w[1] > w[0] * 1.001 {
            violations += 1;
        }
    }
    let pass = endpoints_strict && violations <= 1;
    report(
        "05 coverage-loss-monotone-trend",
        pass,
        &format!(
            "mean bce per level {:?} -> {:?}, endpoint drop {:.5}, adjacent violations {violations} (<= 1)",
            levels,
            mean.iter().map(|b| (b * 1e5).round() / 1e5).collect::<Vec<_>>(),
            mean[0] - mean[levels.len() - 1]
        ),
    );
}

/// Criterion 6: at matched coverage 0.5, exact embeddings give no worse
/// seed-averaged BCE than similarity-imputed embeddings.
#[test]
fn criterion_06_enrichment_quality_ordering() {
    let config = sweep_config();
    let study = pipeline::run_imputation_quality(&config, 0.5).unwrap();
    let pass = study.mean_bce_exact <= study.mean_bce_imputed;
    report(
        "06 enrichment-quality-ordering",
        pass,
        &format!(
            "mean bce exact {:.5} <= imputed {:.5} at coverage 0.5 over seeds {:?}",
            study.mean_bce_exact, study.mean_bce_imputed, study.seeds
        ),
    );
}

/// Criterion 7: verifier property suite. Cardinality for all n in 1..=500,
/// dominance and tie-break rules, and subset-oracle equivalence for n <= 12
/// over 1,000 random score vectors.
#[test]
fn criterion_07_verifier_exactness() {
    let mut r = rng::rng_from(&[2024, 7]);
    // Cardinality plus dominance for every n in 1..=500.
    for n in 1usize..=500 {
        let request = RankingRequest {
            request_id: n as u64,
            user_id: 0,
            timestamp: 0.0,
            candidates: (0..n as u64).collect(),
        };
        let scores: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let decision = select_candidates(&request, &scores, 0.2).unwrap();
        let expected = (0.2 * n as f64).ceil() as usize;
        assert_eq!(decision.selected.len(), expected, "cardinality at n={n}");
        let min_sel = decision
            .selected
            .iter()
            .map(|&i| scores[i as usize])
            .fold(f64::INFINITY, f64::min);
        for &rej in &decision.rejected {
            assert!(scores[rej as usize] <= min_sel, "dominance at n={n}");
        }
        // Selected list ordering: descending score, ties ascending id.
        for w in decision.selected.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (sa, sb) = (scores[a as usize], scores[b as usize]);
            assert!(sa > sb || (sa == sb && a < b), "tie-break at n={n}");
        }
    }

    // Oracle equivalence for n <= 12 over 1,000 random score vectors.
    for case in 0..1000u64 {
        let n = 1 + (r.gen::<u64>() % 12) as usize;
        let candidates: Vec<u64> = (0..n as u64).collect();
        // Coarse scores provoke ties.
        let scores: Vec<f64> = (0..n).map(|_| (r.gen_range(0..4) as f64) / 3.0).collect();
        let fraction = 0.05 + 0.95 * r.gen::<f64>();
        let take = (fraction * n as f64).ceil() as usize;
        let request = RankingRequest {
            request_id: case,
            user_id: 0,
            timestamp: 0.0,
            candidates: candidates.clone(),
        };
        let decision = select_candidates(&request, &scores, fraction).unwrap();
        let oracle = subset_oracle(&candidates, &scores, take);
        let mut got: Vec<u64> = decision.selected.clone();
        got.sort_unstable();
        assert_eq!(got, oracle, "oracle mismatch, case {case}, n {n}");
    }
    report(
        "07 verifier-exactness",
        true,
        "cardinality n=1..500, dominance, tie-break, 1000-case subset-oracle equivalence",
    );
}

/// Independent oracle: best subset of the requested size by total score,
/// ties toward the lexicographically smallest id set.
fn subset_oracle(candidates: &[u64], scores: &[f64], take: usize) -> Vec<u64> {
    let n = candidates.len();
    let mut best: Option<(f64, Vec<u64>)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != take {
            continue;
        }
        let mut sum = 0.0;
        let mut ids = Vec::new();
        for i in 0..n {
            if mask & (1 << i) != 0 {
                sum += scores[i];
                ids.push(candidates[i]);
            }
        }
        ids.sort_unstable();
        let better = match &best {
            None => true,
            Some((bs, bids)) => sum > *bs + 1e-12 || ((sum - *bs).abs() <= 1e-12 && ids < *bids),
        };
        if better {
            best = Some((sum, ids));
        }
    }
    best.map(|(_, ids)| ids).unwrap_or_default()
}

/// Criterion 8: over >= 10^6 randomized put/get/clock operations, no get
/// returns an entry older than the TTL, and windowed scans match a
/// brute-force filter of the dump at sampled checkpoints.
#[test]
fn criterion_08_ttl_soundness() {
    let cache = EmbedCache::new(100_000).unwrap();
    let mut shadow: HashMap<CacheKey, f64> = HashMap::new();
    let mut r = rng::rng_from(&[88, 11]);
    let mut clock = 0.0f64;
    let ttl = 360.0;
    let n_ops = 1_200_000u64;
    let mut gets = 0u64;
    for op in 0..n_ops {
        clock += r.gen::<f64>() * 2.0;
        let key = CacheKey::new(r.gen_range(0..200), r.gen_range(0..200));
        if r.gen::<f64>() < 0.5 {
            cache.put(
                key,
                TeacherEmbedding {
                    vector: vec![key.user_id as f64, key.item_id as f64],
                    computed_at: clock,
                },
                clock,
            );
            shadow.insert(key, clock);
        } else {
            gets += 1;
            let got = cache.get(key, clock, ttl);
            let fresh = shadow.get(&key).map(|w| clock - w <= ttl).unwrap_or(false);
            assert_eq!(got.is_some(), fresh, "ttl soundness at op {op}");
            if let Some(e) = got {
                let age = clock - shadow[&key];
                assert!(age <= ttl, "served entry aged {age} > ttl {ttl}");
                assert_eq!(e.computed_at, shadow[&key]);
            }
        }
        if op % 100_000 == 0 {
            // Scan oracle: windowed scan equals the brute-force dump filter.
            let user = r.gen_range(0..200);
            let window = 1.0 + r.gen::<f64>() * 500.0;
            let scan: Vec<u64> = cache
                .scan_user(user, clock, window)
                .into_iter()
                .map(|(item, _, _)| item)
                .collect();
            let mut expect: Vec<u64> = cache
                .dump()
                .into_iter()
                .filter(|row| row.user_id == user && clock - row.written_at <= window)
                .map(|row| row.item_id)
                .collect();
            expect.sort_unstable();
            assert_eq!(scan, expect, "scan oracle at op {op}");
            let stats = cache.stats();
            assert_eq!(
                stats.lookups,
                stats.exact_hits + stats.expired_hits + stats.misses
            );
        }
    }
    report(
        "08 ttl-soundness",
        true,
        &format!("{n_ops} randomized ops ({gets} gets), zero stale serves, scan oracle clean"),
    );
}

/// Criterion 9: serving latency distributions are exactly identical across
/// per-embedding costs {0, 50ms, 5s} on a fixed deterministic trace.
#[test]
fn criterion_09_decoupling() {
    let mut config = default_config();
    config.world.n_users = 300;
    config.world.n_items = 20_000;
    config.run.n_requests = 4_000;
    let mut latencies: Vec<Vec<f64>> = Vec::new();
    for cost_ms in [0.0, 50.0, 5000.0] {
        let mut c = config.clone();
        c.precompute.per_embedding_cost_ms = cost_ms;
        let out = pipeline::run_paired_simulation(&c).unwrap();
        latencies.push(
            out.treatment
                .records
                .iter()
                .map(|r| r.serving_latency_ms)
                .collect(),
        );
    }
    let pass = latencies[0] == latencies[1] && latencies[1] == latencies[2];
    report(
        "09 serving-decoupling",
        pass,
        &format!(
            "latency vectors over {} requests exactly equal across costs {{0, 50ms, 5s}}",
            latencies[0].len()
        ),
    );
}

/// Criterion 10: the vertical-model gradient matches central finite
/// differences within 1e-6 relative error on 100 random (feature, label)
/// pairs.
#[test]
fn criterion_10_gradient_check() {
    let layout = FeatureLayout::new(16, 8, 99);
    let mut r = rng::rng_from(&[10, 10]);
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let enriched = precache_core::enrichment::EnrichedFeature {
            vector: (0..8).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect(),
            source: if r.gen::<bool>() {
                FeatureSource::Exact
            } else {
                FeatureSource::SimilarityImputed
            },
            user_agg: (0..8).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect(),
            user_agg_present: r.gen::<bool>(),
        };
        let fv = assemble_features(&enriched, case, case * 7 + 3, &layout).unwrap();
        let x = fv.to_dense(&layout);
        let label = r.gen::<bool>();
        let weights: Vec<f64> = (0..layout.dim()).map(|_| r.gen::<f64>() - 0.5).collect();

        // Analytic gradient via one unit-learning-rate step.
        let mut model = VerticalModel::new(layout, 1.0);
        model.weights = weights.clone();
        let before = model.weights.clone();
        model.sgd_update(&fv, label).unwrap();
        let analytic: Vec<f64> = before.iter().zip(&model.weights).map(|(b, a)| b - a).collect();

        let y = f64::from(label);
        let loss = |w: &[f64]| {
            let z: f64 = w.iter().zip(&x).map(|(wi, xi)| wi * xi).sum();
            let p = sigmoid(z).clamp(1e-15, 1.0 - 1e-15);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        };
        let h = 1e-6;
        let mut probe = weights.clone();
        for j in 0..probe.len() {
            let orig = probe[j];
            probe[j] = orig + h;
            let up = loss(&probe);
            probe[j] = orig - h;
            let down = loss(&probe);
            probe[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = if fd.abs() > 1e-8 {
                (analytic[j] - fd).abs() / fd.abs()
            } else {
                (analytic[j] - fd).abs()
            };
            worst = worst.max(rel);
            assert!(
                rel <= 1e-6,
                "case {case} coord {j}: analytic {} vs fd {fd}, rel {rel}",
                analytic[j]
            );
        }
    }
    report(
        "10 gradient-check",
        true,
        &format!("100 random pairs, worst relative error {worst:.3e} <= 1e-6"),
    );
}

/// Criterion 11: a deterministic-mode simulate run is byte-identical when
/// repeated, including report.json.
#[test]
fn criterion_11_determinism() {
    let mut config = default_config();
    config.world.n_users = 200;
    config.world.n_items = 10_000;
    config.run.n_requests = 3_000;
    config.run.deterministic_mode = true;
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    pipeline::simulate_to_dir(&config, &out_a).unwrap();
    pipeline::simulate_to_dir(&config, &out_b).unwrap();
    let report_a = std::fs::read(out_a.join("report.json")).unwrap();
    let report_b = std::fs::read(out_b.join("report.json")).unwrap();
    let records_a = std::fs::read(out_a.join("records.jsonl")).unwrap();
    let records_b = std::fs::read(out_b.join("records.jsonl")).unwrap();
    let pass = report_a == report_b && records_a == records_b;
    report(
        "11 determinism",
        pass,
        &format!(
            "report.json byte-identical ({} bytes), records.jsonl byte-identical ({} bytes)",
            report_a.len(),
            records_a.len()
        ),
    );
}
