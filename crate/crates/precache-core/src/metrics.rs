//! Coverage, freshness, and loss aggregation.
//!
//! Coverage is reported two ways: over labeled impressions (the definition
//! the loss metrics care about, since training happens where labels exist)
//! and over all candidate lookups. The chain
//! `exact <= effective <= any_signal` holds on every report.

use serde::{Deserialize, Serialize};

use crate::cache::CacheStats;
use crate::error::{Error, Result};
use crate::precompute::QueueStats;
use crate::serving::{ServingRecord, SourceCounts};

/// Binary cross-entropy of one prediction; probabilities are clamped away
/// from 0/1 for numeric safety.
pub fn bce(prediction: f64, label: bool) -> f64 {
    let p = prediction.clamp(1e-12, 1.0 - 1e-12);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageSet {
    /// Fraction with an exact cache hit.
    pub exact: f64,
    /// Fraction with an exact hit or a similarity-imputed vector.
    pub effective: f64,
    /// Fraction where the pair vector or the user aggregate is present.
    pub any_signal: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Background pipeline totals folded over a run's cycle reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecomputeSummary {
    pub cycles: u64,
    pub tasks_processed: u64,
    pub embeddings_written: u64,
    pub failures: u64,
    pub simulated_worker_time: f64,
    pub queue: QueueStats,
}

/// Cache stats plus the derived hit rate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub hit_rate: f64,
    #[serde(flatten)]
    pub stats: CacheStats,
}

/// Per-arm experiment report. Field order is the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub arm: String,
    pub config_digest: String,
    pub n_requests_total: usize,
    pub n_requests_measured: usize,
    pub n_labeled: u64,
    pub coverage_labeled: CoverageSet,
    pub coverage_all_lookups: CoverageSet,
    pub source_counts_labeled: SourceCounts,
    pub source_counts_all: SourceCounts,
    pub bce: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_bce: Option<f64>,
    /// Positive means the arm improves on the baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_bce_reduction_pct: Option<f64>,
    pub serving_latency: LatencySummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precompute: Option<PrecomputeSummary>,
}

pub const REPORT_SCHEMA: &str = "precache.report.v1";

fn coverage_from_counts(counts: &SourceCounts) -> CoverageSet {
    let total = counts.total();
    if total == 0 {
        return CoverageSet::default();
    }
    let t = total as f64;
    CoverageSet {
        exact: counts.exact as f64 / t,
        effective: (counts.exact + counts.similarity_imputed) as f64 / t,
        any_signal: counts.pair_or_agg_present as f64 / t,
    }
}

/// Aggregates a run's serving records into a report. The first
/// `warmup_fraction` of requests warm the cache and model and are excluded
/// from every measured figure.
pub fn compute_report(
    records: &[ServingRecord],
    warmup_fraction: f64,
    arm: &str,
    config_digest: &str,
    cache_stats: Option<CacheStats>,
    precompute: Option<PrecomputeSummary>,
) -> Result<ExperimentReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot compute a report over zero records".into(),
        ));
    }
    if !(0.0..1.0).contains(&warmup_fraction) {
        return Err(Error::InvalidArgument(format!(
            "warmup_fraction must lie in [0, 1), got {warmup_fraction}"
        )));
    }
    let skip = (records.len() as f64 * warmup_fraction).floor() as usize;
    let measured = &records[skip..];
    if measured.is_empty() {
        return Err(Error::InvalidArgument(
            "warmup consumed every record".into(),
        ));
    }

    let mut labeled_counts = SourceCounts::default();
    let mut all_counts = SourceCounts::default();
    let mut loss_sum = 0.0;
    let mut n_labeled = 0u64;
    let mut lat_sum = 0.0;
    let mut lat_min = f64::INFINITY;
    let mut lat_max = f64::NEG_INFINITY;
    for record in measured {
        for imp in &record.labeled {
            labeled_counts.record(imp.source, imp.agg_present);
            loss_sum += bce(imp.prediction, imp.label);
            n_labeled += 1;
        }
        all_counts.merge(&record.source_counts);
        lat_sum += record.serving_latency_ms;
        lat_min = lat_min.min(record.serving_latency_ms);
        lat_max = lat_max.max(record.serving_latency_ms);
    }
    if n_labeled == 0 {
        return Err(Error::InvalidArgument(
            "no labeled impressions in the measured span".into(),
        ));
    }

    Ok(ExperimentReport {
        schema: REPORT_SCHEMA.into(),
        arm: arm.into(),
        config_digest: config_digest.into(),
        n_requests_total: records.len(),
        n_requests_measured: measured.len(),
        n_labeled,
        coverage_labeled: coverage_from_counts(&labeled_counts),
        coverage_all_lookups: coverage_from_counts(&all_counts),
        source_counts_labeled: labeled_counts,
        source_counts_all: all_counts,
        bce: loss_sum / n_labeled as f64,
        baseline_bce: None,
        relative_bce_reduction_pct: None,
        serving_latency: LatencySummary {
            mean_ms: lat_sum / measured.len() as f64,
            min_ms: lat_min,
            max_ms: lat_max,
        },
        cache: cache_stats.map(|stats| CacheSummary {
            hit_rate: stats.hit_rate(),
            stats,
        }),
        precompute,
    })
}

impl ExperimentReport {
    /// Fills the relative-reduction figures against a named baseline BCE.
    pub fn set_baseline(&mut self, baseline_bce: f64) {
        self.baseline_bce = Some(baseline_bce);
        self.relative_bce_reduction_pct = if baseline_bce > 0.0 {
            Some((baseline_bce - self.bce) / baseline_bce * 100.0)
        } else {
            None
        };
    }
}

/// One row of the coverage sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub seed: u64,
    pub bce: f64,
    /// Coverage actually measured over labeled impressions under the mask.
    pub coverage_labeled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub levels: Vec<f64>,
    /// Seed-averaged BCE per level, aligned with `levels`.
    pub mean_bce: Vec<f64>,
}

impl SweepTable {
    pub fn from_rows(levels: Vec<f64>, rows: Vec<SweepRow>) -> SweepTable {
        let mean_bce = levels
            .iter()
            .map(|&level| {
                let at: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.level == level)
                    .map(|r| r.bce)
                    .collect();
                at.iter().sum::<f64>() / at.len().max(1) as f64
            })
            .collect();
        SweepTable { rows, levels, mean_bce }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,seed,bce,coverage_labeled\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.level, r.seed, r.bce, r.coverage_labeled));
        }
        out
    }
}
