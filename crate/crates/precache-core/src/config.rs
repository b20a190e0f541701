//! Experiment configuration: strict-schema JSON with defaults per section.
//!
//! Unknown keys are rejected everywhere so a typo in a sweep config fails
//! loudly instead of silently running the defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::enrichment::EnrichmentConfig;
use crate::error::{Error, Result};
use crate::precompute::WorkerConfig;
use crate::world::WorldConfig;
use crate::SECS_PER_HOUR;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    pub ttl_hours: f64,
    pub capacity: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            ttl_hours: 2.25,
            capacity: 5_000_000,
        }
    }
}

impl CacheConfig {
    pub fn ttl_secs(&self) -> f64 {
        self.ttl_hours * SECS_PER_HOUR
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ttl_hours > 0.0) {
            return Err(Error::invalid_config("cache.ttl_hours", "must be > 0"));
        }
        if self.capacity == 0 {
            return Err(Error::invalid_config("cache.capacity", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierConfig {
    /// Fraction of each request's candidates selected for precomputation.
    pub fraction: f64,
    /// When true, cached entries for verifier-rejected pairs are evicted.
    pub evict_rejected: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            fraction: 0.2,
            evict_rejected: false,
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid_config(
                "verifier.fraction",
                "must lie in (0, 1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    /// Embedding dimension after compression.
    pub d_emb: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig { d_emb: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServingConfig {
    pub learning_rate: f64,
    /// Top-of-ranking items that receive labels per request.
    pub label_slate_n: usize,
    /// Hash buckets per id feature block.
    pub hash_buckets: usize,
}

impl Default for ServingConfig {
    fn default() -> Self {
        ServingConfig {
            learning_rate: 0.05,
            label_slate_n: 5,
            hash_buckets: 64,
        }
    }
}

impl ServingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid_config(
                "serving.learning_rate",
                "must be finite and > 0",
            ));
        }
        if self.label_slate_n == 0 {
            return Err(Error::invalid_config("serving.label_slate_n", "must be >= 1"));
        }
        if self.hash_buckets == 0 {
            return Err(Error::invalid_config("serving.hash_buckets", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n_requests: usize,
    /// Seeds for multi-seed commands (sweep, ablate).
    pub seeds: Vec<u64>,
    /// Forces sequential execution; required for byte-identical replays.
    pub deterministic_mode: bool,
    /// Leading fraction of requests excluded from measured metrics.
    pub warmup_fraction: f64,
    /// Include full per-candidate detail in serving records (heavy).
    pub record_candidates: bool,
    /// Write verifier decisions as JSON lines.
    pub log_decisions: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_requests: 50_000,
            seeds: vec![1, 2, 3],
            deterministic_mode: true,
            warmup_fraction: 0.2,
            record_candidates: false,
            log_decisions: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_requests == 0 {
            return Err(Error::invalid_config("run.n_requests", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid_config("run.seeds", "must not be empty"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid_config(
                "run.warmup_fraction",
                "must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

/// Root experiment configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub teacher: TeacherConfig,
    pub cache: CacheConfig,
    pub verifier: VerifierConfig,
    pub precompute: WorkerConfig,
    pub enrichment: EnrichmentConfig,
    pub serving: ServingConfig,
    pub run: RunConfig,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.cache.validate()?;
        self.verifier.validate()?;
        self.precompute.validate()?;
        self.enrichment.validate()?;
        self.serving.validate()?;
        self.run.validate()?;
        if self.teacher.d_emb == 0 || self.teacher.d_emb > 3 * self.world.d_lat {
            return Err(Error::invalid_config(
                "teacher.d_emb",
                format!("must lie in 1..={} (= 3*d_lat)", 3 * self.world.d_lat),
            ));
        }
        Ok(())
    }

    /// Parses and validates a config from JSON text. Parse errors carry
    /// serde_json's line/column diagnostics.
    pub fn from_json_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Canonical JSON of the fully-resolved config; embedded in reports so a
    /// run can be reproduced from its own output.
    pub fn effective_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Digest identifying the effective config.
    pub fn digest(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }

    /// Copy with the world seed (and single-seed list) replaced.
    pub fn with_seed(&self, seed: u64) -> ExperimentConfig {
        let mut out = self.clone();
        out.world.seed = seed;
        out
    }
}
