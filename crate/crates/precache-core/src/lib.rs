//! Speculative embedding precompute, desk scale.
//!
//! A background pipeline predicts which user-item pairs will show up in
//! future ranking requests, precomputes their teacher-model embeddings into
//! a TTL-governed cache, and serves them (with hierarchical fallbacks) to an
//! online-trained vertical model. A synthetic workload generator with
//! calibrated temporal locality plus a metrics harness make the coverage and
//! loss trends measurable end to end.
//!
//! Module map:
//! - [`world`]: seeded synthetic users/items/labels and the request stream.
//! - [`teacher`]: stand-in foundation model; interaction and user embeddings.
//! - [`verifier`]: relevance filter picking which pairs earn precomputation.
//! - [`cache`]: concurrent (user, item) embedding store with TTL-on-read.
//! - [`precompute`]: background task queue and refresh-cycle workers.
//! - [`enrichment`]: aggregated user embedding and KNN similarity imputation.
//! - [`serving`]: feature assembly, online logistic regression, ranking.
//! - [`metrics`]: coverage/freshness/loss reports and the coverage sweep.
//! - [`pipeline`]: experiment driver wiring the above into paired runs.

pub mod cache;
pub mod config;
pub mod enrichment;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod precompute;
pub mod replay;
pub mod rng;
pub mod serving;
pub mod teacher;
pub mod verifier;
pub mod world;

pub use error::{Error, Result};

/// Simulated-clock timestamp, in seconds since the start of a run.
pub type SimTime = f64;

/// Simulated duration, in seconds.
pub type SimDuration = f64;

pub const SECS_PER_HOUR: f64 = 3600.0;
