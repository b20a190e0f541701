//! Relevance filter gating speculative precomputation.
//!
//! The "verifier" is simply the current vertical model: its predicted
//! probability decides which candidate pairs earn a background embedding
//! computation. Selection takes the top ceil(fraction * n) candidates per
//! request; rejected pairs are never enqueued.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serving::{FeatureVector, VerticalModel};
use crate::world::RankingRequest;

/// Outcome of candidate selection for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierDecision {
    pub request_id: u64,
    /// Selected item ids, descending score, ties broken by ascending item id.
    pub selected: Vec<u64>,
    pub rejected: Vec<u64>,
    pub fraction_used: f64,
}

/// Score one pair with the current vertical model snapshot. Zero-placeholder
/// features are fine; an untrained model scores 0.5 everywhere.
pub fn verifier_score(model: &VerticalModel, features: &FeatureVector) -> f64 {
    model.predict(features)
}

/// Selects the top ceil(fraction * n) candidates by score.
///
/// `scores[i]` must correspond to `request.candidates[i]`. Ties are broken by
/// ascending item id so replays are deterministic.
pub fn select_candidates(
    request: &RankingRequest,
    scores: &[f64],
    fraction: f64,
) -> Result<VerifierDecision> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "verifier fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if scores.len() != request.candidates.len() {
        return Err(Error::DimensionMismatch {
            what: "verifier scores",
            expected: request.candidates.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("verifier scores"));
    }
    let n = request.candidates.len();
    let take = ((fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<(f64, u64)> = scores
        .iter()
        .zip(&request.candidates)
        .map(|(&s, &item)| (s, item))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let selected: Vec<u64> = order[..take].iter().map(|(_, item)| *item).collect();
    let rejected: Vec<u64> = order[take..].iter().map(|(_, item)| *item).collect();
    Ok(VerifierDecision {
        request_id: request.request_id,
        selected,
        rejected,
        fraction_used: fraction,
    })
}
