//! Hierarchical feature enrichment.
//!
//! Two fallbacks extend coverage when the exact (user, item) embedding is
//! absent or expired: a per-user aggregate of recent cached embeddings
//! (exclusion of the current pair applied), and KNN similarity imputation
//! from neighbor users' entries for the same item. Missing everything yields
//! zero placeholders, and any non-exact outcome re-enqueues the pair.

use serde::{Deserialize, Serialize};

use crate::cache::{CacheKey, EmbedCache};
use crate::error::{Error, Result};
use crate::precompute::{requeue_miss, PrecomputeQueue};
use crate::teacher::Teacher;
use crate::world::{dot, World};
use crate::{SimDuration, SimTime, SECS_PER_HOUR};

/// Where an enriched user-item vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Exact,
    SimilarityImputed,
    Absent,
}

/// Neighbor strategy for similarity imputation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationStrategy {
    WeightedAverage,
    NearestSingle,
}

/// Enrichment feature toggles and windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnrichmentConfig {
    pub k_neighbors: usize,
    pub strategy: ImputationStrategy,
    pub enable_agg: bool,
    pub enable_similarity: bool,
    pub agg_window_hours: f64,
}

impl Default for EnrichmentConfig {
    fn default() -> Self {
        EnrichmentConfig {
            k_neighbors: 100,
            strategy: ImputationStrategy::NearestSingle,
            enable_agg: true,
            enable_similarity: true,
            agg_window_hours: 24.0,
        }
    }
}

impl EnrichmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::invalid_config("enrichment.k_neighbors", "must be >= 1"));
        }
        if !(self.agg_window_hours > 0.0) {
            return Err(Error::invalid_config(
                "enrichment.agg_window_hours",
                "must be > 0",
            ));
        }
        Ok(())
    }

    pub fn agg_window_secs(&self) -> SimDuration {
        self.agg_window_hours * SECS_PER_HOUR
    }
}

/// The enriched feature bundle for one (user, item) lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedFeature {
    pub vector: Vec<f64>,
    pub source: FeatureSource,
    /// Separate user-only aggregate feature; zeros when not present.
    pub user_agg: Vec<f64>,
    pub user_agg_present: bool,
}

/// Precomputed per-user neighbor ranking: (neighbor id, cosine similarity),
/// descending similarity, ties by ascending user id. A user never neighbors
/// itself. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborTable {
    pub k: usize,
    pub neighbors: Vec<Vec<(u64, f64)>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        // Zero-norm embeddings are defined to have similarity 0 to everyone.
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Brute-force exact KNN over user embeddings; fine at desk scale.
pub fn build_neighbor_table(world: &World, teacher: &Teacher, k: usize) -> Result<NeighborTable> {
    let n = world.users.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "neighbor table needs at least 2 users".into(),
        ));
    }
    let embeddings: Vec<Vec<f64>> = (0..n as u64)
        .map(|u| teacher.compute_user_embedding(world, u))
        .collect::<Result<_>>()?;
    let keep = k.min(n - 1);
    let mut neighbors = Vec::with_capacity(n);
    for u in 0..n {
        let mut sims: Vec<(u64, f64)> = (0..n)
            .filter(|&v| v != u)
            .map(|v| (v as u64, cosine(&embeddings[u], &embeddings[v])))
            .collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        sims.truncate(keep);
        neighbors.push(sims);
    }
    Ok(NeighborTable { k, neighbors })
}

impl NeighborTable {
    pub fn neighbors_of(&self, user_id: u64) -> &[(u64, f64)] {
        self.neighbors
            .get(user_id as usize)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and validates an exported table: similarities in [-1, 1],
    /// sorted descending with ascending-id tie-break, no self loops, at most
    /// k rows each.
    pub fn from_json(text: &str) -> Result<NeighborTable> {
        let table: NeighborTable = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::malformed("neighbor table", "k must be >= 1"));
        }
        for (u, row) in self.neighbors.iter().enumerate() {
            if row.len() > self.k {
                return Err(Error::malformed(
                    "neighbor table",
                    format!("user {u} has {} neighbors, k = {}", row.len(), self.k),
                ));
            }
            for w in row.windows(2) {
                let ordered = w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0);
                if !ordered {
                    return Err(Error::malformed(
                        "neighbor table",
                        format!("user {u} neighbor list out of order"),
                    ));
                }
            }
            for &(v, sim) in row {
                if v as usize == u {
                    return Err(Error::malformed(
                        "neighbor table",
                        format!("user {u} lists itself"),
                    ));
                }
                if !sim.is_finite() || !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&sim) {
                    return Err(Error::malformed(
                        "neighbor table",
                        format!("similarity {sim} out of [-1, 1]"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Mean of the user's cached embeddings within `window`, excluding the entry
/// for `exclude_item_id`. Empty set yields `None`.
pub fn aggregated_user_embedding(
    cache: &EmbedCache,
    user_id: u64,
    exclude_item_id: u64,
    now: SimTime,
    window: SimDuration,
) -> Option<Vec<f64>> {
    let entries = cache.scan_user(user_id, now, window);
    let mut sum: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for (item_id, embedding, _) in &entries {
        if *item_id == exclude_item_id {
            continue;
        }
        count += 1;
        match &mut sum {
            None => sum = Some(embedding.vector.clone()),
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(&embedding.vector) {
                    *a += v;
                }
            }
        }
    }
    sum.map(|mut acc| {
        for a in &mut acc {
            *a /= count as f64;
        }
        acc
    })
}

/// Request-scoped aggregate state: one cache scan shared by all candidates
/// of a request. `excluding(item)` equals `aggregated_user_embedding` with
/// that exclusion.
pub struct UserAggregate {
    sum: Vec<f64>,
    count: usize,
    /// (item_id, vector) pairs inside the window, ascending item id.
    in_window: Vec<(u64, Vec<f64>)>,
    d_emb: usize,
}

impl UserAggregate {
    pub fn collect(
        cache: &EmbedCache,
        user_id: u64,
        now: SimTime,
        window: SimDuration,
        d_emb: usize,
    ) -> UserAggregate {
        let entries = cache.scan_user(user_id, now, window);
        let mut sum = vec![0.0; d_emb];
        let mut in_window = Vec::with_capacity(entries.len());
        for (item_id, embedding, _) in entries {
            for (a, v) in sum.iter_mut().zip(&embedding.vector) {
                *a += v;
            }
            in_window.push((item_id, embedding.vector));
        }
        UserAggregate {
            sum,
            count: in_window.len(),
            in_window,
            d_emb,
        }
    }

    pub fn excluding(&self, exclude_item_id: u64) -> Option<Vec<f64>> {
        let excluded = self
            .in_window
            .binary_search_by_key(&exclude_item_id, |(i, _)| *i)
            .ok();
        let count = self.count - usize::from(excluded.is_some());
        if count == 0 {
            return None;
        }
        let mut out = self.sum.clone();
        if let Some(idx) = excluded {
            for (o, v) in out.iter_mut().zip(&self.in_window[idx].1) {
                *o -= v;
            }
        }
        for o in &mut out {
            *o /= count as f64;
        }
        Some(out)
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }
}

/// Imputes a missing (user, item) embedding from neighbors holding a fresh
/// entry for the same item.
///
/// `nearest_single` returns the highest-ranked contributor's embedding.
/// `weighted_average` combines all contributors with weights
/// `max(sim, 0) / sum(max(sim, 0))`; if every contributor similarity is <= 0
/// it falls back to the nearest single contributor. Returns the vector and
/// the contributing neighbor ids, or `None` without contributors.
pub fn similarity_imputed_embedding(
    cache: &EmbedCache,
    table: &NeighborTable,
    user_id: u64,
    item_id: u64,
    now: SimTime,
    ttl: SimDuration,
    strategy: ImputationStrategy,
) -> Option<(Vec<f64>, Vec<u64>)> {
    // Probe the item's fresh holders once, then intersect with the neighbor
    // ranking; equivalent to peeking every neighbor but proportional to the
    // (small) holder set.
    let holders = cache.users_with_item_fresh(item_id, now, ttl);
    if holders.is_empty() {
        return None;
    }
    let holder_set: std::collections::HashSet<u64> = holders.into_iter().collect();
    match strategy {
        ImputationStrategy::NearestSingle => {
            for &(neighbor, _) in table.neighbors_of(user_id) {
                if holder_set.contains(&neighbor) {
                    if let Some(embedding) = cache.peek(CacheKey::new(neighbor, item_id), now, ttl)
                    {
                        return Some((embedding.vector, vec![neighbor]));
                    }
                }
            }
            None
        }
        ImputationStrategy::WeightedAverage => {
            let mut contributors: Vec<(u64, f64, Vec<f64>)> = Vec::new();
            for &(neighbor, sim) in table.neighbors_of(user_id) {
                if holder_set.contains(&neighbor) {
                    if let Some(embedding) = cache.peek(CacheKey::new(neighbor, item_id), now, ttl)
                    {
                        contributors.push((neighbor, sim, embedding.vector));
                    }
                }
            }
            if contributors.is_empty() {
                return None;
            }
            let total: f64 = contributors.iter().map(|(_, s, _)| s.max(0.0)).sum();
            if total <= 0.0 {
                // All contributor similarities non-positive: nearest single.
                let (neighbor, _, vector) = contributors.swap_remove(0);
                return Some((vector, vec![neighbor]));
            }
            let d = contributors[0].2.len();
            let mut out = vec![0.0; d];
            let mut ids = Vec::with_capacity(contributors.len());
            for (neighbor, sim, vector) in &contributors {
                let w = sim.max(0.0) / total;
                for (o, v) in out.iter_mut().zip(vector) {
                    *o += w * v;
                }
                ids.push(*neighbor);
            }
            Some((out, ids))
        }
    }
}

/// Exact-then-imputed lookup chain for the pair vector (no aggregate). A
/// non-exact outcome re-enqueues the pair when a queue is attached.
#[allow(clippy::too_many_arguments)]
pub fn lookup_pair_vector(
    cache: &EmbedCache,
    table: Option<&NeighborTable>,
    queue: Option<&PrecomputeQueue>,
    user_id: u64,
    item_id: u64,
    now: SimTime,
    ttl: SimDuration,
    config: &EnrichmentConfig,
    d_emb: usize,
) -> (Vec<f64>, FeatureSource) {
    let key = CacheKey::new(user_id, item_id);
    let (vector, source) = match cache.get(key, now, ttl) {
        Some(embedding) => (embedding.vector, FeatureSource::Exact),
        None => {
            let imputed = if config.enable_similarity {
                table.and_then(|t| {
                    similarity_imputed_embedding(
                        cache,
                        t,
                        user_id,
                        item_id,
                        now,
                        ttl,
                        config.strategy,
                    )
                })
            } else {
                None
            };
            match imputed {
                Some((vector, _)) => (vector, FeatureSource::SimilarityImputed),
                None => (vec![0.0; d_emb], FeatureSource::Absent),
            }
        }
    };
    if source != FeatureSource::Exact {
        if let Some(queue) = queue {
            requeue_miss(queue, key, now);
        }
    }
    (vector, source)
}

/// Full fallback chain for one lookup: exact hit, else similarity imputation,
/// else zero placeholder. The user aggregate is filled independently. Any
/// non-exact outcome re-enqueues the pair for the next refresh cycle.
#[allow(clippy::too_many_arguments)]
pub fn enrich(
    cache: &EmbedCache,
    table: Option<&NeighborTable>,
    queue: Option<&PrecomputeQueue>,
    user_id: u64,
    item_id: u64,
    now: SimTime,
    ttl: SimDuration,
    config: &EnrichmentConfig,
    d_emb: usize,
) -> EnrichedFeature {
    let (vector, source) =
        lookup_pair_vector(cache, table, queue, user_id, item_id, now, ttl, config, d_emb);
    let (user_agg, user_agg_present) = if config.enable_agg {
        match aggregated_user_embedding(cache, user_id, item_id, now, config.agg_window_secs()) {
            Some(v) => (v, true),
            None => (vec![0.0; d_emb], false),
        }
    } else {
        (vec![0.0; d_emb], false)
    };
    EnrichedFeature {
        vector,
        source,
        user_agg,
        user_agg_present,
    }
}
