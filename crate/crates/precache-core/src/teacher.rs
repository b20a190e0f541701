//! Stand-in foundation model.
//!
//! Interaction embeddings are a fixed random linear projection of the raw
//! interaction vector `[u⊙v | u | v]` (so `d_raw = 3·d_lat`). The projection
//! replaces a learned compressor; it is drawn once from the seed and reused
//! for the whole run, which keeps every embedding a pure function of
//! (seed, user, item). Per-user embeddings for the neighbor table project the
//! user latent alone through the same map.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precompute::WorkerConfig;
use crate::rng::{self, stream};
use crate::world::World;
use crate::{SimDuration, SimTime};

/// Compressed user-item interaction vector plus its computation timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherEmbedding {
    pub vector: Vec<f64>,
    pub computed_at: SimTime,
}

/// Fixed projection from raw interaction space (d_raw) to embedding space
/// (d_emb). Immutable for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionMap {
    pub d_raw: usize,
    pub d_emb: usize,
    /// Row-major: `matrix[i][j]` maps raw component i to embedding component j.
    pub matrix: Vec<Vec<f64>>,
}

impl CompressionMap {
    /// Draws the projection from the seed. Entries are N(0, 1/d_raw) so the
    /// embedding scale stays comparable to the raw scale.
    pub fn generate(seed: u64, d_lat: usize, d_emb: usize) -> Result<CompressionMap> {
        let d_raw = 3 * d_lat;
        if d_emb == 0 || d_emb > d_raw {
            return Err(Error::invalid_config(
                "teacher.d_emb",
                format!("must be in 1..={d_raw} (= 3*d_lat)"),
            ));
        }
        let mut r = rng::rng_from(&[seed, stream::PROJECTION]);
        let normal = Normal::new(0.0, 1.0 / (d_raw as f64).sqrt()).expect("unit normal");
        let matrix = (0..d_raw)
            .map(|_| (0..d_emb).map(|_| normal.sample(&mut r)).collect())
            .collect();
        let map = CompressionMap { d_raw, d_emb, matrix };
        debug_assert!(map.has_full_column_rank());
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.d_raw == 0 || self.d_emb > self.d_raw {
            return Err(Error::malformed(
                "compression map",
                format!("bad shape {}x{}", self.d_raw, self.d_emb),
            ));
        }
        if self.matrix.len() != self.d_raw {
            return Err(Error::malformed(
                "compression map",
                format!("expected {} rows, found {}", self.d_raw, self.matrix.len()),
            ));
        }
        for row in &self.matrix {
            if row.len() != self.d_emb {
                return Err(Error::malformed(
                    "compression map",
                    format!("expected {} columns, found {}", self.d_emb, row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("compression map entry"));
            }
        }
        if !self.has_full_column_rank() {
            return Err(Error::malformed("compression map", "rank-deficient projection"));
        }
        Ok(())
    }

    /// Rank check via Gaussian elimination on the d_emb x d_emb Gram matrix.
    fn has_full_column_rank(&self) -> bool {
        let n = self.d_emb;
        let mut gram = vec![vec![0.0f64; n]; n];
        let mut scale = 0.0f64;
        for (i, gi) in gram.iter_mut().enumerate() {
            for j in 0..n {
                let mut s = 0.0;
                for row in &self.matrix {
                    s += row[i] * row[j];
                }
                gi[j] = s;
                scale = scale.max(s.abs());
            }
        }
        if scale == 0.0 {
            return false;
        }
        let eps = 1e-10 * scale;
        for col in 0..n {
            let (pivot_row, pivot) = (col..n)
                .map(|r| (r, gram[r][col].abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty range");
            if pivot <= eps {
                return false;
            }
            gram.swap(col, pivot_row);
            for r in col + 1..n {
                let f = gram[r][col] / gram[col][col];
                for c in col..n {
                    gram[r][c] -= f * gram[col][c];
                }
            }
        }
        true
    }

    /// Applies the projection to a raw vector.
    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.d_raw {
            return Err(Error::DimensionMismatch {
                what: "raw interaction vector",
                expected: self.d_raw,
                actual: raw.len(),
            });
        }
        let mut out = vec![0.0; self.d_emb];
        for (x, row) in raw.iter().zip(&self.matrix) {
            if *x != 0.0 {
                for (o, m) in out.iter_mut().zip(row) {
                    *o += x * m;
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<CompressionMap> {
        let map: CompressionMap = serde_json::from_str(text)?;
        map.validate()?;
        Ok(map)
    }
}

/// Raw interaction vector: elementwise product, then the two latents.
/// The product occupies the first `d_lat` slots.
pub fn raw_interaction(user_latent: &[f64], item_latent: &[f64]) -> Result<Vec<f64>> {
    if user_latent.len() != item_latent.len() {
        return Err(Error::DimensionMismatch {
            what: "latent pair",
            expected: user_latent.len(),
            actual: item_latent.len(),
        });
    }
    let mut raw = Vec::with_capacity(3 * user_latent.len());
    raw.extend(user_latent.iter().zip(item_latent).map(|(u, v)| u * v));
    raw.extend_from_slice(user_latent);
    raw.extend_from_slice(item_latent);
    Ok(raw)
}

/// The teacher: a compression map bound to the world's latent dimension.
pub struct Teacher {
    pub map: CompressionMap,
    d_lat: usize,
}

impl Teacher {
    pub fn new(seed: u64, d_lat: usize, d_emb: usize) -> Result<Teacher> {
        Ok(Teacher {
            map: CompressionMap::generate(seed, d_lat, d_emb)?,
            d_lat,
        })
    }

    pub fn with_map(map: CompressionMap, d_lat: usize) -> Result<Teacher> {
        if map.d_raw != 3 * d_lat {
            return Err(Error::DimensionMismatch {
                what: "compression map rows",
                expected: 3 * d_lat,
                actual: map.d_raw,
            });
        }
        Ok(Teacher { map, d_lat })
    }

    pub fn d_emb(&self) -> usize {
        self.map.d_emb
    }

    /// Interaction embedding for a pair. The vector depends only on
    /// (seed, user, item); `clock` is stamped as metadata.
    pub fn compute_interaction_embedding(
        &self,
        world: &World,
        user_id: u64,
        item_id: u64,
        clock: SimTime,
    ) -> Result<TeacherEmbedding> {
        let user = world.user(user_id)?;
        let item = world.item(item_id)?;
        let raw = raw_interaction(&user.latent, &item.latent)?;
        Ok(TeacherEmbedding {
            vector: self.map.apply(&raw)?,
            computed_at: clock,
        })
    }

    /// User-only embedding used by the neighbor table: the user latent in the
    /// middle raw block, zero elsewhere, through the same projection. Linear
    /// in the latent, so opposite users get cosine -1.
    pub fn compute_user_embedding(&self, world: &World, user_id: u64) -> Result<Vec<f64>> {
        let user = world.user(user_id)?;
        let mut raw = vec![0.0; 3 * self.d_lat];
        raw[self.d_lat..2 * self.d_lat].copy_from_slice(&user.latent);
        self.map.apply(&raw)
    }
}

/// Per-embedding cost charged to the background worker clock. Never charged
/// to the serving path.
pub fn simulate_compute_latency(config: &WorkerConfig) -> SimDuration {
    config.per_embedding_cost_ms / 1000.0
}
