//! Concurrent (user, item)-keyed embedding store.
//!
//! Freshness is enforced at read time: `get` returns an entry only while its
//! age is at most the caller's TTL (boundary inclusive). Expired entries stay
//! in place, still count toward capacity, and are reclaimed by an explicit
//! `compact` pass. Capacity overruns evict least-recently-used keys. A
//! per-user secondary index serves windowed scans for the aggregation
//! feature. All clocks are injected simulated time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::teacher::TeacherEmbedding;
use crate::{SimDuration, SimTime};

/// Cache key; ordered user-major, item-minor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub user_id: u64,
    pub item_id: u64,
}

impl CacheKey {
    pub fn new(user_id: u64, item_id: u64) -> Self {
        CacheKey { user_id, item_id }
    }
}

#[derive(Debug, Clone)]
struct StoredEntry {
    embedding: TeacherEmbedding,
    written_at: SimTime,
    /// Recency sequence for LRU bookkeeping.
    seq: u64,
}

/// Age buckets (upper bounds, seconds) for the served-entry freshness
/// histogram. The last bucket is unbounded.
pub const FRESHNESS_BUCKET_BOUNDS_SECS: [f64; 7] = [
    60.0,
    600.0,
    3_600.0,
    3.0 * 3_600.0,
    6.0 * 3_600.0,
    12.0 * 3_600.0,
    24.0 * 3_600.0,
];
const N_BUCKETS: usize = FRESHNESS_BUCKET_BOUNDS_SECS.len() + 1;

/// Monotone operation counters. `lookups = exact_hits + expired_hits + misses`
/// at every snapshot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub lookups: u64,
    pub exact_hits: u64,
    pub expired_hits: u64,
    pub misses: u64,
    pub insertions: u64,
    pub evictions: u64,
    /// Counts of served-entry ages, bucketed by `FRESHNESS_BUCKET_BOUNDS_SECS`.
    pub freshness_histogram: Vec<u64>,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.exact_hits as f64 / self.lookups as f64
        }
    }
}

#[derive(Default)]
struct StatCounters {
    lookups: AtomicU64,
    exact_hits: AtomicU64,
    expired_hits: AtomicU64,
    misses: AtomicU64,
    insertions: AtomicU64,
    evictions: AtomicU64,
    freshness: [AtomicU64; N_BUCKETS],
}

struct Inner {
    entries: HashMap<CacheKey, StoredEntry>,
    /// Secondary index: user -> item ids with live entries.
    by_user: HashMap<u64, BTreeSet<u64>>,
    /// Reverse index: item -> user ids with live entries; serves the
    /// neighbor-imputation probe.
    by_item: HashMap<u64, BTreeSet<u64>>,
    /// Recency order: seq -> key; smallest seq is least recently used.
    recency: BTreeMap<u64, CacheKey>,
    next_seq: u64,
}

/// Thread-safe TTL-on-read embedding cache with LRU capacity eviction.
pub struct EmbedCache {
    inner: Mutex<Inner>,
    stats: StatCounters,
    capacity: usize,
}

/// Row of a cache dump or snapshot file. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub user_id: u64,
    pub item_id: u64,
    pub vector: Vec<f64>,
    pub computed_at: SimTime,
    pub written_at: SimTime,
}

impl EmbedCache {
    /// Creates a cache holding at most `capacity` entries.
    pub fn new(capacity: usize) -> Result<EmbedCache> {
        if capacity == 0 {
            return Err(Error::invalid_config("cache.capacity", "must be >= 1"));
        }
        Ok(EmbedCache {
            inner: Mutex::new(Inner {
                entries: HashMap::new(),
                by_user: HashMap::new(),
                by_item: HashMap::new(),
                recency: BTreeMap::new(),
                next_seq: 0,
            }),
            stats: StatCounters::default(),
            capacity,
        })
    }

    /// Stores an embedding, overwriting any prior entry for the key. May
    /// evict least-recently-used keys if capacity is exceeded.
    pub fn put(&self, key: CacheKey, embedding: TeacherEmbedding, now: SimTime) {
        let mut inner = self.inner.lock().expect("cache lock");
        let inner = &mut *inner;
        let seq = inner.next_seq;
        inner.next_seq += 1;
        if let Some(old) = inner.entries.insert(
            key,
            StoredEntry {
                embedding,
                written_at: now,
                seq,
            },
        ) {
            inner.recency.remove(&old.seq);
        } else {
            inner.by_user.entry(key.user_id).or_default().insert(key.item_id);
            inner.by_item.entry(key.item_id).or_default().insert(key.user_id);
        }
        inner.recency.insert(seq, key);
        self.stats.insertions.fetch_add(1, Ordering::Relaxed);
        while inner.entries.len() > self.capacity {
            let (&oldest_seq, &victim) = inner.recency.iter().next().expect("non-empty recency");
            inner.recency.remove(&oldest_seq);
            inner.entries.remove(&victim);
            Self::unindex(&mut inner.by_user, &mut inner.by_item, victim);
            self.stats.evictions.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Returns the embedding iff present and aged at most `ttl` (inclusive).
    /// An expired entry counts as `expired_hits`; absence as `misses`. Exactly
    /// one lookup is recorded per call.
    pub fn get(&self, key: CacheKey, now: SimTime, ttl: SimDuration) -> Option<TeacherEmbedding> {
        debug_assert!(ttl > 0.0, "ttl must be positive");
        self.stats.lookups.fetch_add(1, Ordering::Relaxed);
        let mut inner = self.inner.lock().expect("cache lock");
        let Some(entry) = inner.entries.get(&key) else {
            self.stats.misses.fetch_add(1, Ordering::Relaxed);
            return None;
        };
        let age = now - entry.written_at;
        if age > ttl {
            self.stats.expired_hits.fetch_add(1, Ordering::Relaxed);
            return None;
        }
        let embedding = entry.embedding.clone();
        let old_seq = entry.seq;
        let seq = inner.next_seq;
        inner.next_seq += 1;
        inner.recency.remove(&old_seq);
        inner.recency.insert(seq, key);
        if let Some(e) = inner.entries.get_mut(&key) {
            e.seq = seq;
        }
        self.stats.exact_hits.fetch_add(1, Ordering::Relaxed);
        self.stats.freshness[freshness_bucket(age)].fetch_add(1, Ordering::Relaxed);
        Some(embedding)
    }

    /// `get` freshness semantics without touching statistics or recency.
    /// Used by enrichment probes so imputation scans do not distort hit-rate
    /// accounting.
    pub fn peek(&self, key: CacheKey, now: SimTime, ttl: SimDuration) -> Option<TeacherEmbedding> {
        let inner = self.inner.lock().expect("cache lock");
        inner.entries.get(&key).and_then(|entry| {
            if now - entry.written_at <= ttl {
                Some(entry.embedding.clone())
            } else {
                None
            }
        })
    }

    /// True if the key holds an entry aged at most `max_age`. Stat-free.
    pub fn is_fresh(&self, key: CacheKey, now: SimTime, max_age: SimDuration) -> bool {
        let inner = self.inner.lock().expect("cache lock");
        inner
            .entries
            .get(&key)
            .map(|e| now - e.written_at <= max_age)
            .unwrap_or(false)
    }

    /// All live entries of `user_id` written within `window`, ascending by
    /// item id. Does not mutate hit/miss statistics.
    pub fn scan_user(
        &self,
        user_id: u64,
        now: SimTime,
        window: SimDuration,
    ) -> Vec<(u64, TeacherEmbedding, SimTime)> {
        debug_assert!(window > 0.0, "window must be positive");
        let inner = self.inner.lock().expect("cache lock");
        let Some(items) = inner.by_user.get(&user_id) else {
            return Vec::new();
        };
        items
            .iter()
            .filter_map(|&item_id| {
                let key = CacheKey::new(user_id, item_id);
                let entry = inner.entries.get(&key)?;
                if now - entry.written_at <= window {
                    Some((item_id, entry.embedding.clone(), entry.written_at))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Users holding a fresh (age <= ttl) entry for `item_id`, ascending by
    /// user id. One consistent probe; does not mutate statistics. Serves the
    /// neighbor-imputation scan.
    pub fn users_with_item_fresh(&self, item_id: u64, now: SimTime, ttl: SimDuration) -> Vec<u64> {
        let inner = self.inner.lock().expect("cache lock");
        let Some(users) = inner.by_item.get(&item_id) else {
            return Vec::new();
        };
        users
            .iter()
            .filter(|&&user_id| {
                inner
                    .entries
                    .get(&CacheKey::new(user_id, item_id))
                    .map(|e| now - e.written_at <= ttl)
                    .unwrap_or(false)
            })
            .copied()
            .collect()
    }

    /// Removes a single key (verifier-driven eviction). Returns whether an
    /// entry existed.
    pub fn remove(&self, key: CacheKey) -> bool {
        let mut inner = self.inner.lock().expect("cache lock");
        let inner = &mut *inner;
        if let Some(old) = inner.entries.remove(&key) {
            inner.recency.remove(&old.seq);
            Self::unindex(&mut inner.by_user, &mut inner.by_item, key);
            self.stats.evictions.fetch_add(1, Ordering::Relaxed);
            true
        } else {
            false
        }
    }

    /// Reclaims entries older than `retention`. Returns the number removed.
    pub fn compact(&self, now: SimTime, retention: SimDuration) -> usize {
        let mut inner = self.inner.lock().expect("cache lock");
        let inner = &mut *inner;
        let stale: Vec<(CacheKey, u64)> = inner
            .entries
            .iter()
            .filter(|(_, e)| now - e.written_at > retention)
            .map(|(k, e)| (*k, e.seq))
            .collect();
        for (key, seq) in &stale {
            inner.entries.remove(key);
            inner.recency.remove(seq);
            Self::unindex(&mut inner.by_user, &mut inner.by_item, *key);
        }
        stale.len()
    }

    fn unindex(
        by_user: &mut HashMap<u64, BTreeSet<u64>>,
        by_item: &mut HashMap<u64, BTreeSet<u64>>,
        key: CacheKey,
    ) {
        if let Some(items) = by_user.get_mut(&key.user_id) {
            items.remove(&key.item_id);
            if items.is_empty() {
                by_user.remove(&key.user_id);
            }
        }
        if let Some(users) = by_item.get_mut(&key.item_id) {
            users.remove(&key.user_id);
            if users.is_empty() {
                by_item.remove(&key.item_id);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Consistent snapshot of the counters.
    pub fn stats(&self) -> CacheStats {
        CacheStats {
            lookups: self.stats.lookups.load(Ordering::Relaxed),
            exact_hits: self.stats.exact_hits.load(Ordering::Relaxed),
            expired_hits: self.stats.expired_hits.load(Ordering::Relaxed),
            misses: self.stats.misses.load(Ordering::Relaxed),
            insertions: self.stats.insertions.load(Ordering::Relaxed),
            evictions: self.stats.evictions.load(Ordering::Relaxed),
            freshness_histogram: self
                .stats
                .freshness
                .iter()
                .map(|c| c.load(Ordering::Relaxed))
                .collect(),
        }
    }

    /// Full entry listing sorted by key. Test oracle surface and snapshot
    /// source.
    pub fn dump(&self) -> Vec<SnapshotRow> {
        let inner = self.inner.lock().expect("cache lock");
        let mut rows: Vec<SnapshotRow> = inner
            .entries
            .iter()
            .map(|(k, e)| SnapshotRow {
                user_id: k.user_id,
                item_id: k.item_id,
                vector: e.embedding.vector.clone(),
                computed_at: e.embedding.computed_at,
                written_at: e.written_at,
            })
            .collect();
        rows.sort_by_key(|r| (r.user_id, r.item_id));
        rows
    }

    pub fn snapshot_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.dump())?)
    }

    /// Rebuilds a cache from a snapshot. Entry ages are preserved; recency
    /// order resets to key order (LRU state is not part of the format).
    /// Stats start at zero.
    pub fn load_snapshot_json(text: &str, capacity: usize) -> Result<EmbedCache> {
        let rows: Vec<SnapshotRow> = serde_json::from_str(text)?;
        Self::from_rows(rows, capacity)
    }

    pub fn from_rows(mut rows: Vec<SnapshotRow>, capacity: usize) -> Result<EmbedCache> {
        let cache = EmbedCache::new(capacity)?;
        rows.sort_by_key(|r| (r.user_id, r.item_id));
        let dim = rows.first().map(|r| r.vector.len()).unwrap_or(0);
        {
            let mut inner = cache.inner.lock().expect("cache lock");
            let inner = &mut *inner;
            for row in rows {
                if row.vector.len() != dim {
                    return Err(Error::malformed(
                        "cache snapshot",
                        format!(
                            "inconsistent vector dimension: {} vs {}",
                            row.vector.len(),
                            dim
                        ),
                    ));
                }
                if row.vector.iter().any(|v| !v.is_finite())
                    || !row.written_at.is_finite()
                    || !row.computed_at.is_finite()
                {
                    return Err(Error::NonFinite("cache snapshot row"));
                }
                let key = CacheKey::new(row.user_id, row.item_id);
                if inner.entries.len() >= capacity && !inner.entries.contains_key(&key) {
                    return Err(Error::malformed(
                        "cache snapshot",
                        format!("more than {capacity} entries"),
                    ));
                }
                let seq = inner.next_seq;
                inner.next_seq += 1;
                if let Some(old) = inner.entries.insert(
                    key,
                    StoredEntry {
                        embedding: TeacherEmbedding {
                            vector: row.vector,
                            computed_at: row.computed_at,
                        },
                        written_at: row.written_at,
                        seq,
                    },
                ) {
                    inner.recency.remove(&old.seq);
                } else {
                    inner.by_user.entry(key.user_id).or_default().insert(key.item_id);
                    inner.by_item.entry(key.item_id).or_default().insert(key.user_id);
                }
                inner.recency.insert(seq, key);
            }
        }
        Ok(cache)
    }
}

fn freshness_bucket(age: f64) -> usize {
    FRESHNESS_BUCKET_BOUNDS_SECS
        .iter()
        .position(|&b| age <= b)
        .unwrap_or(N_BUCKETS - 1)
}
