//! Synthetic population and request stream.
//!
//! A latent-factor world: every user and item carries a `d_lat`-dimensional
//! latent vector; click-style labels are Bernoulli draws on the sigmoid of
//! their dot product. The request generator replays the temporal-locality
//! structure of production traffic by re-drawing candidate slots from the
//! user's recent candidate union.

use std::collections::{HashSet, VecDeque};
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::{SimDuration, SimTime, SECS_PER_HOUR};

/// Full configuration of the synthetic world and its request stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Latent-factor dimension shared by users and items.
    pub d_lat: usize,
    pub candidates_per_request: usize,
    /// Probability that a candidate slot is re-drawn from the user's recent
    /// candidate union instead of fresh popularity sampling.
    pub revisit_probability: f64,
    pub revisit_window_hours: f64,
    /// Per-hour magnitude of the user-latent random walk.
    pub drift_rate: f64,
    /// Std-dev of the logit noise added to each label draw.
    pub label_noise: f64,
    pub seed: u64,
    /// Mean of the exponential inter-request gap.
    pub mean_request_gap_secs: f64,
    /// Zipf-style exponent for item popularity weights.
    pub popularity_exponent: f64,
    /// Std-dev of the noise added to true affinity when ordering candidates.
    pub order_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_users: 1000,
            n_items: 300_000,
            d_lat: 16,
            candidates_per_request: 200,
            revisit_probability: 0.72,
            revisit_window_hours: 6.0,
            drift_rate: 0.0,
            label_noise: 0.0,
            seed: 42,
            mean_request_gap_secs: 10.0,
            popularity_exponent: 0.45,
            order_noise: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::invalid_config("world.n_users", "must be >= 1"));
        }
        if self.n_items == 0 {
            return Err(Error::invalid_config("world.n_items", "must be >= 1"));
        }
        if self.d_lat == 0 {
            return Err(Error::invalid_config("world.d_lat", "must be >= 1"));
        }
        if self.candidates_per_request == 0 {
            return Err(Error::invalid_config(
                "world.candidates_per_request",
                "must be >= 1",
            ));
        }
        if self.candidates_per_request > self.n_items {
            return Err(Error::invalid_config(
                "world.candidates_per_request",
                "cannot exceed n_items (candidates are distinct)",
            ));
        }
        if !(0.0..=1.0).contains(&self.revisit_probability) {
            return Err(Error::invalid_config(
                "world.revisit_probability",
                "must lie in [0, 1]",
            ));
        }
        if !(self.revisit_window_hours > 0.0) {
            return Err(Error::invalid_config(
                "world.revisit_window_hours",
                "must be > 0",
            ));
        }
        if !(self.drift_rate >= 0.0) {
            return Err(Error::invalid_config("world.drift_rate", "must be >= 0"));
        }
        if !(self.label_noise >= 0.0) {
            return Err(Error::invalid_config("world.label_noise", "must be >= 0"));
        }
        if !(self.mean_request_gap_secs > 0.0) {
            return Err(Error::invalid_config(
                "world.mean_request_gap_secs",
                "must be > 0",
            ));
        }
        if !(self.popularity_exponent >= 0.0) || !self.popularity_exponent.is_finite() {
            return Err(Error::invalid_config(
                "world.popularity_exponent",
                "must be finite and >= 0",
            ));
        }
        if !(self.order_noise >= 0.0) {
            return Err(Error::invalid_config("world.order_noise", "must be >= 0"));
        }
        Ok(())
    }

    pub fn revisit_window_secs(&self) -> SimDuration {
        self.revisit_window_hours * SECS_PER_HOUR
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u64,
    pub latent: Vec<f64>,
    pub drift_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemProfile {
    pub item_id: u64,
    pub latent: Vec<f64>,
    pub popularity_weight: f64,
}

/// One timestamped serving event: a user plus the candidate list produced by
/// the (stubbed) early ranking stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRequest {
    pub request_id: u64,
    pub user_id: u64,
    pub timestamp: SimTime,
    pub candidates: Vec<u64>,
}

struct DriftTrack {
    /// Hour bucket the cumulative walk has been advanced to.
    bucket: u64,
    /// Accumulated random-walk offset (already scaled by drift_rate).
    cum: Vec<f64>,
}

/// Immutable synthetic population. Label and drift queries are deterministic
/// functions of (seed, user, item, clock); the internal drift cache is memo
/// only.
pub struct World {
    pub config: WorldConfig,
    pub users: Vec<UserProfile>,
    pub items: Vec<ItemProfile>,
    popularity_cdf: Vec<f64>,
    drift: Mutex<Vec<DriftTrack>>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds the world from the config. Two calls with equal config produce
/// bit-identical worlds.
pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut gen = rng::rng_from(&[config.seed, stream::WORLD]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let users = (0..config.n_users)
        .map(|id| UserProfile {
            user_id: id as u64,
            latent: (0..config.d_lat).map(|_| normal.sample(&mut gen)).collect(),
            drift_rate: config.drift_rate,
        })
        .collect();

    let mut items = Vec::with_capacity(config.n_items);
    let mut popularity_cdf = Vec::with_capacity(config.n_items);
    let mut acc = 0.0;
    for id in 0..config.n_items {
        let latent: Vec<f64> = (0..config.d_lat).map(|_| normal.sample(&mut gen)).collect();
        let weight = ((id + 1) as f64).powf(-config.popularity_exponent);
        acc += weight;
        popularity_cdf.push(acc);
        items.push(ItemProfile {
            item_id: id as u64,
            latent,
            popularity_weight: weight,
        });
    }

    let drift = Mutex::new(
        (0..config.n_users)
            .map(|_| DriftTrack {
                bucket: 0,
                cum: vec![0.0; config.d_lat],
            })
            .collect(),
    );

    Ok(World {
        config: config.clone(),
        users,
        items,
        popularity_cdf,
        drift,
    })
}

impl World {
    pub fn user(&self, user_id: u64) -> Result<&UserProfile> {
        self.users
            .get(user_id as usize)
            .ok_or(Error::UnknownUser(user_id))
    }

    pub fn item(&self, item_id: u64) -> Result<&ItemProfile> {
        self.items
            .get(item_id as usize)
            .ok_or(Error::UnknownItem(item_id))
    }

    /// Popularity-weighted item draw.
    pub fn sample_item(&self, rng: &mut ChaCha8Rng) -> u64 {
        let total = *self.popularity_cdf.last().expect("non-empty catalog");
        let x = rng.gen::<f64>() * total;
        self.popularity_cdf.partition_point(|&c| c < x).min(self.items.len() - 1) as u64
    }

    fn drift_step(&self, user_id: u64, bucket: u64) -> Vec<f64> {
        let mut r = rng::rng_from(&[self.config.seed, stream::DRIFT, user_id, bucket]);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (0..self.config.d_lat).map(|_| normal.sample(&mut r)).collect()
    }

    /// User latent at simulated time `clock`, reflecting the accumulated
    /// hourly random walk. With drift_rate = 0 this is the base latent.
    pub fn user_latent_at(&self, user_id: u64, clock: SimTime) -> Result<Vec<f64>> {
        let user = self.user(user_id)?;
        if self.config.drift_rate == 0.0 || clock < SECS_PER_HOUR {
            return Ok(user.latent.clone());
        }
        let bucket = (clock / SECS_PER_HOUR) as u64;
        let mut tracks = self.drift.lock().expect("drift cache poisoned");
        let track = &mut tracks[user_id as usize];
        if bucket < track.bucket {
            // Rewind query: recompute without disturbing the cache.
            let mut cum = vec![0.0; self.config.d_lat];
            for b in 1..=bucket {
                for (c, s) in cum.iter_mut().zip(self.drift_step(user_id, b)) {
                    *c += s * self.config.drift_rate;
                }
            }
            return Ok(user.latent.iter().zip(&cum).map(|(l, c)| l + c).collect());
        }
        while track.bucket < bucket {
            let next = track.bucket + 1;
            for (c, s) in track.cum.iter_mut().zip(self.drift_step(user_id, next)) {
                *c += s * self.config.drift_rate;
            }
            track.bucket = next;
        }
        Ok(user.latent.iter().zip(&track.cum).map(|(l, c)| l + c).collect())
    }

    /// True affinity logit of a pair at `clock` (no label noise).
    pub fn affinity(&self, user_id: u64, item_id: u64, clock: SimTime) -> Result<f64> {
        let u = self.user_latent_at(user_id, clock)?;
        let item = self.item(item_id)?;
        Ok(dot(&u, &item.latent))
    }

    /// Label probability for the pair at `clock`, including the deterministic
    /// per-(seed, user, item, clock) noise realization.
    pub fn label_probability(&self, user_id: u64, item_id: u64, clock: SimTime) -> Result<f64> {
        let logit = self.affinity(user_id, item_id, clock)?;
        let noise = if self.config.label_noise > 0.0 {
            let mut r = self.label_rng(user_id, item_id, clock);
            let normal = Normal::new(0.0, self.config.label_noise).expect("noise normal");
            normal.sample(&mut r)
        } else {
            0.0
        };
        Ok(sigmoid(logit + noise))
    }

    /// Bernoulli ground-truth label; deterministic given (seed, user, item,
    /// clock).
    pub fn true_label(&self, user_id: u64, item_id: u64, clock: SimTime) -> Result<bool> {
        let logit = self.affinity(user_id, item_id, clock)?;
        let mut r = self.label_rng(user_id, item_id, clock);
        let noise = if self.config.label_noise > 0.0 {
            let normal = Normal::new(0.0, self.config.label_noise).expect("noise normal");
            normal.sample(&mut r)
        } else {
            0.0
        };
        let p = sigmoid(logit + noise);
        Ok(r.gen::<f64>() < p)
    }

    fn label_rng(&self, user_id: u64, item_id: u64, clock: SimTime) -> ChaCha8Rng {
        rng::rng_from(&[
            self.config.seed,
            stream::LABELS,
            user_id,
            item_id,
            clock.to_bits(),
        ])
    }
}

/// Stateful generator producing the timestamped request stream.
///
/// Generation is single-threaded and deterministic; the emitted stream is an
/// immutable sequence safe to hand to concurrent consumers.
pub struct RequestGenerator<'w> {
    world: &'w World,
    rng: ChaCha8Rng,
    /// Per-user recent candidate sets: (timestamp, candidates).
    history: Vec<VecDeque<(SimTime, Vec<u64>)>>,
    clock: SimTime,
    next_id: u64,
}

impl<'w> RequestGenerator<'w> {
    pub fn new(world: &'w World) -> Self {
        RequestGenerator {
            world,
            rng: rng::rng_from(&[world.config.seed, stream::REQUESTS]),
            history: vec![VecDeque::new(); world.config.n_users],
            clock: 0.0,
            next_id: 0,
        }
    }

    /// Advances the simulated clock by an exponential gap and emits the next
    /// request.
    pub fn next_request(&mut self) -> RankingRequest {
        let gap = Exp::new(1.0 / self.world.config.mean_request_gap_secs)
            .expect("positive rate")
            .sample(&mut self.rng);
        let at = self.clock + gap;
        self.next_request_at(at).expect("monotone clock")
    }

    /// Emits a request at an explicit clock; `clock` must not precede the
    /// previous request.
    pub fn next_request_at(&mut self, clock: SimTime) -> Result<RankingRequest> {
        if clock < self.clock {
            return Err(Error::InvalidArgument(format!(
                "request clock {clock} precedes previous timestamp {}",
                self.clock
            )));
        }
        self.clock = clock;
        let cfg = &self.world.config;
        let user_id = self.rng.gen_range(0..cfg.n_users) as u64;

        let window_start = clock - cfg.revisit_window_secs();
        // Union of the user's recent candidate sets, in first-seen order.
        let mut union: Vec<u64> = Vec::new();
        {
            let user_hist = &mut self.history[user_id as usize];
            while let Some((t, _)) = user_hist.front() {
                if *t < window_start {
                    user_hist.pop_front();
                } else {
                    break;
                }
            }
            let mut seen = HashSet::new();
            for (_, cands) in user_hist.iter() {
                for &c in cands {
                    if seen.insert(c) {
                        union.push(c);
                    }
                }
            }
        }

        let mut candidates = Vec::with_capacity(cfg.candidates_per_request);
        let mut chosen: HashSet<u64> = HashSet::with_capacity(cfg.candidates_per_request);
        for _ in 0..cfg.candidates_per_request {
            let revisit =
                !union.is_empty() && self.rng.gen::<f64>() < cfg.revisit_probability;
            let item = self.draw_distinct(revisit, &union, &chosen);
            chosen.insert(item);
            candidates.push(item);
        }

        // Early-ranking view: order by descending true affinity plus noise.
        let user_latent = self.world.user_latent_at(user_id, clock)?;
        let mut scored: Vec<(f64, u64)> = candidates
            .into_iter()
            .map(|item| {
                let base = dot(&user_latent, &self.world.items[item as usize].latent);
                let noise = if cfg.order_noise > 0.0 {
                    Normal::new(0.0, cfg.order_noise)
                        .expect("order noise")
                        .sample(&mut self.rng)
                } else {
                    0.0
                };
                (base + noise, item)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let candidates: Vec<u64> = scored.into_iter().map(|(_, item)| item).collect();

        self.history[user_id as usize].push_back((clock, candidates.clone()));
        let request = RankingRequest {
            request_id: self.next_id,
            user_id,
            timestamp: clock,
            candidates,
        };
        self.next_id += 1;
        Ok(request)
    }

    /// Generates a full stream of `n` requests.
    pub fn take_stream(&mut self, n: usize) -> Vec<RankingRequest> {
        (0..n).map(|_| self.next_request()).collect()
    }

    fn draw_distinct(&mut self, revisit: bool, union: &[u64], chosen: &HashSet<u64>) -> u64 {
        if revisit {
            for _ in 0..32 {
                let item = union[self.rng.gen_range(0..union.len())];
                if !chosen.contains(&item) {
                    return item;
                }
            }
            // Revisit pool exhausted by earlier slots; fall through to fresh.
        }
        for _ in 0..256 {
            let item = self.world.sample_item(&mut self.rng);
            if !chosen.contains(&item) {
                return item;
            }
        }
        // Catalog nearly exhausted: take the lowest unused id.
        (0..self.world.config.n_items as u64)
            .find(|id| !chosen.contains(id))
            .expect("candidates_per_request <= n_items")
    }
}

/// Mean per-request overlap between each request's candidates and the union
/// of the same user's candidates within the preceding `window_secs`.
///
/// Requests whose user has no prior in-window history count as zero overlap.
/// This is an independent recount over the emitted stream; it does not
/// consult generator internals.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapStats {
    pub mean_overlap: f64,
    pub n_requests: usize,
    pub n_with_history: usize,
}

pub fn mean_candidate_overlap(requests: &[RankingRequest], window_secs: f64) -> OverlapStats {
    let mut per_user: std::collections::HashMap<u64, VecDeque<(SimTime, &[u64])>> =
        std::collections::HashMap::new();
    let mut total = 0.0;
    let mut with_history = 0;
    for req in requests {
        let hist = per_user.entry(req.user_id).or_default();
        while let Some((t, _)) = hist.front() {
            if *t < req.timestamp - window_secs {
                hist.pop_front();
            } else {
                break;
            }
        }
        let union: HashSet<u64> = hist.iter().flat_map(|(_, c)| c.iter().copied()).collect();
        if !union.is_empty() {
            with_history += 1;
            let hits = req.candidates.iter().filter(|c| union.contains(c)).count();
            total += hits as f64 / req.candidates.len() as f64;
        }
        hist.push_back((req.timestamp, &req.candidates));
    }
    OverlapStats {
        mean_overlap: if requests.is_empty() {
            0.0
        } else {
            total / requests.len() as f64
        },
        n_requests: requests.len(),
        n_with_history: with_history,
    }
}
