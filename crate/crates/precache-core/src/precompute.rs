//! Asynchronous precompute pipeline.
//!
//! Serving threads enqueue work (verifier-selected speculation plus miss
//! re-enqueues); workers drain it on a fixed refresh cycle, charge simulated
//! teacher cost to the background clock, and write embeddings into the
//! cache. Miss re-enqueues outrank speculation: a realized miss is demand,
//! a speculation is a guess. Within a class the queue is FIFO.
//!
//! Workers are simulated on the logical clock, so a run is deterministic;
//! the queue itself is safe for concurrent producers.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheKey, EmbedCache};
use crate::error::Result;
use crate::teacher::{simulate_compute_latency, Teacher};
use crate::verifier::VerifierDecision;
use crate::world::{RankingRequest, World};
use crate::{Error, SimDuration, SimTime};

/// Why a task entered the queue. Miss re-enqueues form the higher priority
/// class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrigin {
    RequestSpeculation,
    MissRequeue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputeTask {
    pub key: CacheKey,
    pub enqueued_at: SimTime,
    pub origin: TaskOrigin,
}

/// Background worker pool configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkerConfig {
    pub worker_count: usize,
    /// Simulated cost of one teacher embedding, in milliseconds.
    pub per_embedding_cost_ms: f64,
    /// Refresh cycle period, in seconds.
    pub cycle_period_secs: f64,
    pub queue_capacity: usize,
    /// Window within which repeated enqueues of one key are collapsed, in
    /// seconds.
    pub dedup_window_secs: f64,
    /// Skip speculation for entries younger than this fraction of the TTL.
    pub refresh_skip_fraction: f64,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            worker_count: 2,
            per_embedding_cost_ms: 50.0,
            cycle_period_secs: 60.0,
            queue_capacity: 100_000,
            dedup_window_secs: 60.0,
            refresh_skip_fraction: 0.5,
        }
    }
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.worker_count == 0 {
            return Err(Error::invalid_config("precompute.worker_count", "must be >= 1"));
        }
        if !(self.cycle_period_secs > 0.0) {
            return Err(Error::invalid_config(
                "precompute.cycle_period_secs",
                "must be > 0",
            ));
        }
        if !(self.per_embedding_cost_ms >= 0.0) {
            return Err(Error::invalid_config(
                "precompute.per_embedding_cost_ms",
                "must be >= 0",
            ));
        }
        if self.queue_capacity == 0 {
            return Err(Error::invalid_config(
                "precompute.queue_capacity",
                "must be >= 1",
            ));
        }
        if !(self.dedup_window_secs >= 0.0) {
            return Err(Error::invalid_config(
                "precompute.dedup_window_secs",
                "must be >= 0",
            ));
        }
        if !(0.0..=1.0).contains(&self.refresh_skip_fraction) {
            return Err(Error::invalid_config(
                "precompute.refresh_skip_fraction",
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Task budget of one cycle: worker_count * (cycle_period / cost).
    /// Zero cost means the cycle drains everything.
    pub fn cycle_task_budget(&self) -> usize {
        let cost = simulate_compute_latency(self);
        if cost == 0.0 {
            usize::MAX
        } else {
            self.worker_count * (self.cycle_period_secs / cost).floor() as usize
        }
    }
}

/// Monotone queue counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    pub enqueued_speculation: u64,
    pub enqueued_miss: u64,
    pub dedup_skips: u64,
    pub fresh_skips: u64,
    pub dropped_speculation: u64,
    pub dropped_arriving: u64,
}

#[derive(Default)]
struct QueueInner {
    miss: VecDeque<PrecomputeTask>,
    speculation: VecDeque<PrecomputeTask>,
    /// Keys with a task currently queued.
    queued: HashSet<CacheKey>,
    /// Last enqueue time per key, for the dedup window.
    recent: HashMap<CacheKey, SimTime>,
    stats: QueueStats,
}

/// Multi-producer task queue with class priorities, key dedup, and a bounded
/// footprint with a speculation-first drop policy.
pub struct PrecomputeQueue {
    inner: Mutex<QueueInner>,
    capacity: usize,
    dedup_window: SimDuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Enqueued,
    /// Same key already queued or enqueued within the dedup window.
    DedupSkipped,
    /// Queue full of higher-or-equal priority work; the arriving task was
    /// discarded.
    RejectedFull,
}

impl PrecomputeQueue {
    pub fn new(config: &WorkerConfig) -> PrecomputeQueue {
        PrecomputeQueue {
            inner: Mutex::new(QueueInner::default()),
            capacity: config.queue_capacity,
            dedup_window: config.dedup_window_secs,
        }
    }

    pub fn len(&self) -> usize {
        let inner = self.inner.lock().expect("queue lock");
        inner.miss.len() + inner.speculation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> QueueStats {
        self.inner.lock().expect("queue lock").stats.clone()
    }

    /// Enqueues one task, applying dedup and the bounded-queue drop policy:
    /// oldest speculation tasks are dropped first; miss re-enqueues are never
    /// dropped to admit speculation.
    pub fn enqueue(&self, task: PrecomputeTask) -> EnqueueOutcome {
        let mut inner = self.inner.lock().expect("queue lock");
        if inner.queued.contains(&task.key) {
            inner.stats.dedup_skips += 1;
            return EnqueueOutcome::DedupSkipped;
        }
        if let Some(&last) = inner.recent.get(&task.key) {
            if task.enqueued_at - last <= self.dedup_window {
                inner.stats.dedup_skips += 1;
                return EnqueueOutcome::DedupSkipped;
            }
        }
        while inner.miss.len() + inner.speculation.len() >= self.capacity {
            if let Some(dropped) = inner.speculation.pop_front() {
                inner.queued.remove(&dropped.key);
                inner.stats.dropped_speculation += 1;
            } else if task.origin == TaskOrigin::RequestSpeculation {
                // Full of misses; an arriving speculation loses.
                inner.stats.dropped_arriving += 1;
                return EnqueueOutcome::RejectedFull;
            } else {
                // Full of misses and another miss arrives: drop the oldest
                // miss to keep the freshest demand signal.
                let dropped = inner.miss.pop_front().expect("queue non-empty");
                inner.queued.remove(&dropped.key);
                inner.stats.dropped_speculation += 1;
            }
        }
        inner.queued.insert(task.key);
        inner.recent.insert(task.key, task.enqueued_at);
        match task.origin {
            TaskOrigin::MissRequeue => {
                inner.stats.enqueued_miss += 1;
                inner.miss.push_back(task);
            }
            TaskOrigin::RequestSpeculation => {
                inner.stats.enqueued_speculation += 1;
                inner.speculation.push_back(task);
            }
        }
        EnqueueOutcome::Enqueued
    }

    fn next_task(&self) -> Option<PrecomputeTask> {
        let mut inner = self.inner.lock().expect("queue lock");
        let task = inner.miss.pop_front().or_else(|| inner.speculation.pop_front())?;
        inner.queued.remove(&task.key);
        Some(task)
    }

    /// Drops dedup-window bookkeeping older than the window. Called once per
    /// cycle to bound the map.
    fn prune_recent(&self, now: SimTime) {
        let mut inner = self.inner.lock().expect("queue lock");
        let window = self.dedup_window;
        inner.recent.retain(|_, &mut t| now - t <= window);
    }

    #[cfg(test)]
    pub(crate) fn queued_keys(&self) -> Vec<CacheKey> {
        let inner = self.inner.lock().expect("queue lock");
        inner
            .miss
            .iter()
            .chain(inner.speculation.iter())
            .map(|t| t.key)
            .collect()
    }
}

/// Enqueues speculation tasks for a verifier decision. Pairs whose cache
/// entry is younger than `refresh_skip_fraction * ttl` are skipped; the rest
/// go through queue dedup.
pub fn speculate(
    queue: &PrecomputeQueue,
    cache: &EmbedCache,
    request: &RankingRequest,
    decision: &VerifierDecision,
    now: SimTime,
    ttl: SimDuration,
    refresh_skip_fraction: f64,
) -> Vec<PrecomputeTask> {
    debug_assert_eq!(decision.request_id, request.request_id);
    let skip_age = refresh_skip_fraction * ttl;
    let mut enqueued = Vec::new();
    for &item_id in &decision.selected {
        let key = CacheKey::new(request.user_id, item_id);
        if cache.is_fresh(key, now, skip_age) {
            queue.inner.lock().expect("queue lock").stats.fresh_skips += 1;
            continue;
        }
        let task = PrecomputeTask {
            key,
            enqueued_at: now,
            origin: TaskOrigin::RequestSpeculation,
        };
        if queue.enqueue(task.clone()) == EnqueueOutcome::Enqueued {
            enqueued.push(task);
        }
    }
    enqueued
}

/// Re-enqueues a serving-path miss or TTL expiry. The task is considered in
/// the first cycle after `now`; dedup collapses repeated misses of one key.
pub fn requeue_miss(queue: &PrecomputeQueue, key: CacheKey, now: SimTime) -> EnqueueOutcome {
    queue.enqueue(PrecomputeTask {
        key,
        enqueued_at: now,
        origin: TaskOrigin::MissRequeue,
    })
}

/// Outcome of one refresh cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle_start: SimTime,
    pub tasks_processed: u64,
    pub embeddings_written: u64,
    pub failures: u64,
    /// Total worker-seconds charged for this cycle.
    pub simulated_worker_time: f64,
    pub queue_depth_after: usize,
}

/// Runs one refresh cycle at logical time `now`: processes up to the cycle
/// budget of tasks, misses first, FIFO within class. Each processed task
/// computes the teacher embedding at `now` and writes it into the cache.
/// Leftover tasks carry over to the next cycle.
pub fn run_cycle(
    queue: &PrecomputeQueue,
    cache: &EmbedCache,
    teacher: &Teacher,
    world: &World,
    config: &WorkerConfig,
    now: SimTime,
) -> CycleReport {
    let budget = config.cycle_task_budget();
    let cost = simulate_compute_latency(config);
    let mut report = CycleReport {
        cycle_start: now,
        tasks_processed: 0,
        embeddings_written: 0,
        failures: 0,
        simulated_worker_time: 0.0,
        queue_depth_after: 0,
    };
    while (report.tasks_processed as usize) < budget {
        let Some(task) = queue.next_task() else { break };
        report.tasks_processed += 1;
        report.simulated_worker_time += cost;
        match teacher.compute_interaction_embedding(world, task.key.user_id, task.key.item_id, now)
        {
            Ok(embedding) => {
                cache.put(task.key, embedding, now);
                report.embeddings_written += 1;
            }
            Err(_) => report.failures += 1,
        }
    }
    queue.prune_recent(now);
    report.queue_depth_after = queue.len();
    report
}
