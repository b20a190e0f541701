//! Newline-delimited JSON import/export for replay artifacts.
//!
//! Request streams round-trip as one JSON object per line with fields
//! `{request_id, user_id, timestamp, candidates[]}`. Import validates the
//! stream invariants (distinct candidates, non-decreasing timestamps) so a
//! corrupted trace cannot silently skew a replay.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::world::RankingRequest;

/// Serializes any record stream as JSON lines.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn requests_to_jsonl(requests: &[RankingRequest]) -> Result<String> {
    let mut out = String::new();
    for request in requests {
        out.push_str(&serde_json::to_string(request)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a request stream from JSON lines, validating stream invariants.
/// Blank lines are ignored.
pub fn requests_from_jsonl(text: &str) -> Result<Vec<RankingRequest>> {
    let mut requests = Vec::new();
    let mut last_timestamp = f64::NEG_INFINITY;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let request: RankingRequest = serde_json::from_str(line).map_err(|e| {
            Error::malformed("request stream", format!("line {}: {e}", lineno + 1))
        })?;
        if !request.timestamp.is_finite() {
            return Err(Error::malformed(
                "request stream",
                format!("line {}: non-finite timestamp", lineno + 1),
            ));
        }
        if request.timestamp < last_timestamp {
            return Err(Error::malformed(
                "request stream",
                format!("line {}: timestamps must be non-decreasing", lineno + 1),
            ));
        }
        if request.candidates.is_empty() {
            return Err(Error::malformed(
                "request stream",
                format!("line {}: empty candidate list", lineno + 1),
            ));
        }
        let distinct: HashSet<u64> = request.candidates.iter().copied().collect();
        if distinct.len() != request.candidates.len() {
            return Err(Error::malformed(
                "request stream",
                format!("line {}: duplicate candidates", lineno + 1),
            ));
        }
        last_timestamp = request.timestamp;
        requests.push(request);
    }
    Ok(requests)
}

pub fn read_requests_path(path: &Path) -> Result<Vec<RankingRequest>> {
    let text = std::fs::read_to_string(path)?;
    requests_from_jsonl(&text)
}
