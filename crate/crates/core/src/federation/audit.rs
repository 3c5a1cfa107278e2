use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use serde_json::Value;

use super::log::{Direction, RoundLog};
use crate::measures::ProblemInstance;

/// The only keys a client may send.
pub const UPSTREAM_FIELDS: [&str; 4] = ["type", "round", "client_id", "t"];

/// Per-report frame budget `BYTES_PER_ENTRY * K + BYTES_OVERHEAD`.
pub const BYTES_PER_ENTRY: usize = 40;
pub const BYTES_OVERHEAD: usize = 96;

/// Field names that would carry private client data.
const PRIVATE_HINTS: [&str; 9] = [
    "particles",
    "points",
    "coords",
    "n",
    "num_particles",
    "weight",
    "lambda",
    "theta",
    "costs",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditFailure {
    /// Index into the log.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    pub failures: Vec<AuditFailure>,
    pub upstream_messages: usize,
    pub reports: usize,
    pub max_report_entries: usize,
    pub max_report_bytes: usize,
    pub k: usize,
}

impl AuditReport {
    pub fn first_failure(&self) -> Option<&AuditFailure> {
        self.failures.first()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed {
            write!(
                f,
                "PASS: {} upstream messages, {} reports, at most {} entries / {} bytes per report (K = {})",
                self.upstream_messages, self.reports, self.max_report_entries, self.max_report_bytes, self.k
            )
        } else {
            writeln!(f, "FAIL: {} violation(s)", self.failures.len())?;
            for fail in &self.failures {
                writeln!(f, "  message {}: {}", fail.index, fail.reason)?;
            }
            Ok(())
        }
    }
}

fn as_index(v: &Value) -> Option<u64> {
    v.as_u64()
}

/// Number of entries in a well-formed `t`, or the reason it is not.
fn check_t(t: &Value, k: usize) -> Result<usize, String> {
    let items = t.as_array().ok_or("`t` is not an array")?;
    if items.iter().all(Value::is_number) {
        if items.len() != k {
            return Err(format!("dense `t` has {} entries, expected K = {k}", items.len()));
        }
        return Ok(items.len());
    }
    let mut last: Option<u64> = None;
    for item in items {
        let pair = item.as_array().filter(|p| p.len() == 2).ok_or("`t` mixes scalars and pairs")?;
        let idx = as_index(&pair[0]).ok_or("sparse index is not an integer")?;
        if idx as usize >= k {
            return Err(format!("sparse index {idx} out of range for K = {k}"));
        }
        if last.is_some_and(|l| l >= idx) {
            return Err("sparse indices not strictly increasing".into());
        }
        if !pair[1].is_number() {
            return Err("sparse value is not a number".into());
        }
        last = Some(idx);
    }
    if items.is_empty() || items.len() > k {
        return Err(format!("sparse `t` has {} entries for K = {k}", items.len()));
    }
    Ok(items.len())
}

/// Checks that clients disclosed nothing but their per-candidate reports.
pub fn privacy_audit(log: &RoundLog, instance: &ProblemInstance) -> AuditReport {
    let n = instance.num_clients() as u64;
    let k = instance.num_candidates();
    let budget = BYTES_PER_ENTRY * k + BYTES_OVERHEAD;
    let mut failures = Vec::new();
    let mut upstream = 0;
    let mut reports = 0;
    let mut max_entries = 0;
    let mut max_bytes = 0;
    // (round) -> (first index, clients seen)
    let mut per_round: BTreeMap<u64, (usize, Vec<u64>)> = BTreeMap::new();

    for (index, record) in log.records().iter().enumerate() {
        if record.dir != Direction::Up {
            continue;
        }
        upstream += 1;
        let mut fail = |reason: String| failures.push(AuditFailure { index, reason });
        let value = match record.parse() {
            Ok(v) => v,
            Err(e) => {
                fail(format!("payload is not JSON: {e}"));
                continue;
            }
        };
        let Some(obj) = value.as_object() else {
            fail("payload is not a JSON object".into());
            continue;
        };
        let extra: Vec<&String> = obj.keys().filter(|key| !UPSTREAM_FIELDS.contains(&key.as_str())).collect();
        if let Some(key) = extra.first() {
            // still count the report towards its round so the rejection is
            // not echoed as a missing report
            if let (Some("report"), Some(round), Some(client)) = (
                obj.get("type").and_then(Value::as_str),
                obj.get("round").and_then(as_index),
                obj.get("client_id").and_then(as_index),
            ) {
                let slot = per_round.entry(round).or_insert((index, Vec::new()));
                if !slot.1.contains(&client) {
                    slot.1.push(client);
                }
            }
            if PRIVATE_HINTS.contains(&key.as_str()) {
                fail(format!("field `{key}` discloses private client data"));
            } else {
                fail(format!("field `{key}` is not allowed upstream"));
            }
            continue;
        }
        let client = match obj.get("client_id").and_then(as_index) {
            Some(c) if c < n => c,
            _ => {
                fail("missing or out-of-range `client_id`".into());
                continue;
            }
        };
        match obj.get("type").and_then(Value::as_str) {
            Some("hello") => {
                if obj.len() != 2 {
                    fail("hello carries more than a client id".into());
                }
            }
            Some("report") => {
                reports += 1;
                let Some(round) = obj.get("round").and_then(as_index) else {
                    fail("report without an integer `round`".into());
                    continue;
                };
                let entries = match obj.get("t").map(|t| check_t(t, k)) {
                    Some(Ok(e)) => e,
                    Some(Err(reason)) => {
                        fail(reason);
                        continue;
                    }
                    None => {
                        fail("report without `t`".into());
                        continue;
                    }
                };
                if record.bytes > budget {
                    fail(format!("report frame of {} bytes exceeds {budget} for K = {k}", record.bytes));
                }
                max_entries = max_entries.max(entries);
                max_bytes = max_bytes.max(record.bytes);
                let slot = per_round.entry(round).or_insert((index, Vec::new()));
                if slot.1.contains(&client) {
                    fail(format!("second report from client {client} in round {round}"));
                } else {
                    slot.1.push(client);
                }
            }
            other => fail(format!("upstream message of type {other:?}")),
        }
    }
    for (round, (index, seen)) in per_round {
        if seen.len() as u64 != n {
            failures.push(AuditFailure {
                index,
                reason: format!("round {round} has {} reports for {n} clients", seen.len()),
            });
        }
    }
    failures.sort_by_key(|f| f.index);
    AuditReport {
        passed: failures.is_empty(),
        failures,
        upstream_messages: upstream,
        reports,
        max_report_entries: max_entries,
        max_report_bytes: max_bytes,
        k,
    }
}
