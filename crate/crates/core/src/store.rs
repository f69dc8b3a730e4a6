//! Append-only store of logged bandit feedback.
//!
//! A [`LogStore`] has a single writer. [`LogStore::snapshot`] hands out
//! [`LogView`]s that share the record buffer; an append after a snapshot
//! copies the buffer once, so existing views never change.
//!
//! Log files are line-delimited JSON, one decision per line:
//!
//! ```text
//! {"record_id":"r1","ts":"2026-01-01T00:00:00Z","context":{"country":"A"},"arm_id":"p299","propensity":0.925,"reward":2.5}
//! ```
//!
//! `user_id` is an optional extra key used to count distinct players.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::context::{Arm, ContextSchema, ContextVector, EncodeError, RawContext};

/// Largest tolerated share of rejected lines before ingestion aborts.
pub const MAX_REJECT_RATIO: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RejectReason {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("nonpositive propensity")]
    NonpositivePropensity,
    #[error("propensity above 1")]
    PropensityAboveOne,
    #[error("unknown arm_id `{0}`")]
    UnknownArm(String),
    #[error("non-finite reward")]
    NonFiniteReward,
    #[error("bad context: {0}")]
    Context(#[from] EncodeError),
    #[error("duplicate record_id `{0}`")]
    DuplicateRecordId(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{rejected} of {total} log lines rejected (limit {limit:.0}%); first: line {first_line}: {first_reason}", limit = MAX_REJECT_RATIO * 100.0)]
    TooManyRejects {
        rejected: usize,
        total: usize,
        first_line: usize,
        first_reason: RejectReason,
    },
}

/// Arms and context schema shared by a store and all its views.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub arms: Vec<Arm>,
    pub schema: ContextSchema,
}

impl Catalog {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            arms: config.arms.clone(),
            schema: config.schema.clone(),
        }
    }

    pub fn arm_index(&self, arm_id: &str) -> Option<usize> {
        self.arms.iter().position(|a| a.arm_id == arm_id)
    }

    pub fn baseline_index(&self) -> usize {
        self.arms
            .iter()
            .position(|a| a.is_baseline)
            .expect("validated catalog has a baseline")
    }
}

// ── Records ─────────────────────────────────────────────────────────────

/// One logged assignment decision with its attributed reward.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub record_id: String,
    pub ts: DateTime<Utc>,
    pub context: ContextVector,
    pub arm_id: String,
    /// Catalog index of `arm_id`.
    pub arm: usize,
    /// Logging policy's probability of `arm_id` at decision time.
    pub propensity: f64,
    pub reward: f64,
    pub user_id: Option<String>,
}

/// On-disk form of a [`LogRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRecord {
    pub record_id: String,
    pub ts: DateTime<Utc>,
    pub context: RawContext,
    pub arm_id: String,
    pub propensity: f64,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
}

impl LogRecord {
    pub fn from_wire(wire: WireRecord, catalog: &Catalog) -> Result<Self, RejectReason> {
        let arm = catalog
            .arm_index(&wire.arm_id)
            .ok_or_else(|| RejectReason::UnknownArm(wire.arm_id.clone()))?;
        check_propensity(wire.propensity)?;
        if !wire.reward.is_finite() {
            return Err(RejectReason::NonFiniteReward);
        }
        let context = catalog.schema.encode(&wire.context)?;
        Ok(LogRecord {
            record_id: wire.record_id,
            ts: wire.ts,
            context,
            arm_id: wire.arm_id,
            arm,
            propensity: wire.propensity,
            reward: wire.reward,
            user_id: wire.user_id,
        })
    }

    pub fn to_wire(&self) -> WireRecord {
        WireRecord {
            record_id: self.record_id.clone(),
            ts: self.ts,
            context: self.context.raw.clone(),
            arm_id: self.arm_id.clone(),
            propensity: self.propensity,
            reward: self.reward,
            user_id: self.user_id.clone(),
        }
    }
}

fn check_propensity(p: f64) -> Result<(), RejectReason> {
    if p.is_nan() || p <= 0.0 {
        return Err(RejectReason::NonpositivePropensity);
    }
    if p > 1.0 {
        return Err(RejectReason::PropensityAboveOne);
    }
    Ok(())
}

// ── Store and views ─────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LogStore {
    catalog: Arc<Catalog>,
    records: Arc<Vec<LogRecord>>,
    ids: HashSet<String>,
}

impl LogStore {
    pub fn new(catalog: Catalog) -> Self {
        Self {
            catalog: Arc::new(catalog),
            records: Arc::new(Vec::new()),
            ids: HashSet::new(),
        }
    }

    pub fn for_config(config: &ExperimentConfig) -> Self {
        Self::new(Catalog::from_config(config))
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Validates and appends one record.
    pub fn append(&mut self, record: LogRecord) -> Result<(), RejectReason> {
        if self.catalog.arms.get(record.arm).map(|a| &a.arm_id) != Some(&record.arm_id) {
            return Err(RejectReason::UnknownArm(record.arm_id));
        }
        check_propensity(record.propensity)?;
        if !record.reward.is_finite() {
            return Err(RejectReason::NonFiniteReward);
        }
        if record.context.encoded.len() != self.catalog.schema.dim() {
            return Err(RejectReason::Malformed(format!(
                "encoded context has {} components, schema needs {}",
                record.context.encoded.len(),
                self.catalog.schema.dim()
            )));
        }
        if !self.ids.insert(record.record_id.clone()) {
            return Err(RejectReason::DuplicateRecordId(record.record_id));
        }
        Arc::make_mut(&mut self.records).push(record);
        Ok(())
    }

    pub fn append_wire(&mut self, wire: WireRecord) -> Result<(), RejectReason> {
        let record = LogRecord::from_wire(wire, &self.catalog)?;
        self.append(record)
    }

    /// Read-only view of the records appended so far.
    pub fn snapshot(&self) -> LogView {
        LogView {
            catalog: Arc::clone(&self.catalog),
            records: Arc::clone(&self.records),
        }
    }

    fn sort_by_time(&mut self) {
        Arc::make_mut(&mut self.records).sort_by_key(|r| r.ts);
    }
}

/// Immutable, cheaply clonable view over a store's records.
#[derive(Debug, Clone)]
pub struct LogView {
    catalog: Arc<Catalog>,
    records: Arc<Vec<LogRecord>>,
}

impl LogView {
    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LogRecord> {
        self.records.iter()
    }

    /// Writes the view as line-delimited JSON.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for record in self.records.iter() {
            serde_json::to_writer(&mut out, &record.to_wire())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

// ── Ingestion ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// 1-based line number in the source file.
    pub line: usize,
    pub reason: RejectReason,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

impl IngestReport {
    pub fn rejected_count(&self) -> usize {
        self.rejected.len()
    }
}

/// Reads a log file into a store sorted by timestamp.
///
/// Blank lines are skipped. Invalid lines are rejected individually and
/// reported; more than [`MAX_REJECT_RATIO`] rejected lines is a hard error.
pub fn ingest_logs(
    path: &Path,
    config: &ExperimentConfig,
) -> Result<(LogStore, IngestReport), IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_reader(BufReader::new(file), config).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn ingest_reader<R: BufRead>(
    reader: R,
    config: &ExperimentConfig,
) -> Result<(LogStore, IngestReport), IngestError> {
    let mut store = LogStore::for_config(config);
    let mut report = IngestReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str::<WireRecord>(&line)
            .map_err(|e| RejectReason::Malformed(e.to_string()))
            .and_then(|wire| store.append_wire(wire));
        match outcome {
            Ok(()) => report.accepted += 1,
            Err(reason) => report.rejected.push(Rejection {
                line: idx + 1,
                reason,
            }),
        }
    }
    let total = report.accepted + report.rejected.len();
    if total > 0 && report.rejected.len() as f64 > MAX_REJECT_RATIO * total as f64 {
        let first = report.rejected[0].clone();
        return Err(IngestError::TooManyRejects {
            rejected: report.rejected.len(),
            total,
            first_line: first.line,
            first_reason: first.reason,
        });
    }
    store.sort_by_time();
    Ok((store, report))
}
