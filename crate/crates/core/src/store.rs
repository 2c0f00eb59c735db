//! File-backed history, feedback, bookmarks and graph snapshots.
//!
//! Each log is `<dir>/<graph>/<kind>.jsonl` plus `<kind>.idx`, a small JSON
//! file holding the committed byte length and record count. An append writes
//! and syncs the line, then replaces the index through a temp file and an
//! atomic rename. Readers only see bytes below the committed length, so a
//! crash anywhere in between leaves the previous prefix intact; the torn tail
//! is cut off by the next append.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{deserialize_graph, serialize_graph, ContextGraph};
use crate::planner::AuditRecord;

pub const DATA_DIR_ENV: &str = "CTXSQL_DATA_DIR";

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("feedback {0} is not negative")]
    NotNegative(String),
    #[error("invalid: {0}")]
    Invalid(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::StorageFailure(e.to_string())
    }
}

impl From<serde_json::Error> for StoreError {
    fn from(e: serde_json::Error) -> Self {
        StoreError::StorageFailure(e.to_string())
    }
}

/// Simulated crash points for append.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Only this many bytes of the line reach the data file.
    TornWrite(usize),
    /// The line is fully written but the index is never replaced.
    BeforeCommit,
    /// The temp index is written but the rename never happens.
    BeforeRename,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sentiment {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FeedbackStatus {
    Open,
    Reviewed,
    Resolved { annotation_ref: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    #[serde(default)]
    pub id: String,
    pub graph_id: String,
    pub audit_ref: String,
    pub principal: String,
    pub sentiment: Sentiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_correction: Option<String>,
    pub status: FeedbackStatus,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bookmark {
    #[serde(default)]
    pub id: String,
    pub graph_id: String,
    pub owner: String,
    pub audit_ref: String,
    pub label: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Committed {
    len: u64,
    count: u64,
}

#[derive(Debug, Default)]
struct Faults {
    next: Option<Fault>,
}

/// Handle to a data directory. Cloning shares the writer locks.
#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
    locks: Arc<Mutex<BTreeMap<PathBuf, Arc<Mutex<()>>>>>,
    faults: Arc<Mutex<Faults>>,
}

fn valid_id(id: &str) -> Result<(), StoreError> {
    if !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c)) && !id.starts_with('.') {
        Ok(())
    } else {
        Err(StoreError::Invalid(format!("bad graph id {id:?}")))
    }
}

fn sync_dir(dir: &Path) {
    // directory fsync is best effort; not every platform allows it
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Store { dir, locks: Arc::default(), faults: Arc::default() })
    }

    /// Opens `$CTXSQL_DATA_DIR`, or `fallback` when unset.
    pub fn from_env(fallback: impl AsRef<Path>) -> Result<Self, StoreError> {
        match std::env::var_os(DATA_DIR_ENV) {
            Some(d) => Self::open(d),
            None => Self::open(fallback),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Arms a fault for the next append only.
    pub fn inject_fault(&self, fault: Fault) {
        self.faults.lock().unwrap_or_else(|p| p.into_inner()).next = Some(fault);
    }

    fn take_fault(&self) -> Option<Fault> {
        self.faults.lock().unwrap_or_else(|p| p.into_inner()).next.take()
    }

    fn graph_dir(&self, graph_id: &str) -> Result<PathBuf, StoreError> {
        valid_id(graph_id)?;
        let d = self.dir.join(graph_id);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn lock_for(&self, path: &Path) -> Arc<Mutex<()>> {
        let mut m = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        m.entry(path.to_path_buf()).or_default().clone()
    }

    fn paths(&self, graph_id: &str, kind: &str) -> Result<(PathBuf, PathBuf), StoreError> {
        let d = self.graph_dir(graph_id)?;
        Ok((d.join(format!("{kind}.jsonl")), d.join(format!("{kind}.idx"))))
    }

    fn committed(idx: &Path) -> Result<Committed, StoreError> {
        match fs::read(idx) {
            Ok(b) => Ok(serde_json::from_slice(&b)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Committed::default()),
            Err(e) => Err(e.into()),
        }
    }

    /// Appends one record; `stamp` sees the record's sequence number (from 1)
    /// before it is serialized.
    fn append<T: Serialize>(&self, graph_id: &str, kind: &str, mut rec: T, stamp: impl FnOnce(&mut T, u64)) -> Result<T, StoreError> {
        let (data, idx) = self.paths(graph_id, kind)?;
        let lock = self.lock_for(&data);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let c = Self::committed(&idx)?;
        stamp(&mut rec, c.count + 1);
        let mut line = serde_json::to_vec(&rec)?;
        line.push(b'\n');

        let mut f = OpenOptions::new().create(true).truncate(false).read(true).write(true).open(&data)?;
        f.set_len(c.len)?;
        f.seek(SeekFrom::Start(c.len))?;
        let fault = self.take_fault();
        if let Some(Fault::TornWrite(n)) = fault {
            f.write_all(&line[..n.min(line.len())])?;
            f.sync_all()?;
            return Err(StoreError::StorageFailure("injected fault: torn write".into()));
        }
        f.write_all(&line)?;
        f.sync_all()?;
        if fault == Some(Fault::BeforeCommit) {
            return Err(StoreError::StorageFailure("injected fault: before commit".into()));
        }

        let next = Committed { len: c.len + line.len() as u64, count: c.count + 1 };
        let tmp = idx.with_extension("idx.tmp");
        {
            let mut t = File::create(&tmp)?;
            t.write_all(&serde_json::to_vec(&next)?)?;
            t.sync_all()?;
        }
        if fault == Some(Fault::BeforeRename) {
            return Err(StoreError::StorageFailure("injected fault: before rename".into()));
        }
        fs::rename(&tmp, &idx)?;
        if let Some(parent) = idx.parent() {
            sync_dir(parent);
        }
        Ok(rec)
    }

    fn read_log<T: DeserializeOwned>(&self, graph_id: &str, kind: &str) -> Result<Vec<T>, StoreError> {
        let (data, idx) = self.paths(graph_id, kind)?;
        let c = Self::committed(&idx)?;
        if c.len == 0 {
            return Ok(Vec::new());
        }
        let mut buf = Vec::with_capacity(c.len as usize);
        File::open(&data)?.take(c.len).read_to_end(&mut buf)?;
        if (buf.len() as u64) < c.len {
            return Err(StoreError::StorageFailure(format!("{} shorter than committed length", data.display())));
        }
        buf.split(|b| *b == b'\n')
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_slice(l).map_err(StoreError::from))
            .collect()
    }

    pub fn append_history(&self, record: AuditRecord) -> Result<AuditRecord, StoreError> {
        let gid = record.graph_id.clone();
        self.append(&gid, "history", record, |r, n| r.id = format!("{gid}:h{n}"))
    }

    /// Every committed record in arrival order.
    pub fn list_history(&self, graph_id: &str) -> Result<Vec<AuditRecord>, StoreError> {
        self.read_log(graph_id, "history")
    }

    pub fn history_record(&self, graph_id: &str, id: &str) -> Result<AuditRecord, StoreError> {
        self.list_history(graph_id)?
            .into_iter()
            .find(|r| r.id == id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    /// Negative feedback always starts Open.
    pub fn submit_feedback(&self, mut entry: FeedbackEntry) -> Result<FeedbackEntry, StoreError> {
        if entry.sentiment == Sentiment::Negative {
            entry.status = FeedbackStatus::Open;
        }
        let gid = entry.graph_id.clone();
        self.append(&gid, "feedback", entry, |e, n| e.id = format!("{gid}:f{n}"))
    }

    /// Latest state of every feedback entry, in submission order. Status
    /// changes are appended as new versions of the entry.
    pub fn list_feedback(&self, graph_id: &str) -> Result<Vec<FeedbackEntry>, StoreError> {
        let mut order: Vec<String> = Vec::new();
        let mut latest: BTreeMap<String, FeedbackEntry> = BTreeMap::new();
        for e in self.read_log::<FeedbackEntry>(graph_id, "feedback")? {
            if !latest.contains_key(&e.id) {
                order.push(e.id.clone());
            }
            latest.insert(e.id.clone(), e);
        }
        Ok(order.into_iter().filter_map(|id| latest.remove(&id)).collect())
    }

    pub fn feedback(&self, graph_id: &str, id: &str) -> Result<FeedbackEntry, StoreError> {
        self.list_feedback(graph_id)?
            .into_iter()
            .find(|e| e.id == id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    pub fn mark_reviewed(&self, graph_id: &str, id: &str) -> Result<FeedbackEntry, StoreError> {
        let mut e = self.feedback(graph_id, id)?;
        if e.sentiment != Sentiment::Negative {
            return Err(StoreError::NotNegative(id.to_string()));
        }
        e.status = FeedbackStatus::Reviewed;
        self.append(graph_id, "feedback", e, |_, _| {})
    }

    /// Links a negative entry to the annotation that addressed it. The
    /// annotation must be newer than the entry.
    pub fn resolve_feedback(
        &self,
        graph_id: &str,
        id: &str,
        annotation_ref: &str,
        annotation_at: DateTime<Utc>,
    ) -> Result<FeedbackEntry, StoreError> {
        let mut e = self.feedback(graph_id, id)?;
        if e.sentiment != Sentiment::Negative {
            return Err(StoreError::NotNegative(id.to_string()));
        }
        if annotation_at < e.created_at {
            return Err(StoreError::Invalid(format!("annotation {annotation_ref} predates feedback {id}")));
        }
        e.status = FeedbackStatus::Resolved { annotation_ref: annotation_ref.to_string() };
        self.append(graph_id, "feedback", e, |_, _| {})
    }

    pub fn add_bookmark(&self, bookmark: Bookmark) -> Result<Bookmark, StoreError> {
        let gid = bookmark.graph_id.clone();
        self.append(&gid, "bookmarks", bookmark, |b, n| b.id = format!("{gid}:b{n}"))
    }

    /// All bookmarks on a graph; visibility is decided by the caller's grants.
    pub fn list_bookmarks(&self, graph_id: &str) -> Result<Vec<Bookmark>, StoreError> {
        self.read_log(graph_id, "bookmarks")
    }

    /// Writes `graph-v<version>.json` atomically; earlier versions are kept.
    pub fn save_graph(&self, graph: &ContextGraph) -> Result<PathBuf, StoreError> {
        let d = self.graph_dir(&graph.graph_id)?;
        let bytes = serialize_graph(graph).map_err(|e| StoreError::StorageFailure(e.to_string()))?;
        let path = d.join(format!("graph-v{}.json", graph.version));
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        sync_dir(&d);
        Ok(path)
    }

    /// Highest saved version of a graph.
    pub fn load_graph(&self, graph_id: &str) -> Result<ContextGraph, StoreError> {
        valid_id(graph_id)?;
        let d = self.dir.join(graph_id);
        let mut best: Option<(u64, PathBuf)> = None;
        if let Ok(rd) = fs::read_dir(&d) {
            for e in rd.flatten() {
                let name = e.file_name().to_string_lossy().to_string();
                if let Some(v) = name.strip_prefix("graph-v").and_then(|r| r.strip_suffix(".json")).and_then(|v| v.parse().ok()) {
                    if best.as_ref().is_none_or(|(b, _)| v > *b) {
                        best = Some((v, e.path()));
                    }
                }
            }
        }
        let (_, path) = best.ok_or_else(|| StoreError::NotFound(graph_id.to_string()))?;
        deserialize_graph(&fs::read(path)?).map_err(|e| StoreError::StorageFailure(e.to_string()))
    }

    /// Ids of every graph with a saved snapshot.
    pub fn graph_ids(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        for e in fs::read_dir(&self.dir)?.flatten() {
            if e.path().is_dir() && self.load_graph(&e.file_name().to_string_lossy()).is_ok() {
                out.push(e.file_name().to_string_lossy().to_string());
            }
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackCounts {
    pub positive: usize,
    pub negative: usize,
    pub open: usize,
    pub reviewed: usize,
    pub resolved: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Insights {
    pub query_count: usize,
    pub error_count: usize,
    pub error_rate: f64,
    /// Stage -> share of all queries that failed there.
    pub error_rate_by_stage: BTreeMap<String, f64>,
    pub median_latency_ms: f64,
    /// `table.column` with the number of groundings, most used first.
    pub top_grounded_columns: Vec<(String, usize)>,
    pub feedback: FeedbackCounts,
}

const TOP_COLUMNS: usize = 10;

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

pub fn insights(history: &[AuditRecord], feedback: &[FeedbackEntry]) -> Insights {
    let n = history.len();
    let mut by_stage: BTreeMap<String, usize> = BTreeMap::new();
    let mut columns: BTreeMap<String, usize> = BTreeMap::new();
    for r in history {
        if let Some(f) = &r.error {
            *by_stage.entry(f.stage.to_string()).or_default() += 1;
        }
        for g in &r.groundings {
            if let Some(c) = g.target.as_column() {
                *columns.entry(c.to_string()).or_default() += 1;
            }
        }
    }
    let errors: usize = by_stage.values().sum();
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let mut top: Vec<(String, usize)> = columns.into_iter().collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top.truncate(TOP_COLUMNS);
    let mut fb = FeedbackCounts::default();
    for e in feedback {
        match e.sentiment {
            Sentiment::Positive => fb.positive += 1,
            Sentiment::Negative => fb.negative += 1,
        }
        if e.sentiment == Sentiment::Negative {
            match e.status {
                FeedbackStatus::Open => fb.open += 1,
                FeedbackStatus::Reviewed => fb.reviewed += 1,
                FeedbackStatus::Resolved { .. } => fb.resolved += 1,
            }
        }
    }
    Insights {
        query_count: n,
        error_count: errors,
        error_rate: rate(errors),
        error_rate_by_stage: by_stage.into_iter().map(|(k, v)| (k, rate(v))).collect(),
        median_latency_ms: median(&history.iter().map(|r| r.latency_ms).collect::<Vec<_>>()),
        top_grounded_columns: top,
        feedback: fb,
    }
}
