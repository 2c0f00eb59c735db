//! Decision service for join validation, text refinement, intent parsing and
//! SQL rewriting. The deterministic implementation is the default; an HTTP
//! provider may be configured and falls back to it on any failure.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::joins::JoinCandidate;
use crate::model::ContextGraph;
use crate::planner::QuerySketch;

pub const PROVIDER_URL_ENV: &str = "CTXSQL_PROVIDER_URL";
pub const PROVIDER_TOKEN_ENV: &str = "CTXSQL_PROVIDER_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    InclusionBelowBar,
    NameEvidenceMissing,
    Provider(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextKind {
    DisplayName,
    Description,
    ColumnRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IntentReply {
    Sketch(QuerySketch),
    Unparseable,
    /// No opinion; the planner's grammar decides.
    Defer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSummary {
    pub table_id: String,
    pub display_name: String,
    pub columns: Vec<String>,
}

/// Non-PII outline of a graph, sent as provider context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub graph_id: String,
    pub version: u64,
    pub tables: Vec<TableSummary>,
}

impl GraphSummary {
    pub fn of(graph: &ContextGraph) -> Self {
        GraphSummary {
            graph_id: graph.graph_id.clone(),
            version: graph.version,
            tables: graph
                .tables
                .iter()
                .map(|t| TableSummary {
                    table_id: t.table_id.clone(),
                    display_name: t.display_name.clone(),
                    columns: t.columns.iter().filter(|c| !c.pii).map(|c| c.name.clone()).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", content = "detail", rename_all = "snake_case")]
pub enum ReplySource {
    Deterministic,
    Provider,
    FallbackUsed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub id: u64,
    pub task: String,
    pub request: Json,
    pub response: Json,
    pub source: ReplySource,
    /// Deterministic answer recorded next to a provider answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deterministic: Option<Json>,
}

/// Append-only log of adjudicator calls.
#[derive(Debug, Default)]
pub struct Transcript {
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl Transcript {
    pub fn record(&self, task: &str, request: Json, response: Json, source: ReplySource, deterministic: Option<Json>) -> u64 {
        let mut g = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        let id = g.len() as u64;
        g.push(TranscriptEntry { id, task: task.to_string(), request, response, source, deterministic });
        id
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdjudicatorError {
    #[error("provider timed out")]
    ProviderTimeout,
    #[error("malformed provider reply: {0}")]
    MalformedProviderReply(String),
}

pub trait Adjudicator: Send + Sync {
    fn adjudicate_join(&self, candidate: &JoinCandidate, log: &Transcript) -> Result<Verdict, AdjudicatorError>;
    fn refine_text(&self, kind: TextKind, input: &str, context: &Json, log: &Transcript) -> String;
    fn parse_intent(&self, question: &str, summary: &GraphSummary, log: &Transcript) -> IntentReply;
    fn rewrite_sql(&self, sql: &str, question: &str, summary: &GraphSummary, log: &Transcript) -> String;
    fn mode(&self) -> &'static str;
}

/// Rule-based stand-in; pure given its inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeterministicAdjudicator;

impl DeterministicAdjudicator {
    pub fn join_verdict(c: &JoinCandidate) -> Verdict {
        let col = c.fk_column.to_lowercase();
        if c.inclusion_coeff < 0.95 {
            Verdict::Reject(RejectReason::InclusionBelowBar)
        } else if c.name_similarity >= 0.4 || col.ends_with("_id") || col.ends_with("_key") {
            Verdict::Accept
        } else {
            Verdict::Reject(RejectReason::NameEvidenceMissing)
        }
    }
}

fn candidate_json(c: &JoinCandidate) -> Json {
    serde_json::to_value(c).unwrap_or(Json::Null)
}

fn to_json<T: Serialize>(v: &T) -> Json {
    serde_json::to_value(v).unwrap_or(Json::Null)
}

impl Adjudicator for DeterministicAdjudicator {
    fn adjudicate_join(&self, c: &JoinCandidate, log: &Transcript) -> Result<Verdict, AdjudicatorError> {
        let v = Self::join_verdict(c);
        log.record("adjudicate_join", candidate_json(c), to_json(&v), ReplySource::Deterministic, None);
        Ok(v)
    }

    fn refine_text(&self, kind: TextKind, input: &str, _context: &Json, log: &Transcript) -> String {
        log.record("refine_text", json!({"kind": kind, "input": input}), json!(input), ReplySource::Deterministic, None);
        input.to_string()
    }

    fn parse_intent(&self, question: &str, _summary: &GraphSummary, log: &Transcript) -> IntentReply {
        log.record("parse_intent", json!({"question": question}), json!("defer"), ReplySource::Deterministic, None);
        IntentReply::Defer
    }

    fn rewrite_sql(&self, sql: &str, _question: &str, _summary: &GraphSummary, log: &Transcript) -> String {
        log.record("rewrite_sql", json!({"sql": sql}), json!(sql), ReplySource::Deterministic, None);
        sql.to_string()
    }

    fn mode(&self) -> &'static str {
        "deterministic"
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut n = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// External provider over HTTP with deterministic fallback.
pub struct HttpAdjudicator {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
    slots: Slots,
    fallback: DeterministicAdjudicator,
}

impl HttpAdjudicator {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        HttpAdjudicator {
            endpoint: endpoint.into(),
            token,
            agent,
            slots: Slots { free: Mutex::new(max_in_flight.max(1)), cv: Condvar::new() },
            fallback: DeterministicAdjudicator,
        }
    }

    /// Configured from the environment; `None` means deterministic mode.
    pub fn from_env(timeout: Duration, max_in_flight: usize) -> Option<Self> {
        let url = std::env::var(PROVIDER_URL_ENV).ok().filter(|u| !u.trim().is_empty())?;
        let token = std::env::var(PROVIDER_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Some(Self::new(url, token, timeout, max_in_flight))
    }

    fn call(&self, task: &str, payload: Json, context: Json, field: &str) -> Result<Json, AdjudicatorError> {
        let _slot = self.slots.acquire();
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let body = json!({"task": task, "payload": payload, "context": context});
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => AdjudicatorError::ProviderTimeout,
            other => AdjudicatorError::MalformedProviderReply(other.to_string()),
        })?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AdjudicatorError::MalformedProviderReply(e.to_string()))?;
        let reply: Json =
            serde_json::from_str(&text).map_err(|e| AdjudicatorError::MalformedProviderReply(e.to_string()))?;
        let obj = reply.as_object().ok_or_else(|| AdjudicatorError::MalformedProviderReply("reply is not an object".into()))?;
        let confidence = obj.get("confidence").and_then(Json::as_f64);
        if !confidence.is_some_and(|c| (0.0..=1.0).contains(&c)) {
            return Err(AdjudicatorError::MalformedProviderReply("missing or invalid confidence".into()));
        }
        obj.get(field)
            .cloned()
            .ok_or_else(|| AdjudicatorError::MalformedProviderReply(format!("missing field {field}")))
    }
}

fn as_string(v: Json) -> Result<String, AdjudicatorError> {
    match v {
        Json::String(s) => Ok(s),
        other => Err(AdjudicatorError::MalformedProviderReply(format!("expected string, got {other}"))),
    }
}

impl Adjudicator for HttpAdjudicator {
    fn adjudicate_join(&self, c: &JoinCandidate, log: &Transcript) -> Result<Verdict, AdjudicatorError> {
        let det = DeterministicAdjudicator::join_verdict(c);
        let request = candidate_json(c);
        let reply = self.call("adjudicate_join", request.clone(), json!({}), "verdict").and_then(|v| {
            match as_string(v)?.to_ascii_lowercase().as_str() {
                "accept" => Ok(Verdict::Accept),
                "reject" => Ok(Verdict::Reject(RejectReason::Provider("rejected by provider".into()))),
                other => Err(AdjudicatorError::MalformedProviderReply(format!("unknown verdict {other}"))),
            }
        });
        Ok(match reply {
            Ok(v) => {
                log.record("adjudicate_join", request, to_json(&v), ReplySource::Provider, Some(to_json(&det)));
                v
            }
            Err(e) => {
                log.record("adjudicate_join", request, to_json(&det), ReplySource::FallbackUsed(e.to_string()), None);
                det
            }
        })
    }

    fn refine_text(&self, kind: TextKind, input: &str, context: &Json, log: &Transcript) -> String {
        let request = json!({"kind": kind, "input": input});
        match self.call("refine_text", request.clone(), context.clone(), "text").and_then(as_string) {
            Ok(s) => {
                log.record("refine_text", request, json!(s), ReplySource::Provider, Some(json!(input)));
                s
            }
            Err(e) => {
                log.record("refine_text", request, json!(input), ReplySource::FallbackUsed(e.to_string()), None);
                self.fallback.refine_text(kind, input, context, &Transcript::default())
            }
        }
    }

    fn parse_intent(&self, question: &str, summary: &GraphSummary, log: &Transcript) -> IntentReply {
        let request = json!({"question": question});
        let reply = self.call("parse_intent", request.clone(), to_json(summary), "sketch").and_then(|v| {
            if v.is_null() {
                return Ok(IntentReply::Unparseable);
            }
            serde_json::from_value::<QuerySketch>(v)
                .map(IntentReply::Sketch)
                .map_err(|e| AdjudicatorError::MalformedProviderReply(e.to_string()))
        });
        match reply {
            Ok(r) => {
                log.record("parse_intent", request, to_json(&r), ReplySource::Provider, Some(json!("defer")));
                r
            }
            Err(e) => {
                log.record("parse_intent", request, json!("defer"), ReplySource::FallbackUsed(e.to_string()), None);
                IntentReply::Defer
            }
        }
    }

    fn rewrite_sql(&self, sql: &str, question: &str, summary: &GraphSummary, log: &Transcript) -> String {
        let request = json!({"sql": sql, "question": question});
        match self.call("rewrite_sql", request.clone(), to_json(summary), "sql").and_then(as_string) {
            Ok(s) => {
                log.record("rewrite_sql", request, json!(s), ReplySource::Provider, Some(json!(sql)));
                s
            }
            Err(e) => {
                log.record("rewrite_sql", request, json!(sql), ReplySource::FallbackUsed(e.to_string()), None);
                sql.to_string()
            }
        }
    }

    fn mode(&self) -> &'static str {
        "provider"
    }
}

/// Provider adjudicator when configured in the environment, else deterministic.
pub fn from_env() -> Box<dyn Adjudicator> {
    match HttpAdjudicator::from_env(Duration::from_secs(10), 4) {
        Some(h) => Box::new(h),
        None => Box::new(DeterministicAdjudicator),
    }
}
