//! Question -> SQL over a context graph.
//!
//! Stages: table identification, intent parsing, grounding, composition,
//! rewrite rules, emission and an optional adjudicator rewrite. Every call
//! yields an [`AuditRecord`], failed or not.

mod compose;
mod emit;
mod ground;
mod identify;
mod index;
mod intent;
mod rewrite;
mod rules;
mod sketch;
mod tree;

use std::fmt;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use compose::{compose, is_aggregate_expression, join_steps, ComposeError};
pub use emit::{emit_sql, ident, qualify_expression, Dialect, EmitError};
pub use ground::{
    ground_sketch, name_columns, phrase_stems, primary_measure, select_best, Basis, Candidate, GroundError, GroundTarget,
    GroundedQuery, Grounding, RankKey, Suppressed, TermRole, GROUNDING_THRESHOLD,
};
pub use identify::{connect, identify_tables, question_stems, IdentifyError, TableSelection};
pub use index::{HitLevel, IndexHit, KeywordIndex};
pub use intent::{parse_question, sample_library, SAMPLE_LIBRARY_CAP};
pub use rewrite::{schema_lookup, validate_rewrite};
pub use rules::{apply_rules, RuleError, DEFAULT_LIMIT, RULE_DISTINCT, RULE_ENFORCER, RULE_LIMIT, RULE_PII, RULE_SYMMETRIC};
pub use sketch::{AggFunc, Comparator, Direction, FilterTerm, Literal, OrderTerm, QuerySketch, SelectTerm, TimeWindow};
pub use tree::{AggExpr, Expr, JoinStep, JoinUnit, KeyedAggregate, LogicalPlan, Output, Partial, PlanNode, Predicate, Scalar, SortKey};

use crate::adjudicator::{Adjudicator, GraphSummary, IntentReply, Transcript, TranscriptEntry};
use crate::model::{ContextGraph, GraphRules, JoinEdge};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    IdentifyTables,
    ParseIntent,
    Ground,
    Compose,
    Rules,
    Emit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanError {
    #[error("no table matches the question")]
    NoTableMatch,
    #[error("tables cannot be connected: {tables:?}")]
    DisconnectedModels { tables: Vec<String> },
    #[error("could not ground {phrase:?}")]
    UngroundedPhrase { phrase: String, alternatives: Vec<Candidate> },
    #[error("type mismatch on {column}: {detail}")]
    TypeMismatch { phrase: String, column: String, detail: String },
    #[error("the question only asks for PII")]
    PiiOnlyQuery,
    #[error("unsupported: {detail}")]
    UnsupportedConstruct { detail: String },
}

impl PlanError {
    pub fn kind(&self) -> &'static str {
        match self {
            PlanError::NoTableMatch => "NoTableMatch",
            PlanError::DisconnectedModels { .. } => "DisconnectedModels",
            PlanError::UngroundedPhrase { .. } => "UngroundedPhrase",
            PlanError::TypeMismatch { .. } => "TypeMismatch",
            PlanError::PiiOnlyQuery => "PiiOnlyQuery",
            PlanError::UnsupportedConstruct { .. } => "UnsupportedConstruct",
        }
    }
}

/// Error tagged with the stage that raised it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{stage}: {error}")]
pub struct StageFailure {
    pub stage: Stage,
    pub error: PlanError,
}

impl StageFailure {
    fn new(stage: Stage, error: PlanError) -> Self {
        StageFailure { stage, error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// Assigned by the history store.
    #[serde(default)]
    pub id: String,
    pub graph_id: String,
    pub graph_version: u64,
    pub principal: String,
    pub question: String,
    pub planned_at: DateTime<Utc>,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch: Option<QuerySketch>,
    #[serde(default)]
    pub tables: Vec<String>,
    #[serde(default)]
    pub join_path: Vec<JoinEdge>,
    #[serde(default)]
    pub groundings: Vec<Grounding>,
    #[serde(default)]
    pub suppressed: Vec<Suppressed>,
    #[serde(default)]
    pub rules_fired: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
    /// Set when an unreadable listing was answered with a table projection.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub table_fallback: bool,
    #[serde(default)]
    pub rewrite_applied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite_rejected: Option<String>,
    #[serde(default)]
    pub transcript: Vec<TranscriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StageFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedQuery {
    pub sql: String,
    pub plan: LogicalPlan,
    pub tree: PlanNode,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub result: Result<PlannedQuery, StageFailure>,
    pub audit: AuditRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanContext {
    /// Injected clock; anchors relative time phrases.
    pub clock: DateTime<Utc>,
    pub principal: String,
    #[serde(default)]
    pub dialect: Dialect,
    /// Row limit added when the question sets none.
    #[serde(default = "default_limit")]
    pub default_limit: u64,
}

fn default_limit() -> u64 {
    DEFAULT_LIMIT
}

impl PlanContext {
    pub fn new(clock: DateTime<Utc>, principal: impl Into<String>) -> Self {
        PlanContext { clock, principal: principal.into(), dialect: Dialect::Ansi, default_limit: DEFAULT_LIMIT }
    }
}

/// Graph plus the derived lookup structures, reusable across questions.
#[derive(Debug, Clone)]
pub struct Planner {
    pub graph: ContextGraph,
    pub rules: GraphRules,
    pub index: KeywordIndex,
    summary: GraphSummary,
}

impl Planner {
    pub fn new(graph: ContextGraph) -> Self {
        let rules = graph.rules();
        let index = KeywordIndex::build(&graph, &rules);
        let summary = GraphSummary::of(&graph);
        Planner { graph, rules, index, summary }
    }

    pub fn plan(&self, question: &str, adjudicator: &dyn Adjudicator, ctx: &PlanContext) -> PlanOutcome {
        let started = Instant::now();
        let log = Transcript::default();
        let mut audit = AuditRecord {
            id: String::new(),
            graph_id: self.graph.graph_id.clone(),
            graph_version: self.graph.version,
            principal: ctx.principal.clone(),
            question: question.to_string(),
            planned_at: ctx.clock,
            latency_ms: 0.0,
            sketch: None,
            tables: Vec::new(),
            join_path: Vec::new(),
            groundings: Vec::new(),
            suppressed: Vec::new(),
            rules_fired: Vec::new(),
            sql: None,
            table_fallback: false,
            rewrite_applied: false,
            rewrite_rejected: None,
            transcript: Vec::new(),
            error: None,
        };
        let result = self.run(question, adjudicator, ctx, &log, &mut audit);
        audit.transcript = log.entries();
        audit.error = result.as_ref().err().cloned();
        audit.latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        PlanOutcome { result, audit }
    }

    fn run(
        &self,
        question: &str,
        adjudicator: &dyn Adjudicator,
        ctx: &PlanContext,
        log: &Transcript,
        audit: &mut AuditRecord,
    ) -> Result<PlannedQuery, StageFailure> {
        let g = &self.graph;
        let selection = identify_tables(question, g, &self.index, &self.rules).map_err(|e| {
            StageFailure::new(
                Stage::IdentifyTables,
                match e {
                    IdentifyError::NoTableMatch => PlanError::NoTableMatch,
                    IdentifyError::DisconnectedModels(tables) => PlanError::DisconnectedModels { tables },
                },
            )
        })?;
        audit.tables = selection.tables.clone();
        audit.join_path = selection.join_path.clone();

        let mut sketch = match adjudicator.parse_intent(question, &self.summary, log) {
            IntentReply::Sketch(s) if !s.select_terms.is_empty() => s,
            IntentReply::Sketch(_) | IntentReply::Unparseable => QuerySketch::fallback(question),
            IntentReply::Defer => parse_question(question, g, &self.rules, ctx.clock.date_naive()),
        };
        audit.sketch = Some(sketch.clone());

        let grounded = match ground_sketch(g, &self.rules, &selection.tables, &sketch) {
            Ok(gq) => gq,
            Err(GroundError::Ungrounded { phrase, alternatives }) => {
                // A plain listing whose subject cannot be read falls back to
                // projecting the first identified table.
                let listing = !sketch.wants_aggregate && sketch.group_terms.is_empty() && sketch.order_term.is_none();
                let subject = sketch.select_terms.iter().any(|s| s.phrase == phrase);
                let table = g.table(&selection.tables[0]).map(|t| t.display_name.clone());
                match (listing && subject, table) {
                    (true, Some(name)) => {
                        let mut fb = QuerySketch::fallback(&name);
                        fb.limit = sketch.limit;
                        let gq = ground_sketch(g, &self.rules, &selection.tables, &fb).map_err(|_| {
                            StageFailure::new(Stage::Ground, PlanError::UngroundedPhrase { phrase: phrase.clone(), alternatives: alternatives.clone() })
                        })?;
                        audit.table_fallback = true;
                        audit.sketch = Some(fb.clone());
                        sketch = fb;
                        gq
                    }
                    _ => return Err(StageFailure::new(Stage::Ground, PlanError::UngroundedPhrase { phrase, alternatives })),
                }
            }
        };
        audit.groundings = grounded.groundings.clone();
        audit.suppressed = grounded.suppressed.clone();

        let mut plan = compose(g, &self.rules, &selection, &sketch, &grounded).map_err(|e| {
            StageFailure::new(
                Stage::Compose,
                match e {
                    ComposeError::TypeMismatch { phrase, column, detail } => PlanError::TypeMismatch { phrase, column, detail },
                    ComposeError::Unsupported(detail) => PlanError::UnsupportedConstruct { detail },
                },
            )
        })?;

        let suppressed_selects = grounded.suppressed.iter().filter(|s| s.role == TermRole::Select).count();
        let selects_grounded = grounded.by_role(TermRole::Select).count();
        let pii_only = if selects_grounded == 0 { suppressed_selects } else { 0 };
        audit.rules_fired = apply_rules(&mut plan, g, &self.rules, pii_only, ctx.default_limit).map_err(|e| match e {
            RuleError::PiiOnlyQuery => StageFailure::new(Stage::Rules, PlanError::PiiOnlyQuery),
        })?;
        if !grounded.suppressed.is_empty() && !audit.rules_fired.iter().any(|r| r == RULE_PII) {
            audit.rules_fired.insert(0, RULE_PII.to_string());
        }

        let emitted = emit_sql(&plan, g, ctx.dialect).map_err(|e| match e {
            EmitError::Unsupported(detail) => StageFailure::new(Stage::Emit, PlanError::UnsupportedConstruct { detail }),
        })?;
        let mut sql = emitted.clone();
        let rewritten = adjudicator.rewrite_sql(&emitted, question, &self.summary, log);
        if rewritten.trim() != emitted {
            match validate_rewrite(&rewritten, g) {
                Ok(()) => {
                    sql = rewritten.trim().to_string();
                    audit.rewrite_applied = true;
                }
                Err(reason) => audit.rewrite_rejected = Some(format!("RewriteRejected: {reason}")),
            }
        }
        audit.sql = Some(sql.clone());
        Ok(PlannedQuery { sql, tree: plan.to_tree(), plan })
    }
}

/// One-shot planning over `graph`.
pub fn plan_query(question: &str, graph: &ContextGraph, adjudicator: &dyn Adjudicator, ctx: &PlanContext) -> PlanOutcome {
    Planner::new(graph.clone()).plan(question, adjudicator, ctx)
}
