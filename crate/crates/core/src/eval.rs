//! Structural accuracy: component-wise set F1 between predicted and
//! reference SQL.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjudicator::Adjudicator;
use crate::planner::{PlanContext, Planner};
use crate::sqlref::{analyze, SchemaLookup, SqlAnalysis, SqlRefError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Parse(#[from] SqlRefError),
    #[error("corpus line {line}: {reason}")]
    Corpus { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Canonical component sets of a query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub tables: BTreeSet<String>,
    pub joins: BTreeSet<String>,
    pub columns: BTreeSet<String>,
    pub filters: BTreeSet<String>,
    pub group_by: BTreeSet<String>,
    pub aggregates: BTreeSet<String>,
}

impl From<SqlAnalysis> for Components {
    fn from(a: SqlAnalysis) -> Self {
        Components {
            tables: a.tables,
            joins: a.joins,
            columns: a.projections,
            filters: a
                .filters
                .into_iter()
                .map(|f| format!("{} {} {:?}:{}", f.column, f.op, f.class, f.value))
                .collect(),
            group_by: a.group_by,
            aggregates: a.aggregates,
        }
    }
}

/// Parses `sql` into normalized component sets. `schema` only attributes
/// unqualified columns to tables.
pub fn canonicalize(sql: &str, schema: Option<&SchemaLookup>) -> Result<Components, EvalError> {
    Ok(analyze(sql, schema)?.into())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuralScore {
    pub tables: f64,
    pub joins: f64,
    pub columns: f64,
    pub filters: f64,
    pub group_by: f64,
    pub aggregates: f64,
    pub overall: f64,
}

impl StructuralScore {
    fn from_parts(p: [f64; 6]) -> Self {
        StructuralScore {
            tables: p[0],
            joins: p[1],
            columns: p[2],
            filters: p[3],
            group_by: p[4],
            aggregates: p[5],
            overall: p.iter().sum::<f64>() / 6.0,
        }
    }

    pub fn parts(&self) -> [f64; 6] {
        [self.tables, self.joins, self.columns, self.filters, self.group_by, self.aggregates]
    }

    pub fn zero() -> Self {
        Self::from_parts([0.0; 6])
    }
}

/// Set F1; two empty sets agree vacuously.
pub fn f1<T: Ord>(predicted: &BTreeSet<T>, reference: &BTreeSet<T>) -> f64 {
    if predicted.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let hit = predicted.intersection(reference).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let p = hit / predicted.len() as f64;
    let r = hit / reference.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn score_components(pred: &Components, reference: &Components) -> StructuralScore {
    StructuralScore::from_parts([
        f1(&pred.tables, &reference.tables),
        f1(&pred.joins, &reference.joins),
        f1(&pred.columns, &reference.columns),
        f1(&pred.filters, &reference.filters),
        f1(&pred.group_by, &reference.group_by),
        f1(&pred.aggregates, &reference.aggregates),
    ])
}

pub fn score_structural(predicted: &str, reference: &str, schema: Option<&SchemaLookup>) -> Result<StructuralScore, EvalError> {
    Ok(score_components(&canonicalize(predicted, schema)?, &canonicalize(reference, schema)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub question: String,
    pub reference_sql: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusEntry>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EvalError::Corpus { line: i + 1, reason: e.to_string() }))
        .collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusEntry>, EvalError> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionReport {
    pub question: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub reference_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_sql: Option<String>,
    pub score: StructuralScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub question_count: usize,
    pub per_question: Vec<QuestionReport>,
    pub means: StructuralScore,
}

/// Plans every question and scores it against its reference. Planner and
/// scoring failures score zero and keep the error text.
pub fn run_corpus(corpus: &[CorpusEntry], planner: &Planner, adjudicator: &dyn Adjudicator, ctx: &PlanContext) -> EvalReport {
    let schema = crate::planner::schema_lookup(&planner.graph);
    let per_question: Vec<QuestionReport> = corpus
        .iter()
        .map(|e| {
            let outcome = planner.plan(&e.question, adjudicator, ctx);
            let (predicted_sql, score, error) = match outcome.result {
                Ok(p) => match score_structural(&p.sql, &e.reference_sql, Some(&schema)) {
                    Ok(s) => (Some(p.sql), s, None),
                    Err(err) => (Some(p.sql), StructuralScore::zero(), Some(err.to_string())),
                },
                Err(f) => (None, StructuralScore::zero(), Some(f.to_string())),
            };
            QuestionReport {
                question: e.question.clone(),
                tags: e.tags.clone(),
                reference_sql: e.reference_sql.clone(),
                predicted_sql,
                score,
                error,
            }
        })
        .collect();
    let means = if per_question.is_empty() {
        StructuralScore::zero()
    } else {
        let n = per_question.len() as f64;
        let mut sums = [0.0; 6];
        for q in &per_question {
            for (s, v) in sums.iter_mut().zip(q.score.parts()) {
                *s += v;
            }
        }
        StructuralScore::from_parts(sums.map(|s| s / n))
    };
    EvalReport { question_count: per_question.len(), per_question, means }
}
