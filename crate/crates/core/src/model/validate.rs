use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnnotationPayload, AnnotationTarget, ColumnRole, ContextGraph, EdgeOrigin, MAX_ALIAS_LEN, MAX_SAMPLE_VALUES};

/// A broken graph invariant, naming the offending element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "element")]
pub enum Violation {
    DuplicateTable(String),
    DuplicateColumn(String),
    EmptyAlias(String),
    AliasTooLong(String),
    DuplicateAlias(String),
    UnknownPrimaryKey(String),
    MeasureNotNumeric(String),
    PiiSampleValues(String),
    TooManySampleValues(String),
    DanglingJoin(String),
    UnknownJoinColumn(String),
    SelfJoin(String),
    JoinArity(String),
    ConfidenceOutOfRange(String),
    UserDeclaredConfidence(String),
    NonCanonicalEdge(String),
    UnresolvedAnnotation(String),
    InvalidAnnotation(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Checks every structural invariant of the graph. Empty result means valid.
pub fn validate_graph(graph: &ContextGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    let mut aliases = BTreeSet::new();
    for t in &graph.tables {
        if !ids.insert(t.table_id.as_str()) {
            out.push(Violation::DuplicateTable(t.table_id.clone()));
        }
        if t.alias.is_empty() {
            out.push(Violation::EmptyAlias(t.table_id.clone()));
        } else if t.alias.chars().count() > MAX_ALIAS_LEN {
            out.push(Violation::AliasTooLong(t.alias.clone()));
        }
        if !t.alias.is_empty() && !aliases.insert(t.alias.as_str()) {
            out.push(Violation::DuplicateAlias(t.alias.clone()));
        }
        let mut names = BTreeSet::new();
        for c in &t.columns {
            let qualified = format!("{}.{}", t.table_id, c.name);
            if !names.insert(c.name.as_str()) {
                out.push(Violation::DuplicateColumn(qualified.clone()));
            }
            if c.role == ColumnRole::Measure && !c.data_type.is_numeric() {
                out.push(Violation::MeasureNotNumeric(qualified.clone()));
            }
            if c.pii && !c.sample_values.is_empty() {
                out.push(Violation::PiiSampleValues(qualified.clone()));
            }
            if c.sample_values.len() > MAX_SAMPLE_VALUES {
                out.push(Violation::TooManySampleValues(qualified));
            }
        }
        for k in &t.primary_key {
            if t.column(k).is_none() {
                out.push(Violation::UnknownPrimaryKey(format!("{}.{}", t.table_id, k)));
            }
        }
    }

    for e in &graph.joins {
        let label = format!("{}-{}", e.left.table_id, e.right.table_id);
        if e.left.table_id == e.right.table_id {
            out.push(Violation::SelfJoin(e.left.table_id.clone()));
        } else if !e.is_canonical() {
            out.push(Violation::NonCanonicalEdge(label.clone()));
        }
        if e.left.columns.is_empty() || e.left.columns.len() != e.right.columns.len() {
            out.push(Violation::JoinArity(label.clone()));
        }
        if !(0.0..=1.0).contains(&e.confidence) {
            out.push(Violation::ConfidenceOutOfRange(label.clone()));
        }
        if e.origin == EdgeOrigin::UserDeclared && e.confidence != 1.0 {
            out.push(Violation::UserDeclaredConfidence(label.clone()));
        }
        for side in [&e.left, &e.right] {
            match graph.table(&side.table_id) {
                None => out.push(Violation::DanglingJoin(side.table_id.clone())),
                Some(t) => {
                    for c in &side.columns {
                        if t.column(c).is_none() {
                            out.push(Violation::UnknownJoinColumn(format!("{}.{}", t.table_id, c)));
                        }
                    }
                }
            }
        }
    }

    for (i, a) in graph.annotations.iter().enumerate() {
        let resolves = match &a.target {
            AnnotationTarget::Graph => true,
            AnnotationTarget::Table { table } => graph.table(table).is_some(),
            AnnotationTarget::Column { table, column } => {
                graph.table(table).and_then(|t| t.column(column)).is_some()
            }
        };
        if !resolves {
            out.push(Violation::UnresolvedAnnotation(format!("#{i}")));
        }
        if let AnnotationPayload::Prioritization { candidates, .. } = &a.payload {
            if candidates.len() < 2 || candidates.iter().any(|c| graph.column(c).is_none()) {
                out.push(Violation::InvalidAnnotation(format!("#{i}")));
            }
        }
    }
    out
}
