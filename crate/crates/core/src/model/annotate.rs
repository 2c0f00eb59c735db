use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{validate_graph, Annotation, AnnotationPayload, AnnotationTarget, ColumnRef, ContextGraph, Violation};
use crate::sqlref::expression_identifiers;
use crate::text::{split_words, stem_set};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("annotation target does not resolve: {0}")]
    UnresolvedTarget(String),
    #[error("invalid annotation payload: {0}")]
    InvalidPayload(String),
    #[error("graph is not valid: {0:?}")]
    InvalidGraph(Vec<Violation>),
}

/// Ordered column preference for an ambiguous term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityRule {
    pub term: String,
    pub candidates: Vec<ColumnRef>,
}

impl PriorityRule {
    /// Stemmed tokens of the term.
    pub fn term_stems(&self) -> BTreeSet<String> {
        stem_set(&self.term)
    }

    /// Position of `col` in the preference order.
    pub fn rank_of(&self, col: &ColumnRef) -> Option<usize> {
        self.candidates.iter().position(|c| c == col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureDef {
    pub name: String,
    pub expression: String,
    pub source_table: String,
}

/// Planner-facing view of the annotation log, folded in log order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphRules {
    /// Keyed by normalized term.
    pub prioritizations: BTreeMap<String, PriorityRule>,
    /// Table id -> predicates appended whenever the table is used.
    pub enforcers: BTreeMap<String, Vec<String>>,
    pub measures: Vec<MeasureDef>,
    /// Table id -> extra names.
    pub table_synonyms: BTreeMap<String, Vec<String>>,
}

fn normalize_term(term: &str) -> String {
    split_words(term).join("_")
}

impl GraphRules {
    pub fn fold(annotations: &[Annotation]) -> GraphRules {
        let mut rules = GraphRules::default();
        for a in annotations {
            match (&a.payload, &a.target) {
                (AnnotationPayload::Prioritization { term, candidates }, _) => {
                    let key = normalize_term(term);
                    let rule = PriorityRule { term: term.clone(), candidates: candidates.clone() };
                    if let Some(prev) = rules.prioritizations.insert(key.clone(), rule) {
                        tracing::warn!(term = %key, previous = ?prev.candidates, "prioritization replaced by a later annotation");
                    }
                }
                (AnnotationPayload::EnforcerRule { predicate }, AnnotationTarget::Table { table }) => {
                    let list = rules.enforcers.entry(table.clone()).or_default();
                    if !list.contains(predicate) {
                        list.push(predicate.clone());
                    }
                }
                (AnnotationPayload::CustomMeasure { name, expression, source_table }, _) => {
                    rules.measures.retain(|m| !(m.name == *name && m.source_table == *source_table));
                    rules.measures.push(MeasureDef {
                        name: name.clone(),
                        expression: expression.clone(),
                        source_table: source_table.clone(),
                    });
                }
                (AnnotationPayload::Synonym { term }, AnnotationTarget::Table { table }) => {
                    let list = rules.table_synonyms.entry(table.clone()).or_default();
                    if !list.contains(term) {
                        list.push(term.clone());
                    }
                }
                _ => {}
            }
        }
        rules
    }

    /// Rule whose term matches `term` after normalization.
    pub fn prioritization(&self, term: &str) -> Option<&PriorityRule> {
        self.prioritizations.get(&normalize_term(term))
    }

    /// Rule listing `col` as a candidate whose term stems all occur in `stems`.
    pub fn prioritization_for(&self, col: &ColumnRef, stems: &BTreeSet<String>) -> Option<&PriorityRule> {
        self.prioritizations
            .values()
            .find(|r| r.rank_of(col).is_some() && !r.term_stems().is_disjoint(stems))
    }
}

/// Returns a new graph with `ann` applied and `version` incremented. The input
/// graph is left untouched.
pub fn apply_annotation(graph: &ContextGraph, ann: Annotation) -> Result<ContextGraph, AnnotationError> {
    let violations = validate_graph(graph);
    if !violations.is_empty() {
        return Err(AnnotationError::InvalidGraph(violations));
    }
    check_target(graph, &ann.target)?;
    let mut next = graph.clone();
    match (&ann.payload, &ann.target) {
        (AnnotationPayload::Synonym { term }, target) => {
            if term.trim().is_empty() {
                return Err(AnnotationError::InvalidPayload("empty synonym".into()));
            }
            match target {
                AnnotationTarget::Column { table, column } => {
                    let col = next
                        .tables
                        .iter_mut()
                        .find(|t| &t.table_id == table)
                        .and_then(|t| t.column_mut(column))
                        .ok_or_else(|| AnnotationError::UnresolvedTarget(format!("{table}.{column}")))?;
                    if !col.aliases.contains(term) {
                        col.aliases.push(term.clone());
                    }
                }
                AnnotationTarget::Table { .. } => {}
                AnnotationTarget::Graph => {
                    return Err(AnnotationError::InvalidPayload("synonym needs a table or column target".into()))
                }
            }
        }
        (AnnotationPayload::Description { text }, target) => match target {
            AnnotationTarget::Column { table, column } => {
                if let Some(c) = next.tables.iter_mut().find(|t| &t.table_id == table).and_then(|t| t.column_mut(column)) {
                    c.description = text.clone();
                }
            }
            AnnotationTarget::Table { table } => {
                if let Some(t) = next.tables.iter_mut().find(|t| &t.table_id == table) {
                    t.description = text.clone();
                }
            }
            AnnotationTarget::Graph => {
                return Err(AnnotationError::InvalidPayload("description needs a table or column target".into()))
            }
        },
        (AnnotationPayload::Prioritization { term, candidates }, _) => check_prioritization(graph, term, candidates)?,
        (AnnotationPayload::CustomMeasure { name, expression, source_table }, _) => {
            check_measure(graph, name, expression, source_table)?
        }
        (AnnotationPayload::EnforcerRule { predicate }, target) => {
            let AnnotationTarget::Table { table } = target else {
                return Err(AnnotationError::InvalidPayload("enforcer rule needs a table target".into()));
            };
            check_expression(graph, predicate, table)?;
        }
    }
    next.annotations.push(ann);
    next.version = graph.version + 1;
    Ok(next)
}

fn check_target(graph: &ContextGraph, target: &AnnotationTarget) -> Result<(), AnnotationError> {
    match target {
        AnnotationTarget::Graph => Ok(()),
        AnnotationTarget::Table { table } => graph
            .table(table)
            .map(|_| ())
            .ok_or_else(|| AnnotationError::UnresolvedTarget(table.clone())),
        AnnotationTarget::Column { table, column } => graph
            .table(table)
            .and_then(|t| t.column(column))
            .map(|_| ())
            .ok_or_else(|| AnnotationError::UnresolvedTarget(format!("{table}.{column}"))),
    }
}

fn check_prioritization(graph: &ContextGraph, term: &str, candidates: &[ColumnRef]) -> Result<(), AnnotationError> {
    if candidates.len() < 2 {
        return Err(AnnotationError::InvalidPayload("prioritization needs at least two candidates".into()));
    }
    let distinct: BTreeSet<&ColumnRef> = candidates.iter().collect();
    if distinct.len() != candidates.len() {
        return Err(AnnotationError::InvalidPayload("duplicate prioritization candidate".into()));
    }
    let term_stems = stem_set(term);
    if term_stems.is_empty() {
        return Err(AnnotationError::InvalidPayload("empty prioritization term".into()));
    }
    for c in candidates {
        let meta = graph.column(c).ok_or_else(|| AnnotationError::UnresolvedTarget(c.to_string()))?;
        let mut names = stem_set(&meta.name);
        for a in &meta.aliases {
            names.extend(stem_set(a));
        }
        if !term_stems.is_subset(&names) {
            return Err(AnnotationError::InvalidPayload(format!("{c} does not carry the term {term:?}")));
        }
    }
    Ok(())
}

fn check_measure(graph: &ContextGraph, name: &str, expression: &str, source_table: &str) -> Result<(), AnnotationError> {
    if name.trim().is_empty() {
        return Err(AnnotationError::InvalidPayload("measure name is empty".into()));
    }
    if graph.table(source_table).is_none() {
        return Err(AnnotationError::UnresolvedTarget(source_table.to_string()));
    }
    check_expression(graph, expression, source_table)
}

/// Expression must parse and reference only non-PII columns of `table`.
pub(crate) fn check_expression(graph: &ContextGraph, expression: &str, table: &str) -> Result<(), AnnotationError> {
    let t = graph.table(table).ok_or_else(|| AnnotationError::UnresolvedTarget(table.to_string()))?;
    let ids = expression_identifiers(expression).map_err(|e| AnnotationError::InvalidPayload(e.to_string()))?;
    for id in ids {
        match t.columns.iter().find(|c| c.name.eq_ignore_ascii_case(&id)) {
            None => {
                return Err(AnnotationError::InvalidPayload(format!("{id} is not a column of {table}")));
            }
            Some(c) if c.pii => {
                return Err(AnnotationError::InvalidPayload(format!("{id} is a PII column")));
            }
            Some(_) => {}
        }
    }
    Ok(())
}
