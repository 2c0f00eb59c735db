//! The context graph: tables, scored join edges and per-column annotations.
//!
//! Graph values are immutable snapshots. Every mutation goes through
//! [`apply_annotation`] (or a rebuild) and yields a new value with a higher
//! `version`, so a snapshot can be shared freely across concurrent planners.

mod annotate;
mod document;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::value::{DataType, Value};

pub(crate) use annotate::check_expression;
pub use annotate::{apply_annotation, AnnotationError, GraphRules, MeasureDef, PriorityRule};
pub use document::{deserialize_graph, serialize_graph, DocumentError, SCHEMA_VERSION};
pub use validate::{validate_graph, Violation};

/// Maximum length of a table alias.
pub const MAX_ALIAS_LEN: usize = 24;
/// Maximum number of sample values persisted per column.
pub const MAX_SAMPLE_VALUES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextGraph {
    pub graph_id: String,
    pub version: u64,
    pub built_at: DateTime<Utc>,
    pub tables: Vec<TableNode>,
    pub joins: Vec<JoinEdge>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

impl ContextGraph {
    pub fn empty(graph_id: impl Into<String>, built_at: DateTime<Utc>) -> Self {
        ContextGraph {
            graph_id: graph_id.into(),
            version: 1,
            built_at,
            tables: Vec::new(),
            joins: Vec::new(),
            annotations: Vec::new(),
        }
    }

    pub fn table(&self, table_id: &str) -> Option<&TableNode> {
        self.tables.iter().find(|t| t.table_id == table_id)
    }

    pub fn column(&self, col: &ColumnRef) -> Option<&ColumnMeta> {
        self.table(&col.table).and_then(|t| t.column(&col.column))
    }

    /// Edges incident to `table_id`.
    pub fn edges_of<'a>(&'a self, table_id: &'a str) -> impl Iterator<Item = &'a JoinEdge> + 'a {
        self.joins
            .iter()
            .filter(move |e| e.left.table_id == table_id || e.right.table_id == table_id)
    }

    /// Folded view of the annotation log.
    pub fn rules(&self) -> GraphRules {
        GraphRules::fold(&self.annotations)
    }

    pub fn is_pii(&self, col: &ColumnRef) -> bool {
        self.column(col).is_some_and(|c| c.pii)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableNode {
    pub table_id: String,
    pub physical_name: String,
    pub display_name: String,
    pub alias: String,
    pub description: String,
    pub columns: Vec<ColumnMeta>,
    pub primary_key: Vec<String>,
    pub row_count_estimate: u64,
}

impl TableNode {
    pub fn column(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut ColumnMeta> {
        self.columns.iter_mut().find(|c| c.name == name)
    }

    pub fn column_ref(&self, name: &str) -> ColumnRef {
        ColumnRef::new(&self.table_id, name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnRole {
    Dimension,
    Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub data_type: DataType,
    pub role: ColumnRole,
    pub display_name: String,
    pub description: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub pii: bool,
    #[serde(default)]
    pub sample_values: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_ref: Option<String>,
}

impl ColumnMeta {
    /// Bare column with defaults derived from its name.
    pub fn new(name: impl Into<String>, data_type: DataType) -> Self {
        let name = name.into();
        ColumnMeta {
            display_name: name.clone(),
            name,
            data_type,
            role: ColumnRole::Dimension,
            description: String::new(),
            aliases: Vec::new(),
            pii: false,
            sample_values: Vec::new(),
            stats_ref: None,
        }
    }
}

/// `table.column` reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef { table: table.into(), column: column.into() }
    }

    /// Parses `table.column`.
    pub fn parse(s: &str) -> Option<Self> {
        let (t, c) = s.split_once('.')?;
        (!t.is_empty() && !c.is_empty()).then(|| ColumnRef::new(t, c))
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinSide {
    pub table_id: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    EquiJoin,
}

/// Cardinality read from the left side to the right side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cardinality {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
}

impl Cardinality {
    pub fn reverse(self) -> Self {
        match self {
            Cardinality::OneToMany => Cardinality::ManyToOne,
            Cardinality::ManyToOne => Cardinality::OneToMany,
            c => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeOrigin {
    Inferred,
    UserDeclared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub left: JoinSide,
    pub right: JoinSide,
    pub condition_kind: ConditionKind,
    pub confidence: f64,
    pub cardinality: Cardinality,
    pub origin: EdgeOrigin,
}

impl JoinEdge {
    /// Builds an edge in canonical orientation: the lexicographically smaller
    /// table id is on the left, cardinality flipped accordingly.
    pub fn canonical(
        a: JoinSide,
        b: JoinSide,
        cardinality_a_to_b: Cardinality,
        confidence: f64,
        origin: EdgeOrigin,
    ) -> Self {
        let (left, right, cardinality) = if a.table_id <= b.table_id {
            (a, b, cardinality_a_to_b)
        } else {
            (b, a, cardinality_a_to_b.reverse())
        };
        JoinEdge { left, right, condition_kind: ConditionKind::EquiJoin, confidence, cardinality, origin }
    }

    pub fn is_canonical(&self) -> bool {
        self.left.table_id < self.right.table_id
    }

    pub fn other_table(&self, table_id: &str) -> Option<&str> {
        if self.left.table_id == table_id {
            Some(&self.right.table_id)
        } else if self.right.table_id == table_id {
            Some(&self.left.table_id)
        } else {
            None
        }
    }

    /// Side belonging to `table_id`.
    pub fn side(&self, table_id: &str) -> Option<&JoinSide> {
        if self.left.table_id == table_id {
            Some(&self.left)
        } else if self.right.table_id == table_id {
            Some(&self.right)
        } else {
            None
        }
    }

    /// Cardinality read from `from_table` towards the other side.
    pub fn cardinality_from(&self, from_table: &str) -> Cardinality {
        if self.left.table_id == from_table {
            self.cardinality
        } else {
            self.cardinality.reverse()
        }
    }

    /// True if joining from `from_table` can multiply its rows.
    pub fn fans_out_from(&self, from_table: &str) -> bool {
        matches!(self.cardinality_from(from_table), Cardinality::OneToMany | Cardinality::ManyToMany)
    }
}

/// What an annotation is attached to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum AnnotationTarget {
    Table { table: String },
    Column { table: String, column: String },
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnnotationKind {
    Prioritization,
    Synonym,
    Description,
    CustomMeasure,
    EnforcerRule,
}

/// Kind-specific annotation payload; serialized as `kind` + `payload`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum AnnotationPayload {
    /// Ordered preference among same-named columns for an ambiguous term.
    Prioritization { term: String, candidates: Vec<ColumnRef> },
    Synonym { term: String },
    Description { text: String },
    CustomMeasure { name: String, expression: String, source_table: String },
    /// Predicate appended whenever the target table participates in a plan.
    EnforcerRule { predicate: String },
}

impl AnnotationPayload {
    pub fn kind(&self) -> AnnotationKind {
        match self {
            AnnotationPayload::Prioritization { .. } => AnnotationKind::Prioritization,
            AnnotationPayload::Synonym { .. } => AnnotationKind::Synonym,
            AnnotationPayload::Description { .. } => AnnotationKind::Description,
            AnnotationPayload::CustomMeasure { .. } => AnnotationKind::CustomMeasure,
            AnnotationPayload::EnforcerRule { .. } => AnnotationKind::EnforcerRule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub target: AnnotationTarget,
    #[serde(flatten)]
    pub payload: AnnotationPayload,
    pub author: String,
    pub created_at: DateTime<Utc>,
}

impl Annotation {
    pub fn kind(&self) -> AnnotationKind {
        self.payload.kind()
    }
}

/// Graph-wide lookup of table ids by alias; used by emitters and validators.
pub fn alias_map(graph: &ContextGraph) -> BTreeMap<String, String> {
    graph.tables.iter().map(|t| (t.alias.clone(), t.table_id.clone())).collect()
}
