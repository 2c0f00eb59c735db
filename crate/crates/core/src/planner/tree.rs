//! Logical plans and their operator-tree view.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::sketch::{AggFunc, Comparator, Direction, Literal};
use crate::model::{ColumnRef, JoinEdge};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scalar {
    Column { table: String, column: String },
    /// Custom measure expression over columns of `table`.
    Measure { table: String, name: String, expression: String },
    /// Output column of a pre-aggregated join input.
    Derived { source: String, column: String },
}

impl Scalar {
    pub fn column(c: &ColumnRef) -> Self {
        Scalar::Column { table: c.table.clone(), column: c.column.clone() }
    }

    pub fn as_column(&self) -> Option<ColumnRef> {
        match self {
            Scalar::Column { table, column } => Some(ColumnRef::new(table, column)),
            _ => None,
        }
    }

    /// Base table, if the value comes straight from one.
    pub fn table(&self) -> Option<&str> {
        match self {
            Scalar::Column { table, .. } | Scalar::Measure { table, .. } => Some(table),
            Scalar::Derived { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Compare { value: Scalar, op: Comparator, literal: Literal },
    Between { value: Scalar, low: Literal, high: Literal },
    NotNull { value: Scalar },
    /// Enforced predicate text over columns of `table`.
    Raw { table: String, sql: String },
}

impl Predicate {
    pub fn table(&self) -> Option<&str> {
        match self {
            Predicate::Compare { value, .. } | Predicate::Between { value, .. } | Predicate::NotNull { value } => value.table(),
            Predicate::Raw { table, .. } => Some(table),
        }
    }

    pub fn scalar(&self) -> Option<&Scalar> {
        match self {
            Predicate::Compare { value, .. } | Predicate::Between { value, .. } | Predicate::NotNull { value } => Some(value),
            Predicate::Raw { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggExpr {
    /// `func(arg)`, or `COUNT(*)` when `arg` is absent.
    Simple { func: AggFunc, #[serde(default, skip_serializing_if = "Option::is_none")] arg: Option<Scalar> },
    /// `SUM(numerator) * 1.0 / SUM(denominator)`: an average rebuilt from partials.
    Ratio { numerator: Scalar, denominator: Scalar },
}

impl AggExpr {
    pub fn simple(func: AggFunc, arg: Scalar) -> Self {
        AggExpr::Simple { func, arg: Some(arg) }
    }

    pub fn scalars(&self) -> Vec<&Scalar> {
        match self {
            AggExpr::Simple { arg, .. } => arg.iter().collect(),
            AggExpr::Ratio { numerator, denominator } => vec![numerator, denominator],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expr {
    Scalar(Scalar),
    Agg(AggExpr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortKey {
    pub expr: Expr,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub name: String,
    pub func: AggFunc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg: Option<Scalar>,
}

/// A join input collapsed to one row per key before joining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyedAggregate {
    pub alias: String,
    pub root: String,
    pub joins: Vec<JoinStep>,
    pub filters: Vec<Predicate>,
    /// Output name -> source column.
    pub keys: Vec<(String, ColumnRef)>,
    pub partials: Vec<Partial>,
}

impl KeyedAggregate {
    pub fn tables(&self) -> Vec<String> {
        let mut out = vec![self.root.clone()];
        for j in &self.joins {
            out.extend(j.unit.tables());
        }
        out
    }

    /// Output name for a source column.
    pub fn key_name(&self, c: &ColumnRef) -> Option<&str> {
        self.keys.iter().find(|(_, k)| k == c).map(|(n, _)| n.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JoinUnit {
    Table { table: String },
    Keyed(KeyedAggregate),
}

impl JoinUnit {
    pub fn tables(&self) -> Vec<String> {
        match self {
            JoinUnit::Table { table } => vec![table.clone()],
            JoinUnit::Keyed(k) => k.tables(),
        }
    }

    /// Table on the edge's far side.
    pub fn entry_table(&self) -> &str {
        match self {
            JoinUnit::Table { table } => table,
            JoinUnit::Keyed(k) => &k.root,
        }
    }
}

/// Attaches `unit` to the already-joined table `from` along `edge`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinStep {
    pub from: String,
    pub edge: JoinEdge,
    pub unit: JoinUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Output {
    Project { items: Vec<Scalar>, distinct: bool },
    Aggregate { group: Vec<Scalar>, measures: Vec<AggExpr> },
}

/// Single-block query: joins, filters, projection or aggregation, order,
/// limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicalPlan {
    pub root: String,
    pub joins: Vec<JoinStep>,
    pub filters: Vec<Predicate>,
    pub output: Output,
    #[serde(default)]
    pub sort: Vec<SortKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<u64>,
}

impl LogicalPlan {
    /// Tables joined at the top level, in join order.
    pub fn top_tables(&self) -> Vec<String> {
        let mut out = vec![self.root.clone()];
        out.extend(self.joins.iter().filter_map(|j| match &j.unit {
            JoinUnit::Table { table } => Some(table.clone()),
            JoinUnit::Keyed(_) => None,
        }));
        out
    }

    pub fn all_tables(&self) -> Vec<String> {
        let mut out = vec![self.root.clone()];
        for j in &self.joins {
            out.extend(j.unit.tables());
        }
        out
    }

    /// Every scalar mentioned anywhere in the plan.
    pub fn scalars(&self) -> Vec<&Scalar> {
        let mut out = Vec::new();
        for f in &self.filters {
            out.extend(f.scalar());
        }
        match &self.output {
            Output::Project { items, .. } => out.extend(items.iter()),
            Output::Aggregate { group, measures } => {
                out.extend(group.iter());
                for m in measures {
                    out.extend(m.scalars());
                }
            }
        }
        for s in &self.sort {
            match &s.expr {
                Expr::Scalar(x) => out.push(x),
                Expr::Agg(a) => out.extend(a.scalars()),
            }
        }
        for j in &self.joins {
            if let JoinUnit::Keyed(k) = &j.unit {
                for f in &k.filters {
                    out.extend(f.scalar());
                }
                out.extend(k.partials.iter().filter_map(|p| p.arg.as_ref()));
            }
        }
        out
    }

    pub fn column_refs(&self) -> BTreeSet<ColumnRef> {
        let mut out: BTreeSet<ColumnRef> = self.scalars().into_iter().filter_map(Scalar::as_column).collect();
        for j in &self.joins {
            if let JoinUnit::Keyed(k) = &j.unit {
                out.extend(k.keys.iter().map(|(_, c)| c.clone()));
            }
        }
        out
    }

    /// Operator tree: Scan/Join leaves, then Filter, Project or Aggregate,
    /// Sort and Limit.
    pub fn to_tree(&self) -> PlanNode {
        let mut node = join_tree(&self.root, &self.joins);
        if !self.filters.is_empty() {
            node = PlanNode::Filter { input: Box::new(node), predicates: self.filters.clone() };
        }
        node = match &self.output {
            Output::Project { items, distinct } => PlanNode::Project { input: Box::new(node), items: items.clone(), distinct: *distinct },
            Output::Aggregate { group, measures } => {
                PlanNode::Aggregate { input: Box::new(node), group: group.clone(), measures: measures.clone() }
            }
        };
        if !self.sort.is_empty() {
            node = PlanNode::Sort { input: Box::new(node), keys: self.sort.clone() };
        }
        if let Some(n) = self.limit {
            node = PlanNode::Limit { input: Box::new(node), n };
        }
        node
    }
}

fn join_tree(root: &str, joins: &[JoinStep]) -> PlanNode {
    let mut node = PlanNode::Scan { table: root.to_string() };
    for j in joins {
        let right = match &j.unit {
            JoinUnit::Table { table } => PlanNode::Scan { table: table.clone() },
            JoinUnit::Keyed(k) => {
                let mut inner = join_tree(&k.root, &k.joins);
                if !k.filters.is_empty() {
                    inner = PlanNode::Filter { input: Box::new(inner), predicates: k.filters.clone() };
                }
                PlanNode::KeyedAggregate {
                    input: Box::new(inner),
                    alias: k.alias.clone(),
                    keys: k.keys.iter().map(|(_, c)| c.clone()).collect(),
                    partials: k.partials.clone(),
                }
            }
        };
        node = PlanNode::Join { left: Box::new(node), right: Box::new(right), edge: j.edge.clone() };
    }
    node
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum PlanNode {
    Scan { table: String },
    Join { left: Box<PlanNode>, right: Box<PlanNode>, edge: JoinEdge },
    Filter { input: Box<PlanNode>, predicates: Vec<Predicate> },
    Project { input: Box<PlanNode>, items: Vec<Scalar>, distinct: bool },
    Aggregate { input: Box<PlanNode>, group: Vec<Scalar>, measures: Vec<AggExpr> },
    KeyedAggregate { input: Box<PlanNode>, alias: String, keys: Vec<ColumnRef>, partials: Vec<Partial> },
    Sort { input: Box<PlanNode>, keys: Vec<SortKey> },
    Limit { input: Box<PlanNode>, n: u64 },
}

impl PlanNode {
    pub fn name(&self) -> &'static str {
        match self {
            PlanNode::Scan { .. } => "Scan",
            PlanNode::Join { .. } => "Join",
            PlanNode::Filter { .. } => "Filter",
            PlanNode::Project { .. } => "Project",
            PlanNode::Aggregate { .. } => "Aggregate",
            PlanNode::KeyedAggregate { .. } => "KeyedAggregate",
            PlanNode::Sort { .. } => "Sort",
            PlanNode::Limit { .. } => "Limit",
        }
    }

    pub fn children(&self) -> Vec<&PlanNode> {
        match self {
            PlanNode::Scan { .. } => Vec::new(),
            PlanNode::Join { left, right, .. } => vec![left, right],
            PlanNode::Filter { input, .. }
            | PlanNode::Project { input, .. }
            | PlanNode::Aggregate { input, .. }
            | PlanNode::KeyedAggregate { input, .. }
            | PlanNode::Sort { input, .. }
            | PlanNode::Limit { input, .. } => vec![input],
        }
    }

    /// Node names in pre-order.
    pub fn shape(&self) -> Vec<&'static str> {
        let mut out = vec![self.name()];
        for c in self.children() {
            out.extend(c.shape());
        }
        out
    }
}
