//! Grounded sketch -> logical plan.

use std::collections::BTreeSet;

use super::ground::{name_columns, GroundTarget, GroundedQuery, Grounding, TermRole};
use super::identify::TableSelection;
use super::sketch::{AggFunc, Comparator, Literal, QuerySketch};
use super::tree::{AggExpr, Expr, JoinStep, JoinUnit, LogicalPlan, Output, Predicate, Scalar, SortKey};
use crate::model::{ColumnRef, ColumnRole, ContextGraph, GraphRules};
use crate::value::DataType;

#[derive(Debug, Clone, PartialEq)]
pub enum ComposeError {
    TypeMismatch { phrase: String, column: String, detail: String },
    Unsupported(String),
}

/// Joins rooted at the first table, each edge attaching one new table.
pub fn join_steps(sel: &TableSelection) -> (String, Vec<JoinStep>) {
    let root = sel.tables[0].clone();
    let mut seen: BTreeSet<String> = [root.clone()].into();
    let mut steps = Vec::new();
    let mut pending: Vec<_> = sel.join_path.clone();
    while !pending.is_empty() {
        let Some(i) = pending.iter().position(|e| seen.contains(&e.left.table_id) != seen.contains(&e.right.table_id)) else {
            break;
        };
        let e = pending.remove(i);
        let (from, to) = if seen.contains(&e.left.table_id) {
            (e.left.table_id.clone(), e.right.table_id.clone())
        } else {
            (e.right.table_id.clone(), e.left.table_id.clone())
        };
        seen.insert(to.clone());
        steps.push(JoinStep { from, edge: e, unit: JoinUnit::Table { table: to } });
    }
    (root, steps)
}

/// Primary key plus name columns of a table.
fn table_columns(graph: &ContextGraph, table: &str) -> Vec<Scalar> {
    let Some(t) = graph.table(table) else { return Vec::new() };
    let mut out: Vec<Scalar> = t.primary_key.iter().map(|k| Scalar::column(&t.column_ref(k))).collect();
    out.extend(name_columns(t).into_iter().map(|c| Scalar::column(&t.column_ref(&c.name))));
    out
}

fn measure_scalar(rules: &GraphRules, table: &str, name: &str) -> Option<Scalar> {
    rules
        .measures
        .iter()
        .find(|m| m.source_table == table && m.name == name)
        .map(|m| Scalar::Measure { table: table.to_string(), name: name.to_string(), expression: m.expression.clone() })
}

/// Whether an expression already aggregates.
pub fn is_aggregate_expression(expr: &str) -> bool {
    let up = expr.to_ascii_uppercase();
    ["SUM(", "AVG(", "COUNT(", "MIN(", "MAX("].iter().any(|f| up.replace(' ', "").contains(f))
}

fn check_literal(g: &Grounding, ty: DataType, op: Comparator, lit: &Literal) -> Result<(), ComposeError> {
    let ok = match lit {
        Literal::Number(_) => ty.is_numeric(),
        Literal::Money(_) => ty == DataType::Decimal || ty == DataType::Integer,
        Literal::Text(_) => matches!(ty, DataType::Text | DataType::Boolean) && !op.is_ordering(),
        Literal::Date(_) => ty.is_temporal(),
    };
    if ok {
        Ok(())
    } else {
        Err(ComposeError::TypeMismatch {
            phrase: g.phrase.clone(),
            column: g.target.as_column().map(|c| c.to_string()).unwrap_or_default(),
            detail: format!("{} {} {lit:?} on a {ty} column", g.phrase, op.sql()),
        })
    }
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

pub fn compose(
    graph: &ContextGraph,
    rules: &GraphRules,
    sel: &TableSelection,
    sketch: &QuerySketch,
    grounded: &GroundedQuery,
) -> Result<LogicalPlan, ComposeError> {
    let (root, joins) = join_steps(sel);
    let col_type = |c: &ColumnRef| graph.column(c).map(|m| m.data_type);

    let mut filters = Vec::new();
    for g in grounded.by_role(TermRole::Filter) {
        let op = g.comparator.unwrap_or(Comparator::Exists);
        match (&g.target, &g.literal) {
            (GroundTarget::Table { .. }, None) => {}
            (GroundTarget::Table { table }, Some(_)) => {
                return Err(ComposeError::TypeMismatch {
                    phrase: g.phrase.clone(),
                    column: table.clone(),
                    detail: "comparison against a whole table".into(),
                })
            }
            (GroundTarget::Column { table, column }, lit) => {
                let c = ColumnRef::new(table, column);
                let value = Scalar::column(&c);
                match lit {
                    None => filters.push(Predicate::NotNull { value }),
                    Some(l) => {
                        check_literal(g, col_type(&c).unwrap_or(DataType::Text), op, l)?;
                        let op = if op == Comparator::Exists { Comparator::Eq } else { op };
                        filters.push(Predicate::Compare { value, op, literal: l.clone() });
                    }
                }
            }
            (GroundTarget::Measure { table, name }, lit) => {
                let value = measure_scalar(rules, table, name).ok_or_else(|| ComposeError::Unsupported(format!("measure {name}")))?;
                if let Scalar::Measure { expression, .. } = &value {
                    if is_aggregate_expression(expression) {
                        return Err(ComposeError::Unsupported(format!("filter on aggregate measure {name}")));
                    }
                }
                match lit {
                    None => filters.push(Predicate::NotNull { value }),
                    Some(l) => filters.push(Predicate::Compare { value, op, literal: l.clone() }),
                }
            }
        }
    }
    if let (Some(w), Some(g)) = (&grounded.time_window, grounded.by_role(TermRole::Time).next()) {
        if let Some(c) = g.target.as_column() {
            let value = Scalar::column(&c);
            match (w.start, w.end) {
                (Some(s), Some(e)) => filters.push(Predicate::Between { value, low: Literal::Date(s), high: Literal::Date(e) }),
                (Some(s), None) => filters.push(Predicate::Compare { value, op: Comparator::Ge, literal: Literal::Date(s) }),
                (None, Some(e)) => filters.push(Predicate::Compare { value, op: Comparator::Le, literal: Literal::Date(e) }),
                (None, None) => {}
            }
        }
    }

    let selects: Vec<&Grounding> = grounded.by_role(TermRole::Select).collect();
    let aggregated = sketch.wants_aggregate
        || selects.iter().any(|g| g.agg.is_some())
        || selects.iter().any(|g| match &g.target {
            GroundTarget::Measure { table, name } => measure_scalar(rules, table, name)
                .is_some_and(|m| matches!(&m, Scalar::Measure { expression, .. } if is_aggregate_expression(expression))),
            _ => false,
        });

    let agg_of = |g: &Grounding, func: AggFunc| -> Option<AggExpr> {
        match &g.target {
            GroundTarget::Column { table, column } => Some(AggExpr::simple(func, Scalar::column(&ColumnRef::new(table, column)))),
            GroundTarget::Measure { table, name } => {
                let m = measure_scalar(rules, table, name)?;
                Some(AggExpr::simple(func, m))
            }
            GroundTarget::Table { table } => {
                let t = graph.table(table)?;
                match t.primary_key.first() {
                    Some(pk) => Some(AggExpr::simple(AggFunc::Count, Scalar::column(&t.column_ref(pk)))),
                    None => Some(AggExpr::Simple { func: AggFunc::Count, arg: None }),
                }
            }
        }
    };

    let output = if aggregated {
        let mut group: Vec<Scalar> = Vec::new();
        for g in grounded.by_role(TermRole::Group) {
            match &g.target {
                GroundTarget::Table { table } => table_columns(graph, table).into_iter().for_each(|s| push_unique(&mut group, s)),
                GroundTarget::Column { table, column } => push_unique(&mut group, Scalar::column(&ColumnRef::new(table, column))),
                GroundTarget::Measure { table, name } => {
                    if let Some(m) = measure_scalar(rules, table, name) {
                        push_unique(&mut group, m)
                    }
                }
            }
        }
        let grouped_tables: BTreeSet<String> =
            grounded.by_role(TermRole::Group).filter_map(|g| matches!(g.target, GroundTarget::Table { .. }).then(|| g.target.table().to_string())).collect();
        let mut measures: Vec<AggExpr> = Vec::new();
        for g in &selects {
            let func = match (g.agg, &g.target) {
                (Some(f), _) => Some(f),
                (None, GroundTarget::Table { table }) if grouped_tables.contains(table) => None,
                (None, GroundTarget::Table { .. }) => Some(AggFunc::Count),
                (None, GroundTarget::Measure { table, name }) => {
                    let raw = measure_scalar(rules, table, name);
                    match raw {
                        Some(Scalar::Measure { expression, .. }) if is_aggregate_expression(&expression) => {
                            push_unique(&mut measures, AggExpr::Simple { func: AggFunc::Sum, arg: measure_scalar(rules, table, name) });
                            continue;
                        }
                        _ => Some(AggFunc::Sum),
                    }
                }
                (None, GroundTarget::Column { table, column }) => {
                    let c = ColumnRef::new(table, column);
                    match graph.column(&c) {
                        Some(m) if m.role == ColumnRole::Measure => Some(AggFunc::Sum),
                        _ => {
                            push_unique(&mut group, Scalar::column(&c));
                            None
                        }
                    }
                }
            };
            if let Some(f) = func {
                if let Some(a) = agg_of(g, f) {
                    push_unique(&mut measures, a);
                }
            }
        }
        Output::Aggregate { group, measures }
    } else {
        let mut items = Vec::new();
        for g in &selects {
            match &g.target {
                GroundTarget::Table { table } => table_columns(graph, table).into_iter().for_each(|s| push_unique(&mut items, s)),
                GroundTarget::Column { table, column } => push_unique(&mut items, Scalar::column(&ColumnRef::new(table, column))),
                GroundTarget::Measure { table, name } => {
                    if let Some(m) = measure_scalar(rules, table, name) {
                        push_unique(&mut items, m)
                    }
                }
            }
        }
        Output::Project { items, distinct: false }
    };

    let mut sort = Vec::new();
    if let (Some(o), Some(g)) = (&sketch.order_term, grounded.by_role(TermRole::Order).next()) {
        let expr = match (g.agg, &output) {
            (Some(f), _) => agg_of(g, f).map(Expr::Agg),
            (None, _) => match &g.target {
                GroundTarget::Column { table, column } => Some(Expr::Scalar(Scalar::column(&ColumnRef::new(table, column)))),
                GroundTarget::Measure { table, name } => measure_scalar(rules, table, name).map(Expr::Scalar),
                GroundTarget::Table { .. } => None,
            },
        };
        if let Some(expr) = expr {
            sort.push(SortKey { expr, direction: o.direction });
        }
    }

    Ok(LogicalPlan { root, joins, filters, output, sort, limit: sketch.limit })
}
