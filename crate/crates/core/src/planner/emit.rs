//! SQL text from a logical plan.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{Expr as SqlExpr, Ident, VisitMut, VisitorMut};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;
use std::ops::ControlFlow;

use super::compose::is_aggregate_expression;
use super::sketch::{Comparator, Direction, Literal};
use super::tree::{AggExpr, Expr, JoinStep, JoinUnit, KeyedAggregate, LogicalPlan, Output, Predicate, Scalar};
use crate::model::ContextGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    #[default]
    Ansi,
    /// Dates as plain ISO strings, as stored by the bundled engines.
    Sqlite,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmitError {
    Unsupported(String),
}

const RESERVED: &[&str] = &[
    "all", "and", "as", "asc", "between", "by", "case", "check", "column", "create", "current", "date", "day",
    "default", "delete", "desc", "distinct", "drop", "else", "end", "exists", "from", "group", "having", "in",
    "index", "insert", "into", "is", "join", "key", "left", "like", "limit", "month", "not", "null", "on", "or",
    "order", "primary", "references", "right", "select", "set", "table", "then", "time", "timestamp", "to",
    "transaction", "union", "unique", "update", "user", "values", "when", "where", "with", "year",
];

/// Identifier, quoted when reserved or not a plain word.
pub fn ident(name: &str) -> String {
    let plain = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name == name.to_ascii_lowercase();
    if plain && !RESERVED.contains(&name) {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

fn number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

fn literal(l: &Literal, d: Dialect) -> String {
    match l {
        Literal::Number(n) | Literal::Money(n) => number(*n),
        Literal::Text(s) => format!("'{}'", s.replace('\'', "''")),
        Literal::Date(dt) => match d {
            Dialect::Ansi => format!("DATE '{dt}'"),
            Dialect::Sqlite => format!("'{dt}'"),
        },
    }
}

struct Qualify<'a> {
    alias: &'a str,
}

impl VisitorMut for Qualify<'_> {
    type Break = ();

    fn post_visit_expr(&mut self, expr: &mut SqlExpr) -> ControlFlow<()> {
        if let SqlExpr::Identifier(id) = expr {
            *expr = SqlExpr::CompoundIdentifier(vec![Ident::new(self.alias), id.clone()]);
        }
        ControlFlow::Continue(())
    }
}

/// Prefixes bare column names in `expr` with `alias`.
pub fn qualify_expression(expr: &str, alias: &str) -> Result<String, EmitError> {
    let mut parsed = Parser::new(&GenericDialect {})
        .try_with_sql(expr)
        .and_then(|mut p| p.parse_expr())
        .map_err(|e| EmitError::Unsupported(format!("expression {expr:?}: {e}")))?;
    let _ = parsed.visit(&mut Qualify { alias });
    Ok(parsed.to_string())
}

struct Scope<'a> {
    graph: &'a ContextGraph,
    dialect: Dialect,
    /// table id -> alias for tables visible at this level
    aliases: BTreeMap<String, String>,
}

impl Scope<'_> {
    fn alias(&self, table: &str) -> Result<&str, EmitError> {
        self.aliases.get(table).map(String::as_str).ok_or_else(|| EmitError::Unsupported(format!("table {table} not in scope")))
    }

    fn table_ref(&self, table: &str) -> Result<String, EmitError> {
        let physical = self.graph.table(table).map(|t| t.physical_name.as_str()).unwrap_or(table);
        Ok(format!("{} AS {}", ident(physical), ident(self.alias(table)?)))
    }

    fn scalar(&self, s: &Scalar) -> Result<String, EmitError> {
        match s {
            Scalar::Column { table, column } => Ok(format!("{}.{}", ident(self.alias(table)?), ident(column))),
            Scalar::Measure { table, expression, .. } => qualify_expression(expression, self.alias(table)?),
            Scalar::Derived { source, column } => Ok(format!("{}.{}", ident(source), ident(column))),
        }
    }

    fn agg(&self, a: &AggExpr) -> Result<String, EmitError> {
        match a {
            AggExpr::Simple { func, arg: None } => Ok(format!("{}(*)", func.sql())),
            AggExpr::Simple { arg: Some(m @ Scalar::Measure { expression, .. }), .. } if is_aggregate_expression(expression) => self.scalar(m),
            AggExpr::Simple { func, arg: Some(s) } => Ok(format!("{}({})", func.sql(), self.scalar(s)?)),
            AggExpr::Ratio { numerator, denominator } => {
                Ok(format!("SUM({}) * 1.0 / SUM({})", self.scalar(numerator)?, self.scalar(denominator)?))
            }
        }
    }

    fn predicate(&self, p: &Predicate) -> Result<String, EmitError> {
        Ok(match p {
            Predicate::Compare { value, op, literal: l } => {
                let op = if *op == Comparator::Exists { Comparator::Eq } else { *op };
                format!("{} {} {}", self.scalar(value)?, op.sql(), literal(l, self.dialect))
            }
            Predicate::Between { value, low, high } => {
                format!("{} BETWEEN {} AND {}", self.scalar(value)?, literal(low, self.dialect), literal(high, self.dialect))
            }
            Predicate::NotNull { value } => format!("{} IS NOT NULL", self.scalar(value)?),
            Predicate::Raw { table, sql } => format!("({})", qualify_expression(sql, self.alias(table)?)?),
        })
    }

    fn join_cond(&self, step: &JoinStep, keyed: Option<&KeyedAggregate>) -> Result<String, EmitError> {
        let to = step.unit.entry_table();
        let from_side = step.edge.side(&step.from).ok_or_else(|| EmitError::Unsupported("edge does not touch its source".into()))?;
        let to_side = step.edge.side(to).ok_or_else(|| EmitError::Unsupported("edge does not touch its target".into()))?;
        let mut parts = Vec::new();
        for (fc, tc) in from_side.columns.iter().zip(&to_side.columns) {
            let lhs = format!("{}.{}", ident(self.alias(&step.from)?), ident(fc));
            let rhs = match keyed {
                Some(k) => {
                    let name = k.key_name(&crate::model::ColumnRef::new(to, tc)).unwrap_or(tc);
                    format!("{}.{}", ident(&k.alias), ident(name))
                }
                None => format!("{}.{}", ident(self.alias(to)?), ident(tc)),
            };
            parts.push(format!("{lhs} = {rhs}"));
        }
        Ok(parts.join(" AND "))
    }
}

fn scope<'a>(graph: &'a ContextGraph, dialect: Dialect, tables: &[String]) -> Scope<'a> {
    let aliases = tables
        .iter()
        .map(|t| (t.clone(), graph.table(t).map(|n| n.alias.clone()).unwrap_or_else(|| t.clone())))
        .collect();
    Scope { graph, dialect, aliases }
}

fn from_clause(sc: &Scope, root: &str, joins: &[JoinStep]) -> Result<String, EmitError> {
    let mut sql = format!("FROM {}", sc.table_ref(root)?);
    for j in joins {
        match &j.unit {
            JoinUnit::Table { table } => {
                sql.push_str(&format!(" JOIN {} ON {}", sc.table_ref(table)?, sc.join_cond(j, None)?));
            }
            JoinUnit::Keyed(k) => {
                let inner = keyed_sql(sc.graph, sc.dialect, k)?;
                sql.push_str(&format!(" JOIN ({inner}) AS {} ON {}", ident(&k.alias), sc.join_cond(j, Some(k))?));
            }
        }
    }
    Ok(sql)
}

fn where_clause(sc: &Scope, filters: &[Predicate]) -> Result<String, EmitError> {
    if filters.is_empty() {
        return Ok(String::new());
    }
    let parts = filters.iter().map(|p| sc.predicate(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(format!(" WHERE {}", parts.join(" AND ")))
}

fn keyed_sql(graph: &ContextGraph, dialect: Dialect, k: &KeyedAggregate) -> Result<String, EmitError> {
    let sc = scope(graph, dialect, &k.tables());
    let mut items = Vec::new();
    let mut group = Vec::new();
    for (name, c) in &k.keys {
        let expr = sc.scalar(&Scalar::column(c))?;
        items.push(if *name == c.column { expr.clone() } else { format!("{expr} AS {}", ident(name)) });
        group.push(expr);
    }
    for p in &k.partials {
        let agg = AggExpr::Simple { func: p.func, arg: p.arg.clone() };
        items.push(format!("{} AS {}", sc.agg(&agg)?, ident(&p.name)));
    }
    Ok(format!(
        "SELECT {} {}{} GROUP BY {}",
        items.join(", "),
        from_clause(&sc, &k.root, &k.joins)?,
        where_clause(&sc, &k.filters)?,
        group.join(", ")
    ))
}

/// Renders `plan` as one SELECT statement.
pub fn emit_sql(plan: &LogicalPlan, graph: &ContextGraph, dialect: Dialect) -> Result<String, EmitError> {
    let sc = scope(graph, dialect, &plan.top_tables());
    let mut sql = String::from("SELECT ");
    let mut group_sql = Vec::new();
    match &plan.output {
        Output::Project { items, distinct } => {
            if *distinct {
                sql.push_str("DISTINCT ");
            }
            let cols = items.iter().map(|s| sc.scalar(s)).collect::<Result<Vec<_>, _>>()?;
            sql.push_str(&cols.join(", "));
        }
        Output::Aggregate { group, measures } => {
            let mut cols = group.iter().map(|s| sc.scalar(s)).collect::<Result<Vec<_>, _>>()?;
            group_sql = cols.clone();
            for m in measures {
                cols.push(sc.agg(m)?);
            }
            if cols.is_empty() {
                return Err(EmitError::Unsupported("empty select list".into()));
            }
            sql.push_str(&cols.join(", "));
        }
    }
    sql.push(' ');
    sql.push_str(&from_clause(&sc, &plan.root, &plan.joins)?);
    sql.push_str(&where_clause(&sc, &plan.filters)?);
    if !group_sql.is_empty() {
        sql.push_str(&format!(" GROUP BY {}", group_sql.join(", ")));
    }
    if !plan.sort.is_empty() {
        let keys = plan
            .sort
            .iter()
            .map(|k| {
                let e = match &k.expr {
                    Expr::Scalar(s) => sc.scalar(s)?,
                    Expr::Agg(a) => sc.agg(a)?,
                };
                Ok(format!("{e} {}", if k.direction == Direction::Desc { "DESC" } else { "ASC" }))
            })
            .collect::<Result<Vec<_>, EmitError>>()?;
        sql.push_str(&format!(" ORDER BY {}", keys.join(", ")));
    }
    if let Some(n) = plan.limit {
        sql.push_str(&format!(" LIMIT {n}"));
    }
    Ok(sql)
}
