//! Structural reading of SQL text: which tables, joins, columns, filters,
//! groupings and aggregates a query uses, with aliases resolved.
//!
//! Used by the structural scorer, by rewrite validation and by the PII
//! soundness check on emitted SQL.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;

use sqlparser::ast::{
    BinaryOperator, Expr, FunctionArg, FunctionArgExpr, FunctionArguments, GroupByExpr, Ident,
    ObjectName, ObjectNamePart, Query, Select, SelectItem, SetExpr, Statement, TableFactor,
    TableWithJoins, Value as SqlValue,
};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlRefError {
    #[error("failed to parse SQL: {0}")]
    ParseFailure(String),
    #[error("expected exactly one statement, found {0}")]
    StatementCount(usize),
    #[error("statement is not a read-only query")]
    NotReadOnly,
}

/// Class of a literal in a filter atom.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiteralClass {
    Number,
    String,
    Date,
    Boolean,
    Null,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FilterAtom {
    pub column: String,
    pub op: String,
    pub class: LiteralClass,
    pub value: String,
}

/// Canonical component sets of one SQL query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlAnalysis {
    pub tables: BTreeSet<String>,
    /// Unordered join pairs, each rendered `a.x=b.y` with the smaller side first.
    pub joins: BTreeSet<String>,
    pub projections: BTreeSet<String>,
    pub filters: BTreeSet<FilterAtom>,
    pub group_by: BTreeSet<String>,
    pub aggregates: BTreeSet<String>,
    /// Every resolved `table.column` reference anywhere in the query.
    pub columns: BTreeSet<String>,
    /// Column identifiers that could not be attributed to a table.
    pub unresolved: BTreeSet<String>,
}

/// Table name -> column names, used to attribute unqualified identifiers.
pub type SchemaLookup = BTreeMap<String, BTreeSet<String>>;

pub fn parse_query(sql: &str) -> Result<Query, SqlRefError> {
    let stmts = Parser::parse_sql(&GenericDialect {}, sql).map_err(|e| SqlRefError::ParseFailure(e.to_string()))?;
    if stmts.len() != 1 {
        return Err(SqlRefError::StatementCount(stmts.len()));
    }
    match stmts.into_iter().next() {
        Some(Statement::Query(q)) => Ok(*q),
        _ => Err(SqlRefError::NotReadOnly),
    }
}

/// Parses and analyzes a single read-only query.
pub fn analyze(sql: &str, schema: Option<&SchemaLookup>) -> Result<SqlAnalysis, SqlRefError> {
    let query = parse_query(sql)?;
    let mut a = Analyzer { schema, out: SqlAnalysis::default() };
    a.query(&query, true);
    Ok(a.out)
}

/// Bare identifiers referenced by a scalar SQL expression (function names
/// excluded). Qualified names contribute their last part.
pub fn expression_identifiers(expr_sql: &str) -> Result<BTreeSet<String>, SqlRefError> {
    let expr = Parser::new(&GenericDialect {})
        .try_with_sql(expr_sql)
        .and_then(|mut p| p.parse_expr())
        .map_err(|e| SqlRefError::ParseFailure(e.to_string()))?;
    let mut out = BTreeSet::new();
    let _ = sqlparser::ast::visit_expressions(&expr, |e| {
        match e {
            Expr::Identifier(id) => {
                out.insert(id.value.to_lowercase());
            }
            Expr::CompoundIdentifier(parts) => {
                if let Some(last) = parts.last() {
                    out.insert(last.value.to_lowercase());
                }
            }
            _ => {}
        }
        ControlFlow::<()>::Continue(())
    });
    Ok(out)
}

#[derive(Debug, Clone)]
enum Resolved {
    Column(String),
    Aggregate { func: String, arg: String },
    Opaque(BTreeSet<String>),
}

impl Resolved {
    fn columns(&self) -> BTreeSet<String> {
        match self {
            Resolved::Column(c) => BTreeSet::from([c.clone()]),
            Resolved::Aggregate { arg, .. } => {
                if arg == "*" {
                    BTreeSet::new()
                } else {
                    arg.split(',').map(str::to_string).collect()
                }
            }
            Resolved::Opaque(set) => set.clone(),
        }
    }
}

#[derive(Debug, Clone)]
enum Source {
    Base(String),
    Derived(BTreeMap<String, Resolved>),
}

#[derive(Debug, Default)]
struct Scope {
    sources: Vec<(String, Source)>,
}

impl Scope {
    fn find(&self, qualifier: &str) -> Option<&Source> {
        self.sources.iter().find(|(n, _)| n == qualifier).map(|(_, s)| s)
    }
}

struct Analyzer<'a> {
    schema: Option<&'a SchemaLookup>,
    out: SqlAnalysis,
}

fn ident(i: &Ident) -> String {
    i.value.to_lowercase()
}

fn object_name(n: &ObjectName) -> String {
    n.0.iter()
        .filter_map(|p| match p {
            ObjectNamePart::Identifier(i) => Some(ident(i)),
            _ => None,
        })
        .last()
        .unwrap_or_default()
}

const AGGREGATES: &[&str] = &["sum", "avg", "count", "min", "max"];

impl<'a> Analyzer<'a> {
    fn query(&mut self, q: &Query, outermost: bool) -> BTreeMap<String, Resolved> {
        if let Some(with) = &q.with {
            for cte in &with.cte_tables {
                self.query(&cte.query, false);
            }
        }
        self.set_expr(&q.body, outermost)
    }

    fn set_expr(&mut self, body: &SetExpr, outermost: bool) -> BTreeMap<String, Resolved> {
        match body {
            SetExpr::Select(s) => self.select(s, outermost),
            SetExpr::Query(q) => self.query(q, outermost),
            SetExpr::SetOperation { left, right, .. } => {
                let out = self.set_expr(left, outermost);
                self.set_expr(right, outermost);
                out
            }
            _ => BTreeMap::new(),
        }
    }

    fn select(&mut self, s: &Select, outermost: bool) -> BTreeMap<String, Resolved> {
        let mut scope = Scope::default();
        let mut join_conditions = Vec::new();
        for twj in &s.from {
            self.from_item(twj, &mut scope, &mut join_conditions);
        }
        for cond in join_conditions {
            self.condition(&cond, &scope, true);
        }
        if let Some(w) = &s.selection {
            self.condition(w, &scope, false);
        }
        if let Some(h) = &s.having {
            self.condition(h, &scope, false);
        }
        let mut outputs = BTreeMap::new();
        for item in &s.projection {
            let (expr, alias) = match item {
                SelectItem::UnnamedExpr(e) => (e, None),
                SelectItem::ExprWithAlias { expr, alias } => (expr, Some(ident(alias))),
                _ => continue,
            };
            let r = self.expr(expr, &scope);
            if outermost {
                if let Resolved::Column(c) = &r {
                    self.out.projections.insert(c.clone());
                }
            }
            let name = alias.or_else(|| match expr {
                Expr::Identifier(i) => Some(ident(i)),
                Expr::CompoundIdentifier(parts) => parts.last().map(ident),
                _ => None,
            });
            if let Some(name) = name {
                outputs.insert(name, r);
            }
        }
        if let GroupByExpr::Expressions(exprs, _) = &s.group_by {
            for e in exprs {
                let r = self.expr(e, &scope);
                if outermost {
                    if let Resolved::Column(c) = r {
                        self.out.group_by.insert(c);
                    }
                }
            }
        }
        outputs
    }

    fn from_item(&mut self, twj: &TableWithJoins, scope: &mut Scope, conds: &mut Vec<Expr>) {
        self.table_factor(&twj.relation, scope);
        for j in &twj.joins {
            self.table_factor(&j.relation, scope);
            use sqlparser::ast::JoinOperator as J;
            let c = match &j.join_operator {
                J::Join(c) | J::Inner(c) | J::Left(c) | J::LeftOuter(c) | J::Right(c) | J::RightOuter(c)
                | J::FullOuter(c) | J::CrossJoin(c) => Some(c),
                _ => None,
            };
            if let Some(sqlparser::ast::JoinConstraint::On(e)) = c {
                conds.push(e.clone());
            }
        }
    }

    fn table_factor(&mut self, tf: &TableFactor, scope: &mut Scope) {
        match tf {
            TableFactor::Table { name, alias, .. } => {
                let table = object_name(name);
                self.out.tables.insert(table.clone());
                let key = alias.as_ref().map(|a| ident(&a.name)).unwrap_or_else(|| table.clone());
                scope.sources.push((key, Source::Base(table)));
            }
            TableFactor::Derived { subquery, alias, .. } => {
                let outputs = self.query(subquery, false);
                if let Some(a) = alias {
                    scope.sources.push((ident(&a.name), Source::Derived(outputs)));
                }
            }
            TableFactor::NestedJoin { table_with_joins, alias } => {
                let mut conds = Vec::new();
                let mut inner = Scope::default();
                self.from_item(table_with_joins, &mut inner, &mut conds);
                for c in conds {
                    self.condition(&c, &inner, true);
                }
                if alias.is_none() {
                    scope.sources.extend(inner.sources);
                }
            }
            _ => {}
        }
    }

    fn resolve_column(&mut self, qualifier: Option<&str>, col: &str, scope: &Scope) -> Resolved {
        let resolved = match qualifier {
            Some(q) => match scope.find(q) {
                Some(Source::Base(t)) => Some(Resolved::Column(format!("{t}.{col}"))),
                Some(Source::Derived(outputs)) => outputs.get(col).cloned(),
                None => None,
            },
            None => {
                let mut hits = Vec::new();
                for (_, src) in &scope.sources {
                    match src {
                        Source::Base(t) => {
                            let known = self.schema.and_then(|s| s.get(t)).map(|cols| cols.contains(col));
                            if known.unwrap_or(scope.sources.len() == 1) {
                                hits.push(Resolved::Column(format!("{t}.{col}")));
                            }
                        }
                        Source::Derived(outputs) => {
                            if let Some(r) = outputs.get(col) {
                                hits.push(r.clone());
                            }
                        }
                    }
                }
                (hits.len() == 1).then(|| hits.remove(0))
            }
        };
        match resolved {
            Some(r) => {
                self.out.columns.extend(r.columns());
                r
            }
            None => {
                let name = match qualifier {
                    Some(q) => format!("{q}.{col}"),
                    None => col.to_string(),
                };
                self.out.unresolved.insert(name.clone());
                Resolved::Opaque(BTreeSet::from([format!("?.{col}")]))
            }
        }
    }

    fn expr(&mut self, e: &Expr, scope: &Scope) -> Resolved {
        match e {
            Expr::Identifier(i) => self.resolve_column(None, &ident(i), scope),
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let q = ident(&parts[parts.len() - 2]);
                let c = ident(&parts[parts.len() - 1]);
                self.resolve_column(Some(&q), &c, scope)
            }
            Expr::Nested(inner) => self.expr(inner, scope),
            Expr::Function(f) => {
                let name = object_name(&f.name);
                let mut cols = BTreeSet::new();
                let mut star = false;
                let mut distinct = false;
                match &f.args {
                    FunctionArguments::List(list) => {
                        distinct = matches!(
                            list.duplicate_treatment,
                            Some(sqlparser::ast::DuplicateTreatment::Distinct)
                        );
                        for arg in &list.args {
                            let ae = match arg {
                                FunctionArg::Unnamed(a) | FunctionArg::Named { arg: a, .. } => a,
                                FunctionArg::ExprNamed { arg, .. } => arg,
                            };
                            match ae {
                                FunctionArgExpr::Expr(x) => cols.extend(self.expr(x, scope).columns()),
                                _ => star = true,
                            }
                        }
                    }
                    FunctionArguments::Subquery(q) => {
                        self.query(q, false);
                    }
                    FunctionArguments::None => {}
                }
                if AGGREGATES.contains(&name.as_str()) {
                    let arg = if star && cols.is_empty() {
                        "*".to_string()
                    } else {
                        cols.iter().cloned().collect::<Vec<_>>().join(",")
                    };
                    let func = if distinct { format!("{name} distinct") } else { name };
                    self.out.aggregates.insert(format!("{func}({arg})"));
                    Resolved::Aggregate { func, arg }
                } else {
                    Resolved::Opaque(cols)
                }
            }
            Expr::Subquery(q) => {
                self.query(q, false);
                Resolved::Opaque(BTreeSet::new())
            }
            Expr::Exists { subquery, .. } => {
                self.query(subquery, false);
                Resolved::Opaque(BTreeSet::new())
            }
            Expr::InSubquery { expr, subquery, .. } => {
                let mut cols = self.expr(expr, scope).columns();
                self.query(subquery, false);
                cols.remove("");
                Resolved::Opaque(cols)
            }
            Expr::Value(_) | Expr::TypedString(_) => Resolved::Opaque(BTreeSet::new()),
            other => {
                // generic walk over nested expressions in the current scope
                let mut ids: Vec<(Option<String>, String)> = Vec::new();
                let mut subqueries: Vec<Query> = Vec::new();
                let _ = sqlparser::ast::visit_expressions(other, |x| {
                    match x {
                        Expr::Identifier(i) => ids.push((None, ident(i))),
                        Expr::CompoundIdentifier(p) if p.len() >= 2 => {
                            ids.push((Some(ident(&p[p.len() - 2])), ident(&p[p.len() - 1])))
                        }
                        Expr::Subquery(q) => subqueries.push((**q).clone()),
                        Expr::Function(f) => {
                            let name = object_name(&f.name);
                            if AGGREGATES.contains(&name.as_str()) {
                                subqueries.clear();
                            }
                        }
                        _ => {}
                    }
                    ControlFlow::<()>::Continue(())
                });
                let mut cols = BTreeSet::new();
                for (q, c) in ids {
                    cols.extend(self.resolve_column(q.as_deref(), &c, scope).columns());
                }
                for q in subqueries {
                    self.query(&q, false);
                }
                // aggregates nested inside larger expressions
                let _ = sqlparser::ast::visit_expressions(other, |x| {
                    if let Expr::Function(f) = x {
                        if AGGREGATES.contains(&object_name(&f.name).as_str()) {
                            let r = self.expr(x, scope);
                            cols.extend(r.columns());
                        }
                    }
                    ControlFlow::<()>::Continue(())
                });
                Resolved::Opaque(cols)
            }
        }
    }

    fn condition(&mut self, e: &Expr, scope: &Scope, in_join: bool) {
        match e {
            Expr::BinaryOp { left, op: BinaryOperator::And, right } => {
                self.condition(left, scope, in_join);
                self.condition(right, scope, in_join);
            }
            Expr::Nested(inner) => self.condition(inner, scope, in_join),
            Expr::BinaryOp { left, op, right } if comparison(op).is_some() => {
                let op_s = comparison(op).unwrap_or("?");
                let l_lit = literal(left);
                let r_lit = literal(right);
                match (l_lit, r_lit) {
                    (None, Some((class, value))) => {
                        let col = self.operand(left, scope);
                        self.out.filters.insert(FilterAtom { column: col, op: op_s.into(), class, value });
                    }
                    (Some((class, value)), None) => {
                        let col = self.operand(right, scope);
                        let flipped = flip(op_s);
                        self.out.filters.insert(FilterAtom { column: col, op: flipped.into(), class, value });
                    }
                    (None, None) => {
                        let l = self.operand(left, scope);
                        let r = self.operand(right, scope);
                        if op_s == "=" {
                            let (a, b) = if l <= r { (l, r) } else { (r, l) };
                            self.out.joins.insert(format!("{a}={b}"));
                        } else {
                            self.out.filters.insert(FilterAtom {
                                column: l,
                                op: op_s.into(),
                                class: LiteralClass::Other,
                                value: r,
                            });
                        }
                    }
                    (Some(_), Some(_)) => {}
                }
            }
            Expr::Between { expr, negated, low, high } => {
                let col = self.operand(expr, scope);
                let (lo_op, hi_op) = if *negated { ("<", ">") } else { (">=", "<=") };
                for (bound, op) in [(low, lo_op), (high, hi_op)] {
                    let (class, value) = literal(bound).unwrap_or((LiteralClass::Other, bound.to_string()));
                    self.out.filters.insert(FilterAtom { column: col.clone(), op: op.into(), class, value });
                }
            }
            Expr::IsNull(x) | Expr::IsNotNull(x) => {
                let col = self.operand(x, scope);
                let op = if matches!(e, Expr::IsNull(_)) { "is null" } else { "is not null" };
                self.out.filters.insert(FilterAtom { column: col, op: op.into(), class: LiteralClass::Null, value: String::new() });
            }
            Expr::InList { expr, list, negated } => {
                let col = self.operand(expr, scope);
                let mut vals: Vec<String> = list.iter().map(|v| literal(v).map(|l| l.1).unwrap_or_else(|| v.to_string())).collect();
                vals.sort();
                let class = list.first().and_then(literal).map(|l| l.0).unwrap_or(LiteralClass::Other);
                let op = if *negated { "not in" } else { "in" };
                self.out.filters.insert(FilterAtom { column: col, op: op.into(), class, value: vals.join(",") });
            }
            other => {
                let r = self.expr(other, scope);
                let cols: Vec<String> = r.columns().into_iter().collect();
                self.out.filters.insert(FilterAtom {
                    column: cols.join(","),
                    op: "expr".into(),
                    class: LiteralClass::Other,
                    value: String::new(),
                });
            }
        }
    }

    fn operand(&mut self, e: &Expr, scope: &Scope) -> String {
        match self.expr(e, scope) {
            Resolved::Column(c) => c,
            Resolved::Aggregate { func, arg } => format!("{func}({arg})"),
            Resolved::Opaque(cols) => cols.into_iter().collect::<Vec<_>>().join(","),
        }
    }
}

fn comparison(op: &BinaryOperator) -> Option<&'static str> {
    Some(match op {
        BinaryOperator::Eq => "=",
        BinaryOperator::NotEq => "<>",
        BinaryOperator::Lt => "<",
        BinaryOperator::LtEq => "<=",
        BinaryOperator::Gt => ">",
        BinaryOperator::GtEq => ">=",
        _ => return None,
    })
}

fn flip(op: &str) -> &str {
    match op {
        "<" => ">",
        "<=" => ">=",
        ">" => "<",
        ">=" => "<=",
        o => o,
    }
}

fn literal(e: &Expr) -> Option<(LiteralClass, String)> {
    match e {
        Expr::Nested(inner) => literal(inner),
        Expr::UnaryOp { op: sqlparser::ast::UnaryOperator::Minus, expr } => {
            literal(expr).map(|(c, v)| (c, format!("-{v}")))
        }
        Expr::Value(v) => Some(match &v.value {
            SqlValue::Number(n, _) => (LiteralClass::Number, normalize_number(&n.to_string())),
            SqlValue::SingleQuotedString(s) | SqlValue::DoubleQuotedString(s) => {
                if crate::value::is_iso_date(s) || crate::value::is_iso_timestamp(s) {
                    (LiteralClass::Date, s.clone())
                } else {
                    (LiteralClass::String, s.clone())
                }
            }
            SqlValue::Boolean(b) => (LiteralClass::Boolean, b.to_string()),
            SqlValue::Null => (LiteralClass::Null, String::new()),
            other => (LiteralClass::Other, other.to_string()),
        }),
        Expr::TypedString(ts) => {
            let raw = match &ts.value.value {
                SqlValue::SingleQuotedString(s) => s.clone(),
                other => other.to_string(),
            };
            Some((LiteralClass::Date, raw))
        }
        _ => None,
    }
}

fn normalize_number(n: &str) -> String {
    match n.parse::<f64>() {
        Ok(f) => format!("{f}"),
        Err(_) => n.to_string(),
    }
}
