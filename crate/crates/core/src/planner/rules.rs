//! Rewrite rules applied to every composed plan, in order: PII scrub,
//! enforced predicates, fan-out-safe aggregation, default limit.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::compose::is_aggregate_expression;
use super::sketch::AggFunc;
use super::tree::{AggExpr, Expr, JoinStep, JoinUnit, KeyedAggregate, LogicalPlan, Output, Partial, Predicate, Scalar};
use crate::model::{ColumnRef, ContextGraph, GraphRules, JoinEdge};

pub const DEFAULT_LIMIT: u64 = 1000;

pub const RULE_PII: &str = "pii_scrub";
pub const RULE_ENFORCER: &str = "enforcer_predicates";
pub const RULE_SYMMETRIC: &str = "symmetric_aggregate";
pub const RULE_DISTINCT: &str = "fanout_distinct";
pub const RULE_LIMIT: &str = "default_limit";

#[derive(Debug, Clone, PartialEq)]
pub enum RuleError {
    PiiOnlyQuery,
}

/// Applies every rule; returns the names of rules that changed the plan.
pub fn apply_rules(
    plan: &mut LogicalPlan,
    graph: &ContextGraph,
    rules: &GraphRules,
    pii_suppressed_selects: usize,
    default_limit: u64,
) -> Result<Vec<String>, RuleError> {
    let mut fired = Vec::new();
    if scrub_pii(plan, graph, pii_suppressed_selects)? {
        fired.push(RULE_PII.to_string());
    }
    if add_enforcers(plan, rules) {
        fired.push(RULE_ENFORCER.to_string());
    }
    if let Some(name) = symmetric_aggregate(plan, graph) {
        fired.push(name.to_string());
    }
    if plan.limit.is_none() {
        plan.limit = Some(default_limit);
        fired.push(RULE_LIMIT.to_string());
    }
    Ok(fired)
}

fn is_pii(graph: &ContextGraph, s: &Scalar) -> bool {
    s.as_column().is_some_and(|c| graph.is_pii(&c))
}

fn scrub_pii(plan: &mut LogicalPlan, graph: &ContextGraph, suppressed_selects: usize) -> Result<bool, RuleError> {
    let before = plan.clone();
    plan.filters.retain(|p| !p.scalar().is_some_and(|s| is_pii(graph, s)));
    match &mut plan.output {
        Output::Project { items, .. } => items.retain(|s| !is_pii(graph, s)),
        Output::Aggregate { group, measures } => {
            group.retain(|s| !is_pii(graph, s));
            measures.retain(|m| !m.scalars().iter().any(|s| is_pii(graph, s)));
        }
    }
    plan.sort.retain(|k| match &k.expr {
        Expr::Scalar(s) => !is_pii(graph, s),
        Expr::Agg(a) => !a.scalars().iter().any(|s| is_pii(graph, s)),
    });
    let empty = match &plan.output {
        Output::Project { items, .. } => items.is_empty(),
        Output::Aggregate { group, measures } => group.is_empty() && measures.is_empty(),
    };
    let selects_left = match &plan.output {
        Output::Project { items, .. } => !items.is_empty(),
        Output::Aggregate { measures, .. } => !measures.is_empty(),
    };
    if empty || (suppressed_selects > 0 && !selects_left) {
        return Err(RuleError::PiiOnlyQuery);
    }
    Ok(*plan != before || suppressed_selects > 0)
}

fn add_enforcers(plan: &mut LogicalPlan, rules: &GraphRules) -> bool {
    let mut changed = false;
    for t in plan.all_tables() {
        for p in rules.enforcers.get(&t).into_iter().flatten() {
            let pred = Predicate::Raw { table: t.clone(), sql: p.clone() };
            if !plan.filters.contains(&pred) {
                plan.filters.push(pred);
                changed = true;
            }
        }
    }
    changed
}

/// Undirected join tree of the plan's top-level tables.
fn adjacency(plan: &LogicalPlan) -> BTreeMap<String, Vec<(String, JoinEdge)>> {
    let mut adj: BTreeMap<String, Vec<(String, JoinEdge)>> = BTreeMap::new();
    adj.entry(plan.root.clone()).or_default();
    for j in &plan.joins {
        let to = j.unit.entry_table().to_string();
        adj.entry(j.from.clone()).or_default().push((to.clone(), j.edge.clone()));
        adj.entry(to).or_default().push((j.from.clone(), j.edge.clone()));
    }
    adj
}

/// Parent links from a BFS rooted at `root`, in visit order.
fn rooted(adj: &BTreeMap<String, Vec<(String, JoinEdge)>>, root: &str) -> Vec<(String, Option<(String, JoinEdge)>)> {
    let mut out = vec![(root.to_string(), None)];
    let mut seen: BTreeSet<String> = [root.to_string()].into();
    let mut q = VecDeque::from([root.to_string()]);
    while let Some(t) = q.pop_front() {
        for (o, e) in adj.get(&t).into_iter().flatten() {
            if seen.insert(o.clone()) {
                out.push((o.clone(), Some((t.clone(), e.clone()))));
                q.push_back(o.clone());
            }
        }
    }
    out
}

/// True if walking from `a` to `b` crosses an edge that fans out.
fn path_fans_out(adj: &BTreeMap<String, Vec<(String, JoinEdge)>>, a: &str, b: &str) -> bool {
    let order = rooted(adj, a);
    let parent: BTreeMap<&str, (&str, &JoinEdge)> =
        order.iter().filter_map(|(t, p)| p.as_ref().map(|(pt, e)| (t.as_str(), (pt.as_str(), e)))).collect();
    let mut cur = b;
    while let Some((p, e)) = parent.get(cur) {
        if e.fans_out_from(p) {
            return true;
        }
        cur = p;
    }
    false
}

fn measure_table(a: &AggExpr) -> Option<String> {
    a.scalars().first().and_then(|s| s.table()).map(str::to_string)
}

fn symmetric_aggregate(plan: &mut LogicalPlan, graph: &ContextGraph) -> Option<&'static str> {
    if plan.joins.is_empty() {
        return None;
    }
    let adj = adjacency(plan);
    let measures = match &plan.output {
        Output::Project { .. } => {
            let fans = plan.joins.iter().any(|j| j.edge.fans_out_from(&j.from));
            if let Output::Project { distinct, .. } = &mut plan.output {
                if fans && !*distinct {
                    *distinct = true;
                    return Some(RULE_DISTINCT);
                }
            }
            return None;
        }
        Output::Aggregate { measures, .. } => measures.clone(),
    };
    let mut mtables: Vec<String> = Vec::new();
    for m in &measures {
        if let Some(t) = measure_table(m) {
            if !mtables.contains(&t) {
                mtables.push(t);
            }
        }
    }
    let anchor = mtables
        .iter()
        .find(|a| mtables.iter().all(|b| b == *a || path_fans_out(&adj, a, b)))
        .or(mtables.first())
        .cloned()
        .unwrap_or_else(|| plan.root.clone());

    let order = rooted(&adj, &anchor);
    let children: BTreeMap<String, Vec<(String, JoinEdge)>> = {
        let mut c: BTreeMap<String, Vec<(String, JoinEdge)>> = BTreeMap::new();
        for (t, p) in &order {
            if let Some((pt, e)) = p {
                c.entry(pt.clone()).or_default().push((t.clone(), e.clone()));
            }
        }
        c
    };
    // first fan-out edges met walking away from the anchor
    let mut collapse: Vec<(String, String, JoinEdge)> = Vec::new();
    let mut stack = vec![anchor.clone()];
    while let Some(t) = stack.pop() {
        for (c, e) in children.get(&t).into_iter().flatten() {
            if e.fans_out_from(&t) {
                collapse.push((t.clone(), c.clone(), e.clone()));
            } else {
                stack.push(c.clone());
            }
        }
    }
    if collapse.is_empty() {
        return None;
    }
    collapse.sort_by(|a, b| {
        let pos = |t: &str| order.iter().position(|(x, _)| x == t).unwrap_or(usize::MAX);
        pos(&a.1).cmp(&pos(&b.1))
    });

    let subtree = |top: &str| -> Vec<String> {
        let mut out = vec![top.to_string()];
        let mut i = 0;
        while i < out.len() {
            for (c, _) in children.get(&out[i]).into_iter().flatten() {
                out.push(c.clone());
            }
            i += 1;
        }
        out
    };
    let collapsed_tables: BTreeSet<String> = collapse.iter().flat_map(|(_, c, _)| subtree(c)).collect();

    let (mut group, mut outer_measures) = match std::mem::replace(&mut plan.output, Output::Project { items: vec![], distinct: false }) {
        Output::Aggregate { group, measures } => (group, measures),
        Output::Project { .. } => unreachable!("checked above"),
    };
    let mut filters = std::mem::take(&mut plan.filters);
    let mut steps = Vec::new();
    let mut partial_no = 0;

    // outer joins over the non-collapsed part, rooted at the anchor
    for (t, p) in &order {
        let Some((pt, e)) = p else { continue };
        if collapsed_tables.contains(t) {
            continue;
        }
        steps.push(JoinStep { from: pt.clone(), edge: e.clone(), unit: JoinUnit::Table { table: t.clone() } });
    }

    for (from, top, edge) in &collapse {
        let tables = subtree(top);
        let tset: BTreeSet<&str> = tables.iter().map(String::as_str).collect();
        let alias = format!("{}_k", graph.table(top).map(|t| t.alias.clone()).unwrap_or_else(|| top.clone()));
        let inner_joins: Vec<JoinStep> = order
            .iter()
            .filter(|(t, _)| t != top && tset.contains(t.as_str()))
            .filter_map(|(t, p)| p.as_ref().map(|(pt, e)| JoinStep { from: pt.clone(), edge: e.clone(), unit: JoinUnit::Table { table: t.clone() } }))
            .collect();
        let (inner_filters, rest): (Vec<Predicate>, Vec<Predicate>) =
            filters.into_iter().partition(|f| f.table().is_some_and(|t| tset.contains(t)));
        filters = rest;

        let mut keys: Vec<(String, ColumnRef)> = Vec::new();
        let add_key = |c: ColumnRef, keys: &mut Vec<(String, ColumnRef)>| -> String {
            if let Some((n, _)) = keys.iter().find(|(_, k)| *k == c) {
                return n.clone();
            }
            let name = if keys.iter().any(|(n, _)| *n == c.column) { format!("{}_{}", c.table, c.column) } else { c.column.clone() };
            keys.push((name.clone(), c));
            name
        };
        if let Some(side) = edge.side(top) {
            for col in &side.columns {
                add_key(ColumnRef::new(top, col), &mut keys);
            }
        }
        for g in group.iter_mut() {
            if let Some(c) = g.as_column().filter(|c| tset.contains(c.table.as_str())) {
                let name = add_key(c, &mut keys);
                *g = Scalar::Derived { source: alias.clone(), column: name };
            }
        }

        let mut partials = Vec::new();
        for m in outer_measures.iter_mut() {
            let Some(t) = measure_table(m) else { continue };
            if !tset.contains(t.as_str()) {
                continue;
            }
            let AggExpr::Simple { func, arg: Some(arg) } = m.clone() else { continue };
            if matches!(&arg, Scalar::Measure { expression, .. } if is_aggregate_expression(expression)) {
                continue;
            }
            partial_no += 1;
            let name = format!("p{partial_no}");
            let derived = |n: &str| Scalar::Derived { source: alias.clone(), column: n.to_string() };
            *m = match func {
                AggFunc::Sum | AggFunc::Count => {
                    partials.push(Partial { name: name.clone(), func, arg: Some(arg) });
                    AggExpr::simple(AggFunc::Sum, derived(&name))
                }
                AggFunc::Min | AggFunc::Max => {
                    partials.push(Partial { name: name.clone(), func, arg: Some(arg) });
                    AggExpr::simple(func, derived(&name))
                }
                AggFunc::Avg => {
                    let (s, c) = (format!("{name}_sum"), format!("{name}_cnt"));
                    partials.push(Partial { name: s.clone(), func: AggFunc::Sum, arg: Some(arg.clone()) });
                    partials.push(Partial { name: c.clone(), func: AggFunc::Count, arg: Some(arg) });
                    AggExpr::Ratio { numerator: derived(&s), denominator: derived(&c) }
                }
            };
        }
        steps.push(JoinStep {
            from: from.clone(),
            edge: edge.clone(),
            unit: JoinUnit::Keyed(KeyedAggregate { alias, root: top.clone(), joins: inner_joins, filters: inner_filters, keys, partials }),
        });
    }

    // order by: rewrite columns that moved into a keyed input
    let moved: BTreeMap<Scalar, Scalar> = steps
        .iter()
        .filter_map(|s| match &s.unit {
            JoinUnit::Keyed(k) => Some(k),
            _ => None,
        })
        .flat_map(|k| k.keys.iter().map(|(n, c)| (Scalar::column(c), Scalar::Derived { source: k.alias.clone(), column: n.clone() })))
        .collect();
    for key in plan.sort.iter_mut() {
        match &mut key.expr {
            Expr::Scalar(s) => {
                if let Some(d) = moved.get(s) {
                    *s = d.clone();
                }
            }
            Expr::Agg(a) => {
                if let Some(pos) = measures.iter().position(|m| m == a) {
                    *a = outer_measures[pos].clone();
                }
            }
        }
    }

    plan.root = anchor;
    plan.joins = steps;
    plan.filters = filters;
    plan.output = Output::Aggregate { group: std::mem::take(&mut group), measures: outer_measures };
    Some(RULE_SYMMETRIC)
}
