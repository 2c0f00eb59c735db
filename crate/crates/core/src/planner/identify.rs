//! Which tables a question touches, and how they connect.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::index::{head_noun, table_forms, HitLevel, KeywordIndex};
use crate::model::{ContextGraph, GraphRules, JoinEdge};
use crate::text::{is_stopword, split_words, stem};

/// Term words too generic to trigger a prioritized table on their own.
const GENERIC_TERM_WORDS: &[&str] = &["date", "dt", "id", "name", "type", "code", "status"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSelection {
    /// Mentioned tables by first mention, then connecting tables.
    pub tables: Vec<String>,
    pub join_path: Vec<JoinEdge>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IdentifyError {
    NoTableMatch,
    DisconnectedModels(Vec<String>),
}

/// Question words in order, stopwords removed, as (position, stem).
pub fn question_stems(question: &str) -> Vec<(usize, String)> {
    split_words(question)
        .into_iter()
        .enumerate()
        .filter(|(_, w)| !is_stopword(w))
        .map(|(i, w)| (i, stem(&w)))
        .collect()
}

pub fn identify_tables(
    question: &str,
    graph: &ContextGraph,
    index: &KeywordIndex,
    rules: &GraphRules,
) -> Result<TableSelection, IdentifyError> {
    let tokens = question_stems(question);
    let qset: BTreeSet<String> = tokens.iter().map(|(_, s)| s.clone()).collect();
    let raw: BTreeSet<String> = split_words(question).into_iter().collect();
    let first_pos = |pred: &dyn Fn(&str) -> bool| tokens.iter().find(|(_, s)| pred(s)).map(|(p, _)| *p);

    // table id -> first mention position
    let mut chosen: BTreeMap<String, usize> = BTreeMap::new();

    // A table is named when one of its whole-name forms, its head noun or its
    // alias occurs.
    for t in &graph.tables {
        let forms = table_forms(t, rules);
        let head = head_noun(t);
        let full = forms.iter().any(|f| f.is_subset(&qset));
        let by_head = head.as_ref().is_some_and(|h| qset.contains(h));
        let by_alias = raw.contains(&t.alias.to_lowercase());
        if !(full || by_head || by_alias) {
            continue;
        }
        let weights_hit = |s: &str| index.lookup(s).iter().any(|h| h.table == t.table_id && h.level == HitLevel::Table && h.weight >= 1.0);
        if let Some(p) = first_pos(&weights_hit) {
            chosen.insert(t.table_id.clone(), p);
        } else if by_alias {
            chosen.insert(t.table_id.clone(), 0);
        }
    }

    // Column-level tokens not covered by a chosen table pull in the best
    // table holding them.
    for (pos, s) in &tokens {
        let hits: Vec<_> = index.lookup(s).iter().filter(|h| h.level == HitLevel::Column).collect();
        if hits.is_empty() {
            continue;
        }
        if index.lookup(s).iter().any(|h| chosen.contains_key(&h.table)) {
            continue;
        }
        let dist = distances(graph, &chosen.keys().cloned().collect());
        let best = hits
            .iter()
            .map(|h| (h.weight, dist.get(&h.table).copied().unwrap_or(usize::MAX), h.table.clone()))
            .min_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        if let Some((_, _, table)) = best {
            chosen.entry(table).or_insert(*pos);
        }
    }

    // Prioritized terms pull in the table of their first candidate.
    for rule in rules.prioritizations.values() {
        let distinctive: BTreeSet<String> = split_words(&rule.term)
            .iter()
            .filter(|w| !GENERIC_TERM_WORDS.contains(&w.as_str()))
            .map(|w| stem(w))
            .collect();
        if distinctive.is_empty() || !distinctive.is_subset(&qset) {
            continue;
        }
        if let Some(top) = rule.candidates.first() {
            if graph.table(&top.table).is_some() {
                let pos = first_pos(&|s: &str| distinctive.contains(s)).unwrap_or(0);
                chosen.entry(top.table.clone()).or_insert(pos);
            }
        }
    }

    if chosen.is_empty() {
        return Err(IdentifyError::NoTableMatch);
    }
    let mut ordered: Vec<(usize, String)> = chosen.into_iter().map(|(t, p)| (p, t)).collect();
    ordered.sort();
    let mentioned: Vec<String> = ordered.into_iter().map(|(_, t)| t).collect();
    connect(graph, &mentioned)
}

/// Hop distance from the nearest table in `from`; all zero when `from` is empty.
fn distances(graph: &ContextGraph, from: &BTreeSet<String>) -> BTreeMap<String, usize> {
    if from.is_empty() {
        return graph.tables.iter().map(|t| (t.table_id.clone(), 0)).collect();
    }
    bfs(graph, from.iter().cloned())
}

fn bfs(graph: &ContextGraph, starts: impl IntoIterator<Item = String>) -> BTreeMap<String, usize> {
    let mut dist = BTreeMap::new();
    let mut q = VecDeque::new();
    for s in starts {
        dist.insert(s.clone(), 0);
        q.push_back(s);
    }
    while let Some(t) = q.pop_front() {
        let d = dist[&t];
        for e in graph.edges_of(&t) {
            if let Some(o) = e.other_table(&t) {
                if !dist.contains_key(o) {
                    dist.insert(o.to_string(), d + 1);
                    q.push_back(o.to_string());
                }
            }
        }
    }
    dist
}

/// Strongest edge between two tables, ties by column names.
fn best_edge<'a>(graph: &'a ContextGraph, a: &'a str, b: &str) -> Option<&'a JoinEdge> {
    graph
        .edges_of(a)
        .filter(|e| e.other_table(a) == Some(b))
        .min_by(|x, y| {
            y.confidence
                .total_cmp(&x.confidence)
                .then_with(|| x.left.columns.cmp(&y.left.columns))
                .then_with(|| x.right.columns.cmp(&y.right.columns))
        })
}

/// Links tables in order, each via the shortest path to those already
/// connected: fewest edges, then highest weakest-edge confidence, then the
/// lexicographically smallest table sequence.
pub fn connect(graph: &ContextGraph, mentioned: &[String]) -> Result<TableSelection, IdentifyError> {
    let Some(first) = mentioned.first() else {
        return Err(IdentifyError::NoTableMatch);
    };
    let mut tables = vec![first.clone()];
    let mut path = Vec::new();
    for target in &mentioned[1..] {
        if tables.contains(target) {
            continue;
        }
        let dist = bfs(graph, [target.clone()]);
        let Some(d) = tables.iter().filter_map(|t| dist.get(t)).min().copied() else {
            let mut all = tables.clone();
            all.push(target.clone());
            return Err(IdentifyError::DisconnectedModels(all));
        };
        let mut best: Option<(f64, Vec<String>)> = None;
        for start in tables.iter().filter(|t| dist.get(*t) == Some(&d)) {
            for p in gradient_paths(graph, &dist, start) {
                let weakest = p
                    .windows(2)
                    .filter_map(|w| best_edge(graph, &w[0], &w[1]).map(|e| e.confidence))
                    .fold(f64::INFINITY, f64::min);
                let better = match &best {
                    None => true,
                    Some((bw, bp)) => weakest > *bw || (weakest == *bw && p < *bp),
                };
                if better {
                    best = Some((weakest, p));
                }
            }
        }
        let (_, p) = best.expect("a start at distance d yields a path");
        for w in p.windows(2) {
            let e = best_edge(graph, &w[0], &w[1]).expect("edge on bfs path");
            path.push(e.clone());
            if !tables.contains(&w[1]) {
                tables.push(w[1].clone());
            }
        }
    }
    Ok(TableSelection { tables, join_path: path })
}

/// All paths from `start` down the distance gradient to the target (distance 0).
fn gradient_paths(graph: &ContextGraph, dist: &BTreeMap<String, usize>, start: &str) -> Vec<Vec<String>> {
    let d = dist[start];
    if d == 0 {
        return vec![vec![start.to_string()]];
    }
    let mut next: Vec<&str> = graph
        .edges_of(start)
        .filter_map(|e| e.other_table(start))
        .filter(|o| dist.get(*o) == Some(&(d - 1)))
        .collect();
    next.sort();
    next.dedup();
    let mut out = Vec::new();
    for n in next {
        for mut tail in gradient_paths(graph, dist, n) {
            tail.insert(0, start.to_string());
            out.push(tail);
        }
    }
    out
}
