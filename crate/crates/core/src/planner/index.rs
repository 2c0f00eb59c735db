//! Token index over table and column vocabulary.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{ColumnMeta, ColumnRole, ContextGraph, GraphRules, TableNode, MAX_SAMPLE_VALUES};
use crate::text::{split_words, stem, stem_set, stems};
use crate::value::DataType;

pub const NAME_WEIGHT: f64 = 1.0;
pub const ALIAS_WEIGHT: f64 = 1.0;
pub const DESCRIPTION_WEIGHT: f64 = 0.5;
pub const SAMPLE_VALUE_WEIGHT: f64 = 0.7;

/// Sample values are indexed only for text dimensions with at most this many
/// distinct values.
pub const MAX_INDEXED_CARDINALITY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitLevel {
    Table,
    Column,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexHit {
    pub table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    pub level: HitLevel,
    pub weight: f64,
}

/// Stemmed token -> hits, one per (table, column, level) at the highest
/// contributing weight.
#[derive(Debug, Clone, Default)]
pub struct KeywordIndex {
    entries: BTreeMap<String, Vec<IndexHit>>,
}

impl KeywordIndex {
    pub fn build(graph: &ContextGraph, rules: &GraphRules) -> Self {
        let mut idx = KeywordIndex::default();
        for t in &graph.tables {
            for s in table_name_stems(t, rules) {
                idx.add(&s, &t.table_id, None, HitLevel::Table, NAME_WEIGHT);
            }
            idx.add(&t.alias.to_lowercase(), &t.table_id, None, HitLevel::Table, ALIAS_WEIGHT);
            for s in stems(&t.description) {
                idx.add(&s, &t.table_id, None, HitLevel::Table, DESCRIPTION_WEIGHT);
            }
            for c in &t.columns {
                for s in column_name_stems(c) {
                    idx.add(&s, &t.table_id, Some(&c.name), HitLevel::Column, NAME_WEIGHT);
                }
                for a in &c.aliases {
                    for s in stems(a) {
                        idx.add(&s, &t.table_id, Some(&c.name), HitLevel::Column, ALIAS_WEIGHT);
                    }
                }
                if indexes_values(c) {
                    for v in c.sample_values.iter().filter_map(|v| v.as_str()) {
                        for s in stems(v) {
                            idx.add(&s, &t.table_id, Some(&c.name), HitLevel::Column, SAMPLE_VALUE_WEIGHT);
                        }
                    }
                }
            }
        }
        idx
    }

    fn add(&mut self, token: &str, table: &str, column: Option<&str>, level: HitLevel, weight: f64) {
        if token.is_empty() {
            return;
        }
        let hits = self.entries.entry(token.to_string()).or_default();
        match hits.iter_mut().find(|h| h.table == table && h.column.as_deref() == column && h.level == level) {
            Some(h) => h.weight = h.weight.max(weight),
            None => hits.push(IndexHit { table: table.to_string(), column: column.map(str::to_string), level, weight }),
        }
    }

    /// Hits for an already-stemmed token.
    pub fn lookup(&self, stemmed: &str) -> &[IndexHit] {
        self.entries.get(stemmed).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Highest weight per table for a raw word.
    pub fn table_weights(&self, word: &str) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for h in self.lookup(&stem(word)) {
            let w = out.entry(h.table.clone()).or_insert(0.0);
            *w = w.max(h.weight);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Whether the column's sample values are a complete, small, non-PII text
/// domain.
pub fn indexes_values(c: &ColumnMeta) -> bool {
    !c.pii
        && c.role == ColumnRole::Dimension
        && c.data_type == DataType::Text
        && !c.sample_values.is_empty()
        && c.sample_values.len() < MAX_SAMPLE_VALUES.min(MAX_INDEXED_CARDINALITY)
}

/// Stems of the table id, display name and table synonyms.
pub fn table_name_stems(t: &TableNode, rules: &GraphRules) -> BTreeSet<String> {
    let mut out = stem_set(&t.table_id);
    out.extend(stems(&t.display_name));
    if let Some(syns) = rules.table_synonyms.get(&t.table_id) {
        for s in syns {
            out.extend(stems(s));
        }
    }
    out
}

/// Whole-name forms of a table, each as a stem set.
pub fn table_forms(t: &TableNode, rules: &GraphRules) -> Vec<BTreeSet<String>> {
    let mut forms = vec![stem_set(&t.table_id), stem_set(&t.display_name)];
    if let Some(syns) = rules.table_synonyms.get(&t.table_id) {
        forms.extend(syns.iter().map(|s| stem_set(s)));
    }
    forms.retain(|f| !f.is_empty());
    forms.dedup();
    forms
}

/// Last word of the table name, stemmed: "account" for `member_account`.
pub fn head_noun(t: &TableNode) -> Option<String> {
    split_words(&t.table_id).last().map(|w| stem(w))
}

pub fn column_name_stems(c: &ColumnMeta) -> BTreeSet<String> {
    let mut out = stem_set(&c.name);
    out.extend(stems(&c.display_name));
    out
}

/// Whole-name forms of a column: name, display name and each alias.
pub fn column_forms(c: &ColumnMeta) -> Vec<BTreeSet<String>> {
    let mut forms = vec![stem_set(&c.name), stem_set(&c.display_name)];
    forms.extend(c.aliases.iter().map(|a| stem_set(a)));
    forms.retain(|f| !f.is_empty());
    forms.dedup();
    forms
}

const TEMPORAL_WORDS: &[&str] = &["date", "dt", "time", "timestamp", "ts", "at", "on", "day"];

/// Leading word stems of a date column, e.g. `close` for `close_date` and
/// `transact` for `txn_date` displayed as "Transaction Date".
pub fn date_heads(c: &ColumnMeta) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for name in [&c.name, &c.display_name] {
        if let Some(w) = split_words(name).into_iter().find(|w| !TEMPORAL_WORDS.contains(&w.as_str())) {
            out.insert(stem(&w));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Value;
    use chrono::TimeZone;

    fn graph() -> ContextGraph {
        let mut g = ContextGraph::empty("g", chrono::Utc.timestamp_opt(0, 0).unwrap());
        let mut branch = ColumnMeta::new("branch", DataType::Text);
        branch.sample_values = vec![Value::Text("Downtown".into()), Value::Text("Lakeview".into())];
        g.tables.push(TableNode {
            table_id: "member".into(),
            physical_name: "member".into(),
            display_name: "Member".into(),
            alias: "memb".into(),
            description: "Member (3 rows)".into(),
            columns: vec![ColumnMeta::new("member_id", DataType::Integer), branch],
            primary_key: vec!["member_id".into()],
            row_count_estimate: 3,
        });
        g.tables.push(TableNode {
            table_id: "member_account".into(),
            physical_name: "member_account".into(),
            display_name: "Member Account".into(),
            alias: "ma".into(),
            description: "Member Account (3 rows)".into(),
            columns: vec![ColumnMeta::new("account_id", DataType::Integer)],
            primary_key: vec!["account_id".into()],
            row_count_estimate: 3,
        });
        g
    }

    #[test]
    fn member_hits_both_tables_at_full_weight() {
        let g = graph();
        let idx = KeywordIndex::build(&g, &GraphRules::default());
        let w = idx.table_weights("member");
        assert_eq!(w.get("member"), Some(&1.0));
        assert_eq!(w.get("member_account"), Some(&1.0));
    }

    #[test]
    fn sample_values_are_column_level() {
        let g = graph();
        let idx = KeywordIndex::build(&g, &GraphRules::default());
        let hits = idx.lookup(&stem("downtown"));
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].level, HitLevel::Column);
        assert_eq!(hits[0].weight, SAMPLE_VALUE_WEIGHT);
        assert_eq!(hits[0].column.as_deref(), Some("branch"));
    }

    #[test]
    fn description_weight_is_half() {
        let g = graph();
        let idx = KeywordIndex::build(&g, &GraphRules::default());
        assert_eq!(idx.table_weights("rows").get("member"), Some(&DESCRIPTION_WEIGHT));
    }

    #[test]
    fn date_heads_use_display_words() {
        let mut c = ColumnMeta::new("txn_date", DataType::Date);
        c.display_name = "Transaction Date".into();
        let heads = date_heads(&c);
        assert!(heads.contains("txn"));
        assert!(heads.contains(&stem("transactions")));
    }
}
