//! End-to-end graph build: profile, detect keys, infer joins, enrich.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adjudicator::{Adjudicator, TextKind, Transcript};
use crate::enrich::{classify_column, derive_custom_measures, describe_column, detect_pii, expand_name, generate_alias, Lexicons};
use crate::joins::{
    detect_primary_keys, generate_candidates, infer_joins, prune_candidates, JoinCandidate, JoinConfig, JoinError, TableProfile,
};
use crate::model::{validate_graph, ColumnMeta, ColumnRole, ContextGraph, TableNode, Violation, MAX_SAMPLE_VALUES};
use crate::profile::{profile_table, AdapterError, DataSourceAdapter, ProfileError, DEFAULT_SAMPLE_SIZE};
use crate::sqlref::parse_query;
use crate::value::Value;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildOptions {
    pub graph_id: String,
    /// Restrict to these tables; all tables when `None`.
    pub tables: Option<Vec<String>>,
    pub sample_size: usize,
    pub built_at: DateTime<Utc>,
    pub joins: JoinConfig,
}

impl BuildOptions {
    pub fn new(graph_id: impl Into<String>, built_at: DateTime<Utc>) -> Self {
        BuildOptions {
            graph_id: graph_id.into(),
            tables: None,
            sample_size: DEFAULT_SAMPLE_SIZE,
            built_at,
            joins: JoinConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Join(#[from] JoinError),
    #[error("no tables selected")]
    NoTables,
    #[error("built graph violates invariants: {0:?}")]
    Invalid(Vec<Violation>),
}

#[derive(Debug)]
pub struct BuildOutput {
    pub graph: ContextGraph,
    pub profiles: Vec<TableProfile>,
    pub candidates: Vec<JoinCandidate>,
}

/// Stable id derived from a source label and the selected tables.
pub fn derive_graph_id(source_label: &str, tables: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(source_label.as_bytes());
    for t in tables {
        h.update([0u8]);
        h.update(t.as_bytes());
    }
    format!("g{}", &hex::encode(h.finalize())[..12])
}

fn quote(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

pub fn build_graph(
    adapter: &dyn DataSourceAdapter,
    opts: &BuildOptions,
    adjudicator: &dyn Adjudicator,
    transcript: &Transcript,
) -> Result<BuildOutput, BuildError> {
    let lex = Lexicons::bundled();
    let mut tables = match &opts.tables {
        Some(t) => t.clone(),
        None => adapter.list_tables()?,
    };
    tables.sort();
    tables.dedup();
    if tables.is_empty() {
        return Err(BuildError::NoTables);
    }

    let profiles: Vec<TableProfile> = tables
        .par_iter()
        .map(|t| {
            profile_table(adapter, &opts.graph_id, t, opts.sample_size).map(|stats| TableProfile { table: t.clone(), stats })
        })
        .collect::<Result<_, _>>()?;

    let detected: BTreeMap<String, Vec<String>> =
        profiles.iter().map(|p| (p.table.clone(), detect_primary_keys(&p.table, &p.stats))).collect();
    let keys: BTreeMap<String, String> =
        detected.iter().filter_map(|(t, ks)| ks.first().map(|k| (t.clone(), k.clone()))).collect();

    let mut domains = BTreeMap::new();
    for (t, k) in &keys {
        let sql = format!("SELECT DISTINCT {} FROM {}", quote(k), quote(t));
        debug_assert!(parse_query(&sql).is_ok());
        let rs = adapter.execute(&sql)?;
        let set: BTreeSet<Value> = rs.rows.into_iter().filter_map(|r| r.into_iter().next()).filter(|v| !v.is_null()).collect();
        domains.insert(t.clone(), set);
    }

    let candidates = prune_candidates(generate_candidates(&profiles, &keys, &domains, &opts.joins), &detected, &opts.joins);
    let joins = infer_joins(&candidates, Some(adapter), adjudicator, transcript, &opts.joins)?;

    let mut endpoints: BTreeSet<(String, String)> = BTreeSet::new();
    for e in &joins {
        for side in [&e.left, &e.right] {
            for c in &side.columns {
                endpoints.insert((side.table_id.clone(), c.clone()));
            }
        }
    }

    let mut aliases = BTreeSet::new();
    let mut nodes = Vec::with_capacity(profiles.len());
    for p in &profiles {
        let display = refine(adjudicator, TextKind::DisplayName, &expand_name(&p.table, lex), &p.table, transcript);
        let alias = generate_alias(&p.table, &aliases);
        aliases.insert(alias.clone());
        let pk = keys.get(&p.table);
        let mut columns = Vec::with_capacity(p.stats.len());
        for s in &p.stats {
            let is_endpoint = pk == Some(&s.column) || endpoints.contains(&(p.table.clone(), s.column.clone()));
            let mut col = ColumnMeta::new(&s.column, s.inferred_type);
            col.pii = detect_pii(&s.column, s, lex);
            let role = classify_column(&s.column, s.inferred_type, s, is_endpoint, lex);
            let role_name = if role == ColumnRole::Measure { "measure" } else { "dimension" };
            col.role = match refine(adjudicator, TextKind::ColumnRole, role_name, &s.column, transcript).as_str() {
                "measure" if s.inferred_type.is_numeric() => ColumnRole::Measure,
                "dimension" => ColumnRole::Dimension,
                _ => role,
            };
            col.display_name = refine(adjudicator, TextKind::DisplayName, &expand_name(&s.column, lex), &s.column, transcript);
            if !col.pii {
                col.sample_values = s.value_sample.iter().take(MAX_SAMPLE_VALUES).cloned().collect();
            }
            col.description = refine(adjudicator, TextKind::Description, &describe_column(&col, &display), &s.column, transcript);
            col.stats_ref = Some(format!("{}.{}", p.table, s.column));
            columns.push(col);
        }
        let rows = p.stats.first().map(|s| s.sampled_rows).unwrap_or(0);
        let row_count = adapter_row_count(adapter, &p.table).unwrap_or(rows);
        nodes.push(TableNode {
            table_id: p.table.clone(),
            physical_name: p.table.clone(),
            description: format!("{display} ({row_count} rows)"),
            display_name: display,
            alias,
            columns,
            primary_key: pk.map(|k| vec![k.clone()]).unwrap_or_default(),
            row_count_estimate: row_count,
        });
    }

    let mut graph = ContextGraph {
        graph_id: opts.graph_id.clone(),
        version: 1,
        built_at: opts.built_at,
        tables: nodes,
        joins,
        annotations: Vec::new(),
    };
    graph.annotations = derive_custom_measures(&graph);
    let violations = validate_graph(&graph);
    if !violations.is_empty() {
        return Err(BuildError::Invalid(violations));
    }
    Ok(BuildOutput { graph, profiles, candidates })
}

fn refine(adj: &dyn Adjudicator, kind: TextKind, input: &str, subject: &str, log: &Transcript) -> String {
    let out = adj.refine_text(kind, input, &json!({"subject": subject}), log);
    if out.trim().is_empty() {
        input.to_string()
    } else {
        out
    }
}

fn adapter_row_count(adapter: &dyn DataSourceAdapter, table: &str) -> Option<u64> {
    let rs = adapter.execute(&format!("SELECT COUNT(*) FROM {}", quote(table))).ok()?;
    rs.rows.first()?.first()?.as_f64().map(|f| f as u64)
}
