//! Primary-key detection and foreign-key inference from inclusion
//! dependencies.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjudicator::{Adjudicator, Transcript, Verdict};
use crate::model::{Cardinality, EdgeOrigin, JoinEdge, JoinSide};
use crate::profile::{AdapterError, ColumnStats, DataSourceAdapter};
use crate::text::split_words;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JoinConfig {
    pub inclusion_weight: f64,
    pub name_weight: f64,
    pub min_score: f64,
    pub min_inclusion: f64,
}

impl Default for JoinConfig {
    fn default() -> Self {
        JoinConfig { inclusion_weight: 0.7, name_weight: 0.3, min_score: 0.7, min_inclusion: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PruneReason {
    LowScore,
    LowInclusion,
    LowCardinalityPk,
    KeyAlreadyMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinCandidate {
    pub fk_table: String,
    pub fk_column: String,
    pub pk_table: String,
    pub pk_column: String,
    pub inclusion_coeff: f64,
    pub name_similarity: f64,
    pub type_compatible: bool,
    pub score: f64,
    pub pruned_reason: Option<PruneReason>,
    /// Distinct non-null fk values versus non-null fk rows, from the sample.
    pub fk_distinct: u64,
    pub fk_non_null: u64,
    pub pk_distinct: u64,
}

impl JoinCandidate {
    fn sort_key(&self) -> (&str, &str, &str, &str) {
        (&self.fk_table, &self.fk_column, &self.pk_table, &self.pk_column)
    }
}

#[derive(Debug, Error)]
pub enum JoinError {
    #[error("candidate domain has no non-null values")]
    EmptyDomain,
    #[error("adjudicator failed on {candidate}: {message}")]
    AdjudicatorFailure { candidate: String, message: String },
    #[error("adapter failure: {0}")]
    Adapter(#[from] AdapterError),
}

/// Profiled columns of one table, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableProfile {
    pub table: String,
    pub stats: Vec<ColumnStats>,
}

impl TableProfile {
    pub fn column(&self, name: &str) -> Option<&ColumnStats> {
        self.stats.iter().find(|s| s.column == name)
    }
}

fn key_name_bonus(table: &str, column: &str) -> u8 {
    let c = column.to_lowercase();
    if c == "id" || c == format!("{}_id", table.to_lowercase()) {
        3
    } else if c.ends_with("_key") {
        2
    } else if c.ends_with("_id") {
        1
    } else {
        0
    }
}

/// Unique, null-free columns ranked by name evidence, then position.
pub fn detect_primary_keys(table: &str, stats: &[ColumnStats]) -> Vec<String> {
    let mut keys: Vec<(u8, usize, &str)> = stats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.sampled_rows > 0 && s.null_count == 0 && s.distinct_count == s.sampled_rows)
        .map(|(i, s)| (key_name_bonus(table, &s.column), i, s.column.as_str()))
        .collect();
    keys.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    keys.into_iter().map(|(_, _, c)| c.to_string()).collect()
}

/// Fraction of distinct non-null `fk` values found in `pk`.
pub fn inclusion_coefficient(fk: &BTreeSet<Value>, pk: &BTreeSet<Value>) -> Result<f64, JoinError> {
    let domain: Vec<&Value> = fk.iter().filter(|v| !v.is_null()).collect();
    if domain.is_empty() {
        return Err(JoinError::EmptyDomain);
    }
    let hit = domain.iter().filter(|v| pk.contains(**v)).count();
    Ok(hit as f64 / domain.len() as f64)
}

/// Name evidence that `fk_table.fk_column` references `pk_table.pk_column`.
pub fn name_similarity(fk_column: &str, pk_table: &str, pk_column: &str) -> f64 {
    let fk = fk_column.to_lowercase();
    let pkc = pk_column.to_lowercase();
    let pkt = pk_table.to_lowercase();
    if fk == pkc {
        return 1.0;
    }
    if fk == format!("{pkt}_{pkc}") || fk == format!("{pkt}_id") {
        return 0.9;
    }
    let a: BTreeSet<String> = split_words(&fk).into_iter().collect();
    let b: BTreeSet<String> = split_words(&pkc).into_iter().collect();
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pairs every non-key column with every other table's chosen primary key of
/// the same type. Inclusion is measured from the fk value sample against
/// `pk_domains`.
pub fn generate_candidates(
    profiles: &[TableProfile],
    keys: &BTreeMap<String, String>,
    pk_domains: &BTreeMap<String, BTreeSet<Value>>,
    cfg: &JoinConfig,
) -> Vec<JoinCandidate> {
    let mut out: Vec<JoinCandidate> = profiles
        .par_iter()
        .flat_map_iter(|fk_prof| {
            let mut local = Vec::new();
            let own_key = keys.get(&fk_prof.table);
            for fk in &fk_prof.stats {
                if own_key == Some(&fk.column) || fk.value_sample.is_empty() {
                    continue;
                }
                for pk_prof in profiles {
                    if pk_prof.table == fk_prof.table {
                        continue;
                    }
                    let Some(pk_col) = keys.get(&pk_prof.table) else { continue };
                    let Some(pk) = pk_prof.column(pk_col) else { continue };
                    if fk.inferred_type != pk.inferred_type {
                        continue;
                    }
                    let fk_set: BTreeSet<Value> = fk.value_sample.iter().cloned().collect();
                    let empty = BTreeSet::new();
                    let domain = pk_domains.get(&pk_prof.table).unwrap_or(&empty);
                    let Ok(incl) = inclusion_coefficient(&fk_set, domain) else { continue };
                    let name = name_similarity(&fk.column, &pk_prof.table, pk_col);
                    local.push(JoinCandidate {
                        fk_table: fk_prof.table.clone(),
                        fk_column: fk.column.clone(),
                        pk_table: pk_prof.table.clone(),
                        pk_column: pk_col.clone(),
                        inclusion_coeff: incl,
                        name_similarity: name,
                        type_compatible: true,
                        score: cfg.inclusion_weight * incl + cfg.name_weight * name,
                        pruned_reason: None,
                        fk_distinct: fk.distinct_count,
                        fk_non_null: fk.sampled_rows - fk.null_count,
                        pk_distinct: pk.distinct_count,
                    });
                }
            }
            local
        })
        .collect();
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out
}

/// Tags candidates that fail the pruning heuristics. Every candidate is
/// returned; survivors have no `pruned_reason`.
pub fn prune_candidates(
    mut cands: Vec<JoinCandidate>,
    detected_keys: &BTreeMap<String, Vec<String>>,
    cfg: &JoinConfig,
) -> Vec<JoinCandidate> {
    for c in cands.iter_mut() {
        c.pruned_reason = threshold_reason(c, cfg);
    }
    // an fk column that is itself unique loses to a better match between the same tables
    let best: BTreeMap<(String, String), f64> = cands.iter().filter(|c| c.pruned_reason.is_none()).fold(
        BTreeMap::new(),
        |mut m, c| {
            let e = m.entry((c.fk_table.clone(), c.pk_table.clone())).or_insert(f64::MIN);
            *e = e.max(c.score);
            m
        },
    );
    for c in cands.iter_mut() {
        if c.pruned_reason.is_some() {
            continue;
        }
        let is_key = detected_keys.get(&c.fk_table).is_some_and(|ks| ks.contains(&c.fk_column));
        let top = best.get(&(c.fk_table.clone(), c.pk_table.clone())).copied().unwrap_or(f64::MIN);
        if is_key && top > c.score {
            c.pruned_reason = Some(PruneReason::KeyAlreadyMatched);
        }
    }
    cands
}

fn threshold_reason(c: &JoinCandidate, cfg: &JoinConfig) -> Option<PruneReason> {
    if c.inclusion_coeff < cfg.min_inclusion {
        Some(PruneReason::LowInclusion)
    } else if c.score < cfg.min_score {
        Some(PruneReason::LowScore)
    } else if c.pk_distinct < 2 {
        Some(PruneReason::LowCardinalityPk)
    } else {
        None
    }
}

fn quote(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Full-data inclusion coefficient computed by the source itself.
pub fn full_inclusion(adapter: &dyn DataSourceAdapter, c: &JoinCandidate) -> Result<Option<f64>, JoinError> {
    let sql = format!(
        "SELECT COUNT(DISTINCT f.{fc}), COUNT(DISTINCT CASE WHEN p.{pc} IS NOT NULL THEN f.{fc} END) \
         FROM {ft} AS f LEFT JOIN (SELECT DISTINCT {pc} FROM {pt}) AS p ON f.{fc} = p.{pc}",
        fc = quote(&c.fk_column),
        pc = quote(&c.pk_column),
        ft = quote(&c.fk_table),
        pt = quote(&c.pk_table),
    );
    let rs = adapter.execute(&sql)?;
    let row = rs.rows.first();
    let total = row.and_then(|r| r.first()).and_then(Value::as_f64).unwrap_or(0.0);
    let hit = row.and_then(|r| r.get(1)).and_then(Value::as_f64).unwrap_or(0.0);
    Ok((total > 0.0).then(|| hit / total))
}

/// Re-checks survivors on full data (when an adapter is given), adjudicates
/// them and folds accepted ones into canonical edges.
pub fn infer_joins(
    candidates: &[JoinCandidate],
    adapter: Option<&dyn DataSourceAdapter>,
    adjudicator: &dyn Adjudicator,
    transcript: &Transcript,
    cfg: &JoinConfig,
) -> Result<Vec<JoinEdge>, JoinError> {
    let mut survivors: Vec<JoinCandidate> = candidates.iter().filter(|c| c.pruned_reason.is_none()).cloned().collect();
    survivors.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let mut accepted: BTreeMap<(String, String, String), JoinCandidate> = BTreeMap::new();
    for mut c in survivors {
        if let Some(a) = adapter {
            match full_inclusion(a, &c)? {
                Some(full) => {
                    c.inclusion_coeff = full;
                    c.score = cfg.inclusion_weight * full + cfg.name_weight * c.name_similarity;
                }
                None => continue,
            }
            if let Some(reason) = threshold_reason(&c, cfg) {
                tracing::debug!(fk = %format!("{}.{}", c.fk_table, c.fk_column), ?reason, "dropped after full-data check");
                continue;
            }
        }
        let verdict = adjudicator.adjudicate_join(&c, transcript).map_err(|e| JoinError::AdjudicatorFailure {
            candidate: format!("{}.{} -> {}.{}", c.fk_table, c.fk_column, c.pk_table, c.pk_column),
            message: e.to_string(),
        })?;
        if !matches!(verdict, Verdict::Accept) {
            continue;
        }
        let key = (c.fk_table.clone(), c.pk_table.clone(), c.fk_column.clone());
        let replace = accepted.get(&key).is_none_or(|prev| c.score > prev.score);
        if replace {
            accepted.insert(key, c);
        }
    }

    let mut edges: Vec<JoinEdge> = accepted
        .into_values()
        .map(|c| {
            let card = if c.fk_distinct < c.fk_non_null { Cardinality::ManyToOne } else { Cardinality::OneToOne };
            JoinEdge::canonical(
                JoinSide { table_id: c.fk_table, columns: vec![c.fk_column] },
                JoinSide { table_id: c.pk_table, columns: vec![c.pk_column] },
                card,
                c.score.clamp(0.0, 1.0),
                EdgeOrigin::Inferred,
            )
        })
        .collect();
    edges.sort_by(|a, b| {
        (&a.left.table_id, &a.right.table_id, &a.left.columns).cmp(&(&b.left.table_id, &b.right.table_id, &b.left.columns))
    });
    Ok(edges)
}
