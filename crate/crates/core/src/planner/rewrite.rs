//! Checks on adjudicator-rewritten SQL.

use crate::model::ContextGraph;
use crate::sqlref::{analyze, SchemaLookup};

/// Physical table -> column names for every graph table.
pub fn schema_lookup(graph: &ContextGraph) -> SchemaLookup {
    graph
        .tables
        .iter()
        .map(|t| (t.physical_name.clone(), t.columns.iter().map(|c| c.name.clone()).collect()))
        .collect()
}

/// Accepts `sql` iff it is a single read-only SELECT over graph tables and
/// columns that touches no PII column. Returns the rejection reason.
pub fn validate_rewrite(sql: &str, graph: &ContextGraph) -> Result<(), String> {
    let schema = schema_lookup(graph);
    let a = analyze(sql, Some(&schema)).map_err(|e| e.to_string())?;
    if let Some(t) = a.tables.iter().find(|t| !schema.contains_key(t.as_str())) {
        return Err(format!("unknown table {t}"));
    }
    if let Some(u) = a.unresolved.iter().next() {
        return Err(format!("unresolved column {u}"));
    }
    for c in &a.columns {
        let Some((t, col)) = c.split_once('.') else { continue };
        let Some(node) = graph.tables.iter().find(|n| n.physical_name == t) else {
            return Err(format!("unknown table {t}"));
        };
        match node.column(col) {
            None => return Err(format!("unknown column {c}")),
            Some(m) if m.pii => return Err(format!("pii column {c}")),
            Some(_) => {}
        }
    }
    Ok(())
}
