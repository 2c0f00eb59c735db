use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{validate_graph, ContextGraph, Violation};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("malformed graph document: {0}")]
    MalformedDocument(String),
    #[error("unsupported schema_version {0}")]
    UnsupportedSchemaVersion(u64),
    #[error("graph is not valid: {0:?}")]
    InvalidGraph(Vec<Violation>),
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    graph: &'a ContextGraph,
}

#[derive(Deserialize)]
struct DocumentIn {
    #[serde(flatten)]
    graph: ContextGraph,
}

/// Pretty-printed JSON document with a trailing newline.
pub fn serialize_graph(graph: &ContextGraph) -> Result<Vec<u8>, DocumentError> {
    let violations = validate_graph(graph);
    if !violations.is_empty() {
        return Err(DocumentError::InvalidGraph(violations));
    }
    let mut bytes = serde_json::to_vec_pretty(&DocumentOut { schema_version: SCHEMA_VERSION, graph })
        .map_err(|e| DocumentError::MalformedDocument(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn deserialize_graph(bytes: &[u8]) -> Result<ContextGraph, DocumentError> {
    let raw: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| DocumentError::MalformedDocument(e.to_string()))?;
    let version = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| DocumentError::MalformedDocument("missing schema_version".into()))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(DocumentError::UnsupportedSchemaVersion(version));
    }
    let doc: DocumentIn = serde_json::from_value(raw).map_err(|e| DocumentError::MalformedDocument(e.to_string()))?;
    Ok(doc.graph)
}
