//! Roles, the capability matrix and viewer result shaping.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::planner::{LogicalPlan, Output};
use crate::profile::ResultSet;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Administrator,
    Owner,
    User,
    Viewer,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Administrator, Role::Owner, Role::User, Role::Viewer];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    PlanQuery,
    ExecuteQuery,
    ViewFullResults,
    ViewGraph,
    Bookmark,
    SubmitFeedback,
    ViewHistory,
    ViewInsights,
    ResolveFeedback,
    ApplyAnnotation,
    RebuildGraph,
    RegisterDatasource,
    ManageConfiguration,
    ManagePermissions,
}

impl Action {
    pub const ALL: [Action; 14] = [
        Action::PlanQuery,
        Action::ExecuteQuery,
        Action::ViewFullResults,
        Action::ViewGraph,
        Action::Bookmark,
        Action::SubmitFeedback,
        Action::ViewHistory,
        Action::ViewInsights,
        Action::ResolveFeedback,
        Action::ApplyAnnotation,
        Action::RebuildGraph,
        Action::RegisterDatasource,
        Action::ManageConfiguration,
        Action::ManagePermissions,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    RoleForbidden,
    SummaryOnly,
    NoGrant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }
}

/// The capability matrix. Depends on nothing but its arguments.
pub fn authorize_role(role: Role, action: Action) -> Decision {
    use Action::*;
    match role {
        Role::Administrator | Role::Owner => Decision::Allow,
        Role::User => match action {
            PlanQuery | ExecuteQuery | ViewFullResults | ViewGraph | Bookmark | SubmitFeedback | ViewHistory => Decision::Allow,
            _ => Decision::Deny(DenyReason::RoleForbidden),
        },
        Role::Viewer => match action {
            PlanQuery | ExecuteQuery | ViewGraph | ViewHistory => Decision::Allow,
            ViewFullResults => Decision::Deny(DenyReason::SummaryOnly),
            _ => Decision::Deny(DenyReason::RoleForbidden),
        },
    }
}

/// Whose history a role may list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryScope {
    All,
    Own,
}

pub fn history_scope(role: Role) -> HistoryScope {
    match role {
        Role::Administrator | Role::Owner => HistoryScope::All,
        Role::User | Role::Viewer => HistoryScope::Own,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    pub role: Role,
    /// Graph ids this principal may use; `*` grants every graph.
    #[serde(default)]
    pub grants: BTreeSet<String>,
}

impl Principal {
    pub fn can_access(&self, graph_id: &str) -> bool {
        self.role == Role::Administrator || self.grants.contains("*") || self.grants.contains(graph_id)
    }
}

/// Role check, then the graph grant when a graph is named.
pub fn authorize(principal: &Principal, action: Action, graph_id: Option<&str>) -> Decision {
    match authorize_role(principal.role, action) {
        Decision::Allow => match graph_id {
            Some(g) if !principal.can_access(g) => Decision::Deny(DenyReason::NoGrant),
            _ => Decision::Allow,
        },
        d => d,
    }
}

pub fn hash_token(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrincipalEntry {
    pub id: String,
    pub role: Role,
    /// Hex SHA-256 of the bearer token.
    pub token_sha256: String,
    #[serde(default)]
    pub grants: BTreeSet<String>,
}

#[derive(Debug, Error)]
pub enum PrincipalsError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad principals file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate principal or token: {0}")]
    Duplicate(String),
}

#[derive(Debug, Default)]
struct Table {
    by_hash: BTreeMap<String, Principal>,
}

impl Table {
    fn build(entries: Vec<PrincipalEntry>) -> Result<Self, PrincipalsError> {
        let mut by_hash = BTreeMap::new();
        let mut ids = BTreeSet::new();
        for e in entries {
            let hash = e.token_sha256.to_lowercase();
            if !ids.insert(e.id.clone()) || by_hash.contains_key(&hash) {
                return Err(PrincipalsError::Duplicate(e.id));
            }
            by_hash.insert(hash, Principal { id: e.id, role: e.role, grants: e.grants });
        }
        Ok(Table { by_hash })
    }
}

/// Bearer-token lookup. `reload` swaps the whole table at once.
#[derive(Debug, Clone, Default)]
pub struct Principals {
    table: Arc<RwLock<Table>>,
}

impl Principals {
    pub fn from_entries(entries: Vec<PrincipalEntry>) -> Result<Self, PrincipalsError> {
        Ok(Principals { table: Arc::new(RwLock::new(Table::build(entries)?)) })
    }

    pub fn from_json(text: &str) -> Result<Self, PrincipalsError> {
        Self::from_entries(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, PrincipalsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn reload(&self, path: &Path) -> Result<(), PrincipalsError> {
        let fresh = Table::build(serde_json::from_str(&std::fs::read_to_string(path)?)?)?;
        *self.table.write().unwrap_or_else(|p| p.into_inner()) = fresh;
        Ok(())
    }

    pub fn authenticate(&self, token: &str) -> Option<Principal> {
        self.table.read().unwrap_or_else(|p| p.into_inner()).by_hash.get(&hash_token(token)).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub non_null: usize,
    pub distinct: usize,
    /// Present for numeric columns only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub row_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<ColumnSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ShapedResult {
    Rows(ResultSet),
    Summary(ResultSummary),
}

pub fn summarize(rs: &ResultSet) -> ResultSummary {
    if rs.rows.is_empty() {
        return ResultSummary { row_count: 0, columns: Vec::new() };
    }
    let columns = rs
        .columns
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let vals: Vec<&Value> = rs.rows.iter().filter_map(|r| r.get(i)).filter(|v| !v.is_null()).collect();
            let distinct = vals.iter().collect::<BTreeSet<_>>().len();
            let nums: Option<Vec<f64>> = (!vals.is_empty()).then(|| vals.iter().map(|v| v.as_f64()).collect()).flatten();
            let (min, max) = match nums {
                Some(ns) if vals.iter().all(|v| matches!(v, Value::Int(_) | Value::Float(_))) => (
                    ns.iter().copied().reduce(f64::min),
                    ns.iter().copied().reduce(f64::max),
                ),
                _ => (None, None),
            };
            ColumnSummary { name: name.clone(), non_null: vals.len(), distinct, min, max }
        })
        .collect();
    ResultSummary { row_count: rs.rows.len(), columns }
}

/// The one place results are shaped for a principal: aggregated plans pass
/// through; anything else reaches a role without full-result rights only as
/// a summary.
pub fn shape_result(role: Role, rs: ResultSet, plan: &LogicalPlan) -> ShapedResult {
    let aggregated = matches!(plan.output, Output::Aggregate { .. });
    if aggregated || authorize_role(role, Action::ViewFullResults).is_allow() {
        ShapedResult::Rows(rs)
    } else {
        ShapedResult::Summary(summarize(&rs))
    }
}

pub fn shape_for_viewer(rs: ResultSet, plan: &LogicalPlan) -> ShapedResult {
    shape_result(Role::Viewer, rs, plan)
}
