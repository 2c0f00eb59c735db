use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::Json;
use chrono::{DateTime, Utc};
use ctxsql_core::access::{history_scope, shape_result, Action, HistoryScope, ShapedResult};
use ctxsql_core::adjudicator::Transcript;
use ctxsql_core::builder::{build_graph, derive_graph_id, BuildOptions};
use ctxsql_core::model::{apply_annotation, Annotation, AnnotationPayload, AnnotationTarget, ContextGraph};
use ctxsql_core::planner::{Dialect, PlanContext};
use ctxsql_core::profile::{DataSourceAdapter, SourceKind};
use ctxsql_core::store::{self, Bookmark, FeedbackEntry, FeedbackStatus, Sentiment};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::registry::DatasourceConfig;
use crate::{ApiError, AppState, Auth, BuildStatus};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

fn body<T>(b: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    b.map(|Json(t)| t).map_err(|e| ApiError::unprocessable(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))
}

#[derive(Deserialize)]
pub struct DatasourceRequest {
    path: PathBuf,
    kind: Option<SourceKind>,
}

pub async fn register_datasource(
    State(st): Shared,
    auth: Auth,
    req: Result<Json<DatasourceRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    auth.require(Action::RegisterDatasource, None)?;
    let req = body(req)?;
    let kind = req.kind.unwrap_or_else(|| SourceKind::detect(&req.path));
    let cfg = DatasourceConfig { kind, path: req.path };
    let probe = cfg.clone();
    let tables = blocking(move || ctxsql_core::profile::open_source(probe.kind, &probe.path).and_then(|a| a.list_tables()))
        .await?
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let id = st.registry.add_datasource(cfg.clone()).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "kind": cfg.kind, "path": cfg.path, "tables": tables }))))
}

pub async fn list_datasources(State(st): Shared, auth: Auth) -> ApiResult<Json<Value>> {
    auth.require(Action::RegisterDatasource, None)?;
    Ok(Json(json!(st.registry.datasources())))
}

#[derive(Deserialize)]
pub struct GraphRequest {
    datasource: String,
    tables: Option<Vec<String>>,
}

pub async fn create_graph(
    State(st): Shared,
    auth: Auth,
    req: Result<Json<GraphRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    auth.require(Action::RebuildGraph, None)?;
    let req = body(req)?;
    let adapter = st.adapter(&req.datasource)?;
    let probe = adapter.clone();
    let available: BTreeSet<String> =
        blocking(move || probe.list_tables()).await?.map_err(|e| ApiError::unprocessable(e.to_string()))?.into_iter().collect();
    let mut tables: Vec<String> = match req.tables {
        Some(t) => t,
        None => available.iter().cloned().collect(),
    };
    tables.sort();
    tables.dedup();
    if let Some(missing) = tables.iter().find(|t| !available.contains(*t)) {
        return Err(ApiError::unprocessable(format!("unknown table {missing}")));
    }
    if tables.is_empty() {
        return Err(ApiError::unprocessable("no tables selected"));
    }
    let graph_id = derive_graph_id(&req.datasource, &tables);
    let previous = st.store.load_graph(&graph_id).ok();
    if previous.is_some() {
        auth.require(Action::RebuildGraph, Some(&graph_id))?;
    }
    if !st.begin_build(&graph_id) {
        return Err(ApiError::conflict(format!("graph {graph_id} is already building")));
    }
    if let Err(e) = st.registry.bind_graph(&graph_id, &req.datasource) {
        st.finish_build(&graph_id, BuildStatus::Failed { reason: e.to_string() });
        return Err(ApiError::internal(e.to_string()));
    }

    let worker = st.clone();
    let gid = graph_id.clone();
    tokio::task::spawn_blocking(move || {
        let status = match run_build(&worker, adapter.as_ref(), &gid, tables, previous) {
            Ok(()) => BuildStatus::Ready,
            Err(reason) => {
                tracing::warn!(graph = %gid, %reason, "build failed");
                BuildStatus::Failed { reason }
            }
        };
        worker.forget_planner(&gid);
        worker.finish_build(&gid, status);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "graph_id": graph_id, "job_id": graph_id, "status": "building" }))))
}

/// Builds and saves a graph. A rebuild keeps the earlier annotations and
/// takes the next version number.
fn run_build(
    st: &AppState,
    adapter: &dyn DataSourceAdapter,
    graph_id: &str,
    tables: Vec<String>,
    previous: Option<ContextGraph>,
) -> Result<(), String> {
    let mut opts = BuildOptions::new(graph_id, st.now());
    opts.tables = Some(tables);
    opts.sample_size = st.config.sample_size;
    let mut graph = build_graph(adapter, &opts, st.adjudicator.as_ref(), &Transcript::default()).map_err(|e| e.to_string())?.graph;
    if let Some(prev) = previous {
        for ann in prev.annotations {
            match apply_annotation(&graph, ann) {
                Ok(g) => graph = g,
                Err(e) => tracing::warn!(graph = %graph_id, error = %e, "annotation dropped on rebuild"),
            }
        }
        graph.version = prev.version + 1;
    }
    st.store.save_graph(&graph).map_err(|e| e.to_string())?;
    Ok(())
}

pub async fn list_graphs(State(st): Shared, auth: Auth) -> ApiResult<Json<Value>> {
    auth.require(Action::ViewGraph, None)?;
    let ids = st.store.graph_ids()?;
    let visible: Vec<Value> = ids
        .into_iter()
        .filter(|g| auth.0.can_access(g))
        .map(|g| json!({ "graph_id": g, "datasource": st.registry.graph_source(&g) }))
        .collect();
    Ok(Json(json!(visible)))
}

pub async fn get_graph(State(st): Shared, auth: Auth, Path(id): Path<String>) -> ApiResult<Json<ContextGraph>> {
    auth.require(Action::ViewGraph, Some(&id))?;
    Ok(Json(st.planner(&id)?.graph.clone()))
}

pub async fn graph_status(State(st): Shared, auth: Auth, Path(id): Path<String>) -> ApiResult<Json<BuildStatus>> {
    auth.require(Action::ViewGraph, Some(&id))?;
    st.build_status(&id).map(Json).ok_or_else(|| ApiError::not_found(format!("graph {id}")))
}

#[derive(Deserialize)]
pub struct QueryRequest {
    question: String,
    #[serde(default)]
    execute: bool,
    #[serde(default)]
    dry_run: bool,
    /// Anchors relative dates; the server clock when absent.
    clock: Option<DateTime<Utc>>,
}

pub async fn query(
    State(st): Shared,
    auth: Auth,
    Path(id): Path<String>,
    req: Result<Json<QueryRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    auth.require(Action::PlanQuery, Some(&id))?;
    let req = body(req)?;
    let run = req.execute && !req.dry_run;
    if run {
        auth.require(Action::ExecuteQuery, Some(&id))?;
    }
    let planner = st.planner(&id)?;
    let source = st.registry.graph_source(&id);
    let ctx = PlanContext {
        clock: req.clock.unwrap_or_else(|| st.now()),
        principal: auth.0.id.clone(),
        // registered sources are SQLite underneath
        dialect: if source.is_some() { Dialect::Sqlite } else { st.config.dialect },
        default_limit: st.config.default_limit,
    };
    let adj = st.adjudicator.clone();
    let question = req.question.clone();
    let outcome = blocking(move || planner.plan(&question, adj.as_ref(), &ctx)).await?;
    let audit = st.store.append_history(outcome.audit)?;
    let planned = outcome.result.map_err(|f| ApiError::planner(&f, &audit.id))?;

    let mut out = json!({
        "audit_id": audit.id,
        "graph_id": audit.graph_id,
        "graph_version": audit.graph_version,
        "question": audit.question,
        "dry_run": !run,
        "sketch": audit.sketch,
        "tables": audit.tables,
        "join_path": audit.join_path,
        "groundings": audit.groundings,
        "suppressed": audit.suppressed,
        "rules_fired": audit.rules_fired,
        "table_fallback": audit.table_fallback,
        "rewrite_applied": audit.rewrite_applied,
        "rewrite_rejected": audit.rewrite_rejected,
        "sql": planned.sql,
        "tree": planned.tree,
    });
    if run {
        let ds = source.ok_or_else(|| ApiError::unprocessable(format!("graph {id} has no registered datasource")))?;
        let adapter = st.adapter(&ds)?;
        let sql = planned.sql.clone();
        let rs = blocking(move || adapter.execute(&sql)).await?.map_err(|e| ApiError::internal(e.to_string()))?;
        let shaped: ShapedResult = shape_result(auth.0.role, rs, &planned.plan);
        out["result"] = json!(shaped);
    }
    Ok(Json(out))
}

#[derive(Deserialize)]
pub struct AnnotationRequest {
    target: AnnotationTarget,
    #[serde(flatten)]
    payload: AnnotationPayload,
}

pub async fn annotate(
    State(st): Shared,
    auth: Auth,
    Path(id): Path<String>,
    req: Result<Json<AnnotationRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    auth.require(Action::ApplyAnnotation, Some(&id))?;
    let req = body(req)?;
    let _guard = st.annotate_lock.lock().await;
    let current = st.planner(&id)?.graph.clone();
    let ann = Annotation { target: req.target, payload: req.payload, author: auth.0.id.clone(), created_at: st.now() };
    let next = apply_annotation(&current, ann).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    st.store.save_graph(&next)?;
    st.forget_planner(&id);
    Ok(Json(json!({ "graph_id": id, "version": next.version, "annotations": next.annotations.len() })))
}

#[derive(Deserialize)]
pub struct FeedbackRequest {
    graph_id: String,
    audit_ref: String,
    sentiment: Sentiment,
    user_correction: Option<String>,
}

pub async fn submit_feedback(
    State(st): Shared,
    auth: Auth,
    req: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<FeedbackEntry>)> {
    let req = body(req)?;
    auth.require(Action::SubmitFeedback, Some(&req.graph_id))?;
    st.store.history_record(&req.graph_id, &req.audit_ref)?;
    let entry = st.store.submit_feedback(FeedbackEntry {
        id: String::new(),
        graph_id: req.graph_id,
        audit_ref: req.audit_ref,
        principal: auth.0.id.clone(),
        sentiment: req.sentiment,
        user_correction: req.user_correction,
        status: FeedbackStatus::Open,
        created_at: st.now(),
    })?;
    Ok((StatusCode::CREATED, Json(entry)))
}

#[derive(Deserialize)]
pub struct GraphQuery {
    graph_id: String,
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

pub async fn list_feedback(State(st): Shared, auth: Auth, Query(q): Query<GraphQuery>) -> ApiResult<Json<Vec<FeedbackEntry>>> {
    auth.require(Action::ViewInsights, Some(&q.graph_id))?;
    Ok(Json(st.store.list_feedback(&q.graph_id)?))
}

#[derive(Deserialize)]
pub struct FeedbackAction {
    graph_id: String,
    id: String,
    annotation_ref: Option<String>,
}

pub async fn review_feedback(
    State(st): Shared,
    auth: Auth,
    req: Result<Json<FeedbackAction>, JsonRejection>,
) -> ApiResult<Json<FeedbackEntry>> {
    let req = body(req)?;
    auth.require(Action::ResolveFeedback, Some(&req.graph_id))?;
    Ok(Json(st.store.mark_reviewed(&req.graph_id, &req.id)?))
}

pub async fn resolve_feedback(
    State(st): Shared,
    auth: Auth,
    req: Result<Json<FeedbackAction>, JsonRejection>,
) -> ApiResult<Json<FeedbackEntry>> {
    let req = body(req)?;
    auth.require(Action::ResolveFeedback, Some(&req.graph_id))?;
    let reference = req.annotation_ref.ok_or_else(|| ApiError::unprocessable("annotation_ref is required"))?;
    Ok(Json(st.store.resolve_feedback(&req.graph_id, &req.id, &reference, st.now())?))
}

#[derive(Deserialize)]
pub struct BookmarkRequest {
    graph_id: String,
    audit_ref: String,
    label: String,
}

pub async fn add_bookmark(
    State(st): Shared,
    auth: Auth,
    req: Result<Json<BookmarkRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Bookmark>)> {
    let req = body(req)?;
    auth.require(Action::Bookmark, Some(&req.graph_id))?;
    st.store.history_record(&req.graph_id, &req.audit_ref)?;
    let b = st.store.add_bookmark(Bookmark {
        id: String::new(),
        graph_id: req.graph_id,
        owner: auth.0.id.clone(),
        audit_ref: req.audit_ref,
        label: req.label,
        created_at: st.now(),
    })?;
    Ok((StatusCode::CREATED, Json(b)))
}

pub async fn list_bookmarks(State(st): Shared, auth: Auth, Query(q): Query<GraphQuery>) -> ApiResult<Json<Vec<Bookmark>>> {
    auth.require(Action::Bookmark, Some(&q.graph_id))?;
    let all = st.store.list_bookmarks(&q.graph_id)?;
    Ok(Json(all.into_iter().filter(|b| b.owner == auth.0.id).collect()))
}

pub async fn history(State(st): Shared, auth: Auth, Query(q): Query<GraphQuery>) -> ApiResult<Json<Value>> {
    auth.require(Action::ViewHistory, Some(&q.graph_id))?;
    let mut records = st.store.list_history(&q.graph_id)?;
    if history_scope(auth.0.role) == HistoryScope::Own {
        records.retain(|r| r.principal == auth.0.id);
    }
    let total = records.len();
    let page: Vec<_> = records.into_iter().skip(q.offset).take(q.limit.unwrap_or(usize::MAX)).collect();
    Ok(Json(json!({ "total": total, "offset": q.offset, "records": page })))
}

pub async fn insights(State(st): Shared, auth: Auth, Query(q): Query<GraphQuery>) -> ApiResult<Json<store::Insights>> {
    auth.require(Action::ViewInsights, Some(&q.graph_id))?;
    let history = st.store.list_history(&q.graph_id)?;
    let feedback = st.store.list_feedback(&q.graph_id)?;
    Ok(Json(store::insights(&history, &feedback)))
}
