use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use ctxsql_core::access::{hash_token, PrincipalEntry, Principals, Role};
use ctxsql_core::adjudicator::DeterministicAdjudicator;
use ctxsql_core::config::Config;
use ctxsql_core::profile::{AdapterError, CsvDirAdapter, DataSourceAdapter, ResultSet};
use ctxsql_core::value::{DataType, Value as Cell};
use ctxsql_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/cu_csv")
}

struct Harness {
    app: Router,
    state: Arc<AppState>,
    _dir: tempfile::TempDir,
}

fn principals() -> Principals {
    let entry = |id: &str, role| PrincipalEntry {
        id: id.into(),
        role,
        token_sha256: hash_token(&format!("{id}-token")),
        grants: ["*".to_string()].into(),
    };
    Principals::from_entries(vec![
        entry("admin", Role::Administrator),
        entry("owner", Role::Owner),
        entry("user", Role::User),
        entry("user2", Role::User),
        entry("viewer", Role::Viewer),
    ])
    .unwrap()
}

fn harness() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let config = Config { data_dir: dir.path().to_path_buf(), ..Config::default() };
    let state = AppState::new(config, principals(), Arc::new(DeterministicAdjudicator))
        .unwrap()
        .with_clock(Utc.with_ymd_and_hms(2025, 4, 1, 0, 0, 0).unwrap());
    let state = Arc::new(state);
    Harness { app: router(state.clone()), state, _dir: dir }
}

impl Harness {
    async fn call(&self, who: Option<&str>, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(w) = who {
            req = req.header("authorization", format!("Bearer {w}-token"));
        }
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn register(&self) -> String {
        let (s, v) = self.call(Some("admin"), Method::POST, "/v1/datasources", Some(json!({ "path": fixture_dir() }))).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    async fn wait_ready(&self, gid: &str) -> Value {
        for _ in 0..600 {
            let (s, v) = self.call(Some("admin"), Method::GET, &format!("/v1/graphs/{gid}/status"), None).await;
            if s == StatusCode::OK && v["status"] != "building" {
                return v;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        panic!("build of {gid} never finished");
    }

    async fn ready_graph(&self) -> String {
        let ds = self.register().await;
        let (s, v) = self.call(Some("owner"), Method::POST, "/v1/graphs", Some(json!({ "datasource": ds }))).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        let gid = v["graph_id"].as_str().unwrap().to_string();
        assert_eq!(self.wait_ready(&gid).await["status"], "ready");
        gid
    }

    async fn ask(&self, who: &str, gid: &str, question: &str, execute: bool) -> (StatusCode, Value) {
        let body = json!({ "question": question, "execute": execute, "dry_run": !execute });
        self.call(Some(who), Method::POST, &format!("/v1/graphs/{gid}/query"), Some(body)).await
    }
}

#[tokio::test]
async fn tokens_are_required() {
    let h = harness();
    let (s, _) = h.call(None, Method::GET, "/v1/graphs", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = h.call(Some("stranger"), Method::GET, "/v1/graphs", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn build_lifecycle() {
    let h = harness();
    let ds = h.register().await;

    let (s, _) = h.call(Some("user"), Method::POST, "/v1/graphs", Some(json!({ "datasource": ds }))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = h.call(Some("admin"), Method::POST, "/v1/graphs", Some(json!({ "datasource": "ds-missing" }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.call(Some("admin"), Method::POST, "/v1/graphs", Some(json!({ "datasource": ds, "tables": ["nope"] }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.call(Some("admin"), Method::POST, "/v1/datasources", Some(json!({ "path": "/no/such/dir" }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, v) = h.call(Some("admin"), Method::POST, "/v1/graphs", Some(json!({ "datasource": ds }))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let gid = v["graph_id"].as_str().unwrap().to_string();
    let (s, _) = h.call(Some("admin"), Method::POST, "/v1/graphs", Some(json!({ "datasource": ds }))).await;
    assert_eq!(s, StatusCode::CONFLICT, "a second build of the same graph must wait");

    assert_eq!(h.wait_ready(&gid).await, json!({ "status": "ready" }));
    let (s, g) = h.call(Some("viewer"), Method::GET, &format!("/v1/graphs/{gid}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(g["tables"].as_array().unwrap().len(), 5);
    assert_eq!(g["joins"].as_array().unwrap().len(), 4);
    assert_eq!(g["version"], 1);

    let (s, _) = h.call(Some("admin"), Method::GET, "/v1/graphs/gunknown", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.call(Some("admin"), Method::GET, "/v1/graphs/gunknown/status", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // a rebuild keeps the id and moves the version on
    let (s, _) = h.call(Some("admin"), Method::POST, "/v1/graphs", Some(json!({ "datasource": ds }))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    h.wait_ready(&gid).await;
    let (_, g) = h.call(Some("admin"), Method::GET, &format!("/v1/graphs/{gid}"), None).await;
    assert_eq!(g["version"], 2);
}

#[tokio::test]
async fn dry_run_explains_without_rows() {
    let h = harness();
    let gid = h.ready_graph().await;
    let (s, v) = h.ask("user", &gid, "Which members have closed accounts in the last quarter?", false).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert!(v.get("result").is_none());
    assert!(v["sql"].as_str().unwrap().contains("BETWEEN '2025-01-01' AND '2025-03-31'"));
    assert_eq!(v["tables"], json!(["member", "member_account"]));
    assert!(!v["groundings"].as_array().unwrap().is_empty());
    assert_eq!(v["join_path"].as_array().unwrap().len(), 1);
}

/// Delegates to the CSV adapter and counts `execute` calls.
struct Counting {
    inner: CsvDirAdapter,
    executes: Arc<AtomicUsize>,
}

impl DataSourceAdapter for Counting {
    fn list_tables(&self) -> Result<Vec<String>, AdapterError> {
        self.inner.list_tables()
    }
    fn read_schema(&self, table: &str) -> Result<Vec<(String, Option<DataType>)>, AdapterError> {
        self.inner.read_schema(table)
    }
    fn scan(&self, table: &str, limit: Option<usize>) -> Result<Vec<Vec<Cell>>, AdapterError> {
        self.inner.scan(table, limit)
    }
    fn execute(&self, sql: &str) -> Result<ResultSet, AdapterError> {
        self.executes.fetch_add(1, Ordering::SeqCst);
        self.inner.execute(sql)
    }
}

#[tokio::test]
async fn dry_runs_never_touch_the_source() {
    let h = harness();
    let gid = h.ready_graph().await;
    let ds = h.state.registry.graph_source(&gid).unwrap();
    let executes = Arc::new(AtomicUsize::new(0));
    h.state.insert_adapter(&ds, Arc::new(Counting { inner: CsvDirAdapter::open(fixture_dir()).unwrap(), executes: executes.clone() }));
    for q in ["List accounts", "Number of cards by card type", "Top 10 accounts by balance"] {
        let body = json!({ "question": q, "execute": true, "dry_run": true });
        let (s, v) = h.call(Some("user"), Method::POST, &format!("/v1/graphs/{gid}/query"), Some(body)).await;
        assert_eq!(s, StatusCode::OK);
        assert!(v.get("result").is_none());
    }
    assert_eq!(executes.load(Ordering::SeqCst), 0);
    let (s, _) = h.ask("user", &gid, "List accounts", true).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(executes.load(Ordering::SeqCst), 1);
}

fn corpus_reference(question: &str) -> String {
    let text = std::fs::read_to_string(fixture_dir().join("../corpus.jsonl")).unwrap();
    text.lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|v| v["question"] == question)
        .map(|v| v["reference_sql"].as_str().unwrap().to_string())
        .unwrap()
}

#[tokio::test]
async fn executed_rows_match_reference() {
    let h = harness();
    let gid = h.ready_graph().await;
    let q = "Which members have closed accounts in the last quarter?";
    let (s, v) = h.ask("user", &gid, q, true).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["result"]["shape"], "rows");
    let ids = |rows: &Vec<Value>| -> BTreeSet<String> { rows.iter().map(|r| r[0].to_string()).collect() };
    let got = ids(v["result"]["rows"].as_array().unwrap());
    let want = CsvDirAdapter::open(fixture_dir()).unwrap().execute(&corpus_reference(q)).unwrap();
    let want: BTreeSet<String> = want.rows.iter().map(|r| serde_json::to_value(&r[0]).unwrap().to_string()).collect();
    assert!(!want.is_empty());
    assert_eq!(got, want);
}

#[tokio::test]
async fn planner_errors_are_structured() {
    let h = harness();
    let gid = h.ready_graph().await;
    let (s, v) = h.ask("user", &gid, "List members with xyz", false).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["stage"], "ground");
    assert_eq!(v["kind"], "UngroundedPhrase");
    assert!(v["alternatives"].is_array());
    assert!(v["audit_id"].as_str().unwrap().contains(":h"));

    let (s, v) = h.ask("user", &gid, "total rainfall by city", false).await;
    assert_eq!((s, v["stage"].clone()), (StatusCode::BAD_REQUEST, json!("identify_tables")));
    let (s, v) = h.ask("user", &gid, "list member ssn", false).await;
    assert_eq!((s, v["kind"].clone()), (StatusCode::BAD_REQUEST, json!("PiiOnlyQuery")));
}

#[tokio::test]
async fn viewers_get_summaries_of_listings() {
    let h = harness();
    let gid = h.ready_graph().await;
    let (s, v) = h.ask("viewer", &gid, "Which members have closed accounts in the last quarter?", true).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["result"]["shape"], "summary");
    assert!(v["result"].get("rows").is_none());
    assert!(v["result"]["row_count"].as_u64().unwrap() > 0);
    let text = v["result"].to_string();
    let (_, full) = h.ask("user", &gid, "Which members have closed accounts in the last quarter?", true).await;
    let first_name = full["result"]["rows"][0][1].as_str().unwrap();
    assert!(!text.contains(first_name), "summary leaked a raw value");

    let (s, v) = h.ask("viewer", &gid, "Number of cards by card type", true).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["result"]["shape"], "rows", "aggregated plans pass through");
}

#[tokio::test]
async fn every_query_is_recorded_once() {
    let h = harness();
    let gid = h.ready_graph().await;
    let questions = [
        "List accounts",
        "total rainfall by city",
        "Number of cards by card type",
        "List members with xyz",
        "Total loan amount by loan type",
        "list member ssn",
    ];
    let mut ok_ids = Vec::new();
    for (i, q) in questions.iter().enumerate() {
        let (s, v) = h.ask(if i % 2 == 0 { "user" } else { "viewer" }, &gid, q, i % 3 == 0).await;
        if s.is_success() {
            ok_ids.push(v["audit_id"].as_str().unwrap().to_string());
        }
    }
    let (_, hist) = h.call(Some("admin"), Method::GET, &format!("/v1/history?graph_id={gid}"), None).await;
    let records = hist["records"].as_array().unwrap();
    assert_eq!(records.len(), questions.len());
    let ids: Vec<&str> = records.iter().map(|r| r["id"].as_str().unwrap()).collect();
    for id in &ok_ids {
        assert_eq!(ids.iter().filter(|x| *x == id).count(), 1);
    }
    assert_eq!(ok_ids.len(), 3);
    assert_eq!(records.iter().filter(|r| r.get("error").is_none()).count(), ok_ids.len());
}

#[tokio::test]
async fn history_is_scoped_by_role() {
    let h = harness();
    let gid = h.ready_graph().await;
    h.ask("user", &gid, "List accounts", false).await;
    h.ask("user2", &gid, "List accounts", false).await;
    h.ask("viewer", &gid, "List accounts", false).await;
    let count = |v: &Value| v["records"].as_array().unwrap().len();
    let (_, v) = h.call(Some("viewer"), Method::GET, &format!("/v1/history?graph_id={gid}"), None).await;
    assert_eq!(count(&v), 1);
    assert_eq!(v["records"][0]["principal"], "viewer");
    let (_, v) = h.call(Some("user"), Method::GET, &format!("/v1/history?graph_id={gid}"), None).await;
    assert_eq!(count(&v), 1);
    let (_, v) = h.call(Some("owner"), Method::GET, &format!("/v1/history?graph_id={gid}&offset=1&limit=5"), None).await;
    assert_eq!((v["total"].as_u64(), count(&v)), (Some(3), 2));
    let (s, _) = h.call(Some("user"), Method::GET, &format!("/v1/insights?graph_id={gid}"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, v) = h.call(Some("owner"), Method::GET, &format!("/v1/insights?graph_id={gid}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["query_count"], 3);
}

#[tokio::test]
async fn feedback_annotation_loop() {
    let h = harness();
    let gid = h.ready_graph().await;
    let q = "List accounts which got closed last year";
    let close_table = |v: &Value| -> String {
        v["groundings"]
            .as_array()
            .unwrap()
            .iter()
            .find(|g| g["phrase"].as_str().unwrap().contains("clos"))
            .map(|g| g["target"]["table"].as_str().unwrap().to_string())
            .unwrap()
    };
    let (_, first) = h.ask("user", &gid, q, false).await;
    assert_eq!(close_table(&first), "member_account");

    let fb = json!({ "graph_id": gid, "audit_ref": first["audit_id"], "sentiment": "negative", "user_correction": "use the loan close date" });
    let (s, entry) = h.call(Some("user"), Method::POST, "/v1/feedback", Some(fb)).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(entry["status"], json!({ "state": "open" }));
    let bad = json!({ "graph_id": gid, "audit_ref": "nope", "sentiment": "positive" });
    assert_eq!(h.call(Some("user"), Method::POST, "/v1/feedback", Some(bad)).await.0, StatusCode::NOT_FOUND);

    let ann = json!({
        "target": { "scope": "graph" },
        "kind": "Prioritization",
        "payload": { "term": "close_date", "candidates": [
            { "table": "loan", "column": "close_date" },
            { "table": "member_account", "column": "close_date" },
            { "table": "card", "column": "close_date" }
        ]}
    });
    let uri = format!("/v1/graphs/{gid}/annotations");
    assert_eq!(h.call(Some("user"), Method::PATCH, &uri, Some(ann.clone())).await.0, StatusCode::FORBIDDEN);
    let (s, v) = h.call(Some("owner"), Method::PATCH, &uri, Some(ann)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["version"], 2);
    let one = json!({ "target": { "scope": "graph" }, "kind": "Prioritization",
        "payload": { "term": "close_date", "candidates": [{ "table": "loan", "column": "close_date" }] } });
    assert_eq!(h.call(Some("owner"), Method::PATCH, &uri, Some(one)).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let (_, again) = h.ask("user", &gid, q, false).await;
    assert_eq!(close_table(&again), "loan");
    assert_eq!(again["graph_version"], 2);

    let act = json!({ "graph_id": gid, "id": entry["id"], "annotation_ref": "v2" });
    assert_eq!(h.call(Some("user"), Method::POST, "/v1/feedback/resolve", Some(act.clone())).await.0, StatusCode::FORBIDDEN);
    let (s, done) = h.call(Some("admin"), Method::POST, "/v1/feedback/resolve", Some(act)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(done["status"], json!({ "state": "resolved", "annotation_ref": "v2" }));
}

#[tokio::test]
async fn bookmarks_belong_to_their_owner() {
    let h = harness();
    let gid = h.ready_graph().await;
    let (_, v) = h.ask("user", &gid, "Top 10 accounts by balance", false).await;
    let b = json!({ "graph_id": gid, "audit_ref": v["audit_id"], "label": "biggest balances" });
    assert_eq!(h.call(Some("viewer"), Method::POST, "/v1/bookmarks", Some(b.clone())).await.0, StatusCode::FORBIDDEN);
    let (s, _) = h.call(Some("user"), Method::POST, "/v1/bookmarks", Some(b)).await;
    assert_eq!(s, StatusCode::CREATED);
    let uri = format!("/v1/bookmarks?graph_id={gid}");
    assert_eq!(h.call(Some("user"), Method::GET, &uri, None).await.1.as_array().unwrap().len(), 1);
    assert_eq!(h.call(Some("user2"), Method::GET, &uri, None).await.1.as_array().unwrap().len(), 0);
}
