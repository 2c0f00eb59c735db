//! Acceptance gate: one line per primary criterion, then a single verdict.
//! Runs without the test harness so the lines are never captured.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{TimeZone, Utc};
use common::*;
use ctxsql_core::access::{authorize_role, hash_token, Action, Decision, DenyReason, PrincipalEntry, Principals, Role};
use ctxsql_core::adjudicator::{Adjudicator, DeterministicAdjudicator, RejectReason, Transcript, Verdict};
use ctxsql_core::builder::{build_graph, BuildOptions};
use ctxsql_core::config::Config;
use ctxsql_core::eval::{read_corpus, run_corpus, score_structural};
use ctxsql_core::fixtures::FixtureManifest;
use ctxsql_core::model::{apply_annotation, Annotation, AnnotationPayload, AnnotationTarget, ColumnRef};
use ctxsql_core::planner::{schema_lookup, select_best, GroundTarget, PlanError, PlanOutcome, Planner, RankKey};
use ctxsql_core::profile::DataSourceAdapter;
use ctxsql_core::sqlref::analyze;
use ctxsql_core::store::{Fault, Store, StoreError};
use http_body_util::BodyExt;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn manifest() -> FixtureManifest {
    serde_json::from_slice(&std::fs::read(fixture_dir().join("manifest.json")).unwrap()).unwrap()
}

fn join_ground_truth() -> Check {
    let m = manifest();
    let started = Instant::now();
    let out = build_graph(adapter(), &BuildOptions::new("cu", clock()), &DeterministicAdjudicator, &Transcript::default())
        .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("build took {secs:.2}s"))?;

    let norm = |a: String, b: String| if a <= b { (a, b) } else { (b, a) };
    let found: BTreeSet<(String, String)> = out
        .graph
        .joins
        .iter()
        .map(|e| {
            norm(
                format!("{}.{}", e.left.table_id, e.left.columns.join(",")),
                format!("{}.{}", e.right.table_id, e.right.columns.join(",")),
            )
        })
        .collect();
    let declared: BTreeSet<(String, String)> = m
        .foreign_keys
        .iter()
        .map(|fk| norm(format!("{}.{}", fk.fk_table, fk.fk_column), format!("{}.{}", fk.pk_table, fk.pk_column)))
        .collect();
    let hit = found.intersection(&declared).count() as f64;
    let recall = hit / declared.len() as f64;
    let precision = if found.is_empty() { 0.0 } else { hit / found.len() as f64 };
    ensure(declared.len() == 4, format!("manifest declares {} keys", declared.len()))?;
    ensure(recall == 1.0 && precision == 1.0, format!("recall {recall} precision {precision}"))?;

    ensure(!m.decoys.is_empty(), "no decoy in manifest")?;
    for d in &m.decoys {
        let as_edge = found.iter().any(|(a, b)| {
            let col = format!("{}.{}", d.table, d.column);
            *a == col || *b == col
        });
        ensure(!as_edge, format!("decoy {}.{} became an edge", d.table, d.column))?;
        let cand = out.candidates.iter().find(|c| {
            c.fk_table == d.table && c.fk_column == d.column && c.pk_table == d.included_in_table && c.pk_column == d.included_in_column
        });
        if let Some(c) = cand.filter(|c| c.pruned_reason.is_none()) {
            let v = DeterministicAdjudicator.adjudicate_join(c, &Transcript::default()).map_err(|e| e.to_string())?;
            ensure(matches!(v, Verdict::Reject(RejectReason::NameEvidenceMissing)), format!("decoy verdict {v:?}"))?;
        }
    }
    Ok(format!("4/4 keys, recall 1.0, precision 1.0, decoy rejected, {secs:.2}s"))
}

fn symmetric_aggregates() -> Check {
    let corpus = read_corpus(&corpus_path()).map_err(|e| e.to_string())?;
    let fanout: Vec<_> = corpus.iter().filter(|e| e.tags.iter().any(|t| t == "fanout")).collect();
    ensure(fanout.len() >= 5, format!("only {} fan-out questions", fanout.len()))?;
    for e in &fanout {
        let planned = planner()
            .plan(&e.question, &DeterministicAdjudicator, &exec_ctx())
            .result
            .map_err(|f| format!("{}: {f}", e.question))?;
        let got = adapter().execute(&planned.sql).map_err(|x| format!("{}: {x}", e.question))?;
        let expected = oracle(&e.question).ok_or_else(|| format!("no oracle for {}", e.question))?;
        compare(&expected, &got).map_err(|m| format!("{}: {m}", e.question))?;
    }
    Ok(format!("{} fan-out queries equal the oracle", fanout.len()))
}

fn words(name: &str) -> String {
    name.replace('_', " ")
}

/// Corpus questions, template questions over every table and column, and
/// adversarial PII phrasings.
fn pii_probe_questions() -> (Vec<String>, Vec<String>) {
    let g = graph();
    let mut qs: Vec<String> = read_corpus(&corpus_path()).unwrap().into_iter().map(|e| e.question).collect();
    let mut pii_only = Vec::new();
    for t in &g.tables {
        let tw = words(&t.table_id);
        qs.push(format!("List {tw}"));
        for c in &t.columns {
            let cw = words(&c.name);
            if c.pii {
                pii_only.push(format!("list {tw} {cw}"));
                pii_only.push(format!("show the {cw} of each {tw}"));
                qs.push(format!("list {tw} {cw} and branch"));
                qs.push(format!("Number of {tw} by {cw}"));
                qs.push(format!("List {tw} with {cw} 217-95-7950"));
            } else {
                qs.push(format!("Number of {tw} by {cw}"));
                qs.push(format!("List {tw} with {cw}"));
                qs.push(format!("Show {tw} and their {cw}"));
            }
        }
    }
    qs.extend(["list member ssn", "Show members and their email", "members by birth date"].map(String::from));
    pii_only.push("list member ssn".into());
    (qs, pii_only)
}

fn pii_soundness() -> Check {
    let g = graph();
    let m = manifest();
    let pii: BTreeSet<String> = m.pii_columns.iter().cloned().collect();
    let flagged: BTreeSet<String> =
        g.tables.iter().flat_map(|t| t.columns.iter().filter(|c| c.pii).map(move |c| format!("{}.{}", t.table_id, c.name))).collect();
    ensure(pii == flagged, format!("graph flags {flagged:?}, manifest lists {pii:?}"))?;
    let bare: BTreeSet<&str> = pii.iter().map(|p| p.split_once('.').unwrap().1).collect();
    let schema = schema_lookup(g);

    let (qs, pii_only) = pii_probe_questions();
    let mut planned = 0;
    for q in &qs {
        let Ok(p) = planner().plan(q, &DeterministicAdjudicator, &ctx()).result else { continue };
        planned += 1;
        let a = analyze(&p.sql, Some(&schema)).map_err(|e| format!("{q}: {e}"))?;
        ensure(a.columns.is_disjoint(&pii), format!("{q}: {}", p.sql))?;
        let lower = p.sql.to_lowercase();
        ensure(!bare.iter().any(|c| lower.contains(c)), format!("{q}: PII name in {}", p.sql))?;
    }
    ensure(planned >= 100, format!("only {planned} of {} questions planned", qs.len()))?;
    for q in &pii_only {
        let r = planner().plan(q, &DeterministicAdjudicator, &ctx()).result;
        ensure(matches!(&r, Err(f) if f.error == PlanError::PiiOnlyQuery), format!("{q}: {r:?}"))?;
    }
    Ok(format!("{planned} planned, 0 PII references; {} PII-only queries refused", pii_only.len()))
}

fn ambiguity_loop() -> Check {
    let q = "List accounts which got closed last year";
    let before = planner().plan(q, &DeterministicAdjudicator, &ctx());
    before.result.as_ref().map_err(|f| f.to_string())?;
    let annotated = apply_annotation(
        graph(),
        Annotation {
            target: AnnotationTarget::Graph,
            payload: AnnotationPayload::Prioritization {
                term: "close_date".into(),
                candidates: vec![
                    ColumnRef::new("loan", "close_date"),
                    ColumnRef::new("member_account", "close_date"),
                    ColumnRef::new("card", "close_date"),
                ],
            },
            author: "owner".into(),
            created_at: clock(),
        },
    )
    .map_err(|e| e.to_string())?;
    let after = Planner::new(annotated).plan(q, &DeterministicAdjudicator, &ctx());
    after.result.as_ref().map_err(|f| f.to_string())?;

    let close_target = |p: &PlanOutcome| {
        p.audit
            .groundings.iter().find(|g| g.phrase.contains("clos")).map(|g| g.target.clone())
    };
    let want = |t: &str| Some(GroundTarget::Column { table: t.into(), column: "close_date".into() });
    ensure(close_target(&before) == want("member_account"), format!("default grounds to {:?}", close_target(&before)))?;
    ensure(close_target(&after) == want("loan"), format!("annotated grounds to {:?}", close_target(&after)))?;
    let others = |p: &PlanOutcome| {
        p.audit
            .groundings.iter().filter(|g| !g.phrase.contains("clos")).map(|g| (g.phrase.clone(), g.target.clone())).collect::<Vec<_>>()
    };
    ensure(others(&before) == others(&after), "other groundings moved")?;
    Ok("member_account.close_date by default, loan.close_date after prioritization".into())
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let code = ctxsql_cli::run(std::iter::once("ctxsql").chain(args.iter().copied()), &mut out);
    (code, out)
}

fn cli_session(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let fixture = fixture_dir().to_string_lossy().into_owned();
    let corpus = corpus_path().to_string_lossy().into_owned();
    let clock = "--clock=2025-04-01T00:00:00Z";
    let q = "Total balance per member for accounts with transactions in 2024";
    let (fx, g, g2) = (p("fx"), p("g.json"), p("g2.json"));
    let steps: Vec<Vec<&str>> = vec![
        vec!["fixture", &fx, "--seed", "42"],
        vec!["profile", &fixture, "--sample", "500"],
        vec!["build", &fixture, "--out", &g, clock],
        vec!["build", &fixture, clock],
        vec!["query", &g, q, "--dry-run", clock],
        vec!["query", &g, q, "--execute", "--source", &fixture, clock],
        vec!["annotate", &g, "--kind", "Synonym", "--payload", r#"{"term":"patron"}"#, "--target", "member", "--out", &g2, clock],
        vec!["eval", &g2, &corpus, clock],
    ];
    let mut outs = Vec::new();
    for s in steps {
        let (code, out) = run_cli(&s);
        ensure(code == 0, format!("{} exited {code}", s[0]))?;
        outs.push((s[0].to_string(), out));
    }
    for f in ["g.json", "g2.json"] {
        outs.push((f.to_string(), std::fs::read(dir.join(f)).map_err(|e| e.to_string())?));
    }
    for e in std::fs::read_dir(&fx).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        outs.push((format!("fx/{}", e.file_name().to_string_lossy()), std::fs::read(e.path()).map_err(|e| e.to_string())?));
    }
    outs.sort();
    Ok(outs)
}

fn determinism() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = root.path().join("run");
    std::fs::create_dir(&dir).map_err(|e| e.to_string())?;
    let first = cli_session(&dir)?;
    std::fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
    std::fs::create_dir(&dir).map_err(|e| e.to_string())?;
    let second = cli_session(&dir)?;
    ensure(first.len() == second.len(), "different artifact sets")?;
    for (a, b) in first.iter().zip(&second) {
        ensure(a == b, format!("{} differs between runs", a.0))?;
    }
    Ok(format!("{} outputs byte-identical across two runs", first.len()))
}

fn structural_accuracy() -> Check {
    let corpus = read_corpus(&corpus_path()).map_err(|e| e.to_string())?;
    ensure(corpus.len() == 20, format!("{} questions", corpus.len()))?;
    let report = run_corpus(&corpus, planner(), &DeterministicAdjudicator, &ctx());
    let m = &report.means;
    ensure(m.tables >= 0.9 && m.joins >= 0.9, format!("tables {:.4} joins {:.4}", m.tables, m.joins))?;
    ensure(m.filters >= 0.8 && m.aggregates >= 0.8, format!("filters {:.4} aggregates {:.4}", m.filters, m.aggregates))?;

    let reference = "SELECT l.loan_id FROM loan l WHERE l.amount > 5000 AND l.delinquent_days > 0";
    let id = score_structural(reference, reference, None).map_err(|e| e.to_string())?;
    ensure(id.parts().iter().all(|p| *p == 1.0) && id.overall == 1.0, format!("identity {id:?}"))?;
    let dropped = score_structural("SELECT l.loan_id FROM loan l WHERE l.amount > 5000", reference, None).map_err(|e| e.to_string())?;
    ensure((dropped.filters - 0.6667).abs() <= 1e-4 && (dropped.filters - 2.0 / 3.0).abs() <= 1e-6, format!("one-filter drop {}", dropped.filters))?;
    Ok(format!(
        "tables {:.4} joins {:.4} filters {:.4} aggregates {:.4}; identity 1.0; drop {:.6}",
        m.tables, m.joins, m.filters, m.aggregates, dropped.filters
    ))
}

fn argmax_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20_250_401);
    let mut tied = 0;
    for i in 0..1000 {
        let n = rng.random_range(1..=12usize);
        // a coarse grid forces ties, which must still break the same way
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..=20u32) as f64 / 20.0).collect();
        let keys: Vec<RankKey> = (0..n)
            .map(|_| RankKey {
                priority: (rng.random_bool(0.7), rng.random_range(0..3usize)),
                table_pos: rng.random_range(0..5usize),
                name: format!("c{}", rng.random_range(0..1000u32)),
            })
            .collect();
        let c = 10.0 * (1.0 - rng.random::<f64>());
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        let (a, b) = (select_best(&scores, &keys), select_best(&scaled, &keys));
        ensure(a == b, format!("instance {i}: c={c} moved {a:?} to {b:?}"))?;
        let best = scores[a.unwrap()];
        if scores.iter().filter(|s| **s == best).count() > 1 {
            tied += 1;
        }
    }
    Ok(format!("1000 instances unchanged under c in (0,10], {tied} with tied maxima"))
}

fn expected_matrix(role: Role, action: Action) -> Decision {
    use Action::*;
    let allow = match role {
        Role::Administrator | Role::Owner => true,
        Role::User => [PlanQuery, ExecuteQuery, ViewFullResults, ViewGraph, Bookmark, SubmitFeedback, ViewHistory].contains(&action),
        Role::Viewer => [PlanQuery, ExecuteQuery, ViewGraph, ViewHistory].contains(&action),
    };
    match (allow, role, action) {
        (true, ..) => Decision::Allow,
        (false, Role::Viewer, ViewFullResults) => Decision::Deny(DenyReason::SummaryOnly),
        _ => Decision::Deny(DenyReason::RoleForbidden),
    }
}

async fn call(app: &axum::Router, who: &str, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("authorization", format!("Bearer {who}-token"));
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn viewer_listings_are_summaries() -> Result<usize, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let entry = |id: &str, role| PrincipalEntry {
        id: id.into(),
        role,
        token_sha256: hash_token(&format!("{id}-token")),
        grants: ["*".to_string()].into(),
    };
    let principals = Principals::from_entries(vec![entry("admin", Role::Administrator), entry("viewer", Role::Viewer)])
        .map_err(|e| e.to_string())?;
    let config = Config { data_dir: dir.path().to_path_buf(), ..Config::default() };
    let state = ctxsql_service::AppState::new(config, principals, Arc::new(DeterministicAdjudicator))
        .map_err(|e| e.to_string())?
        .with_clock(Utc.with_ymd_and_hms(2025, 4, 1, 0, 0, 0).unwrap());
    let app = ctxsql_service::router(Arc::new(state));

    let (s, v) = call(&app, "admin", "POST", "/v1/datasources", Some(json!({ "path": fixture_dir() }))).await;
    ensure(s == StatusCode::CREATED, format!("register: {s} {v}"))?;
    let (s, v) = call(&app, "admin", "POST", "/v1/graphs", Some(json!({ "datasource": v["id"] }))).await;
    ensure(s == StatusCode::ACCEPTED, format!("build: {s} {v}"))?;
    let gid = v["graph_id"].as_str().unwrap_or_default().to_string();
    let mut ready = false;
    for _ in 0..600 {
        let (_, v) = call(&app, "admin", "GET", &format!("/v1/graphs/{gid}/status"), None).await;
        if v["status"] == "ready" {
            ready = true;
            break;
        }
        ensure(v["status"] != "failed", format!("build failed: {v}"))?;
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
    ensure(ready, "graph never became ready")?;

    let listings = [
        "Which members have closed accounts in the last quarter?",
        "List members with delinquent loans exceeding $5,000",
        "List accounts which got closed last year",
        "Accounts opened in 2024",
        "List loans with loan type Auto",
        "Top 10 accounts by balance",
    ];
    for q in listings {
        let body = json!({ "question": q, "execute": true, "dry_run": false });
        let (s, v) = call(&app, "viewer", "POST", &format!("/v1/graphs/{gid}/query"), Some(body)).await;
        ensure(s == StatusCode::OK, format!("{q}: {s} {v}"))?;
        ensure(v["result"]["shape"] == "summary" && v["result"].get("rows").is_none(), format!("{q}: viewer got {}", v["result"]))?;
    }
    Ok(listings.len())
}

fn role_matrix() -> Check {
    let mut cells = 0;
    for role in Role::ALL {
        for action in Action::ALL {
            let got = authorize_role(role, action);
            ensure(got == expected_matrix(role, action), format!("({role:?}, {action:?}) -> {got:?}"))?;
            cells += 1;
        }
    }
    ensure(cells == 56, format!("{cells} cells"))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let n = rt.block_on(viewer_listings_are_summaries())?;
    Ok(format!("4 x 14 matrix matches; viewer got summaries for {n} listings via the API"))
}

fn crash_safety() -> Check {
    let faults = [Fault::TornWrite(0), Fault::TornWrite(1), Fault::TornWrite(17), Fault::TornWrite(1 << 20), Fault::BeforeCommit, Fault::BeforeRename];
    let record = |q: &str| planner().plan(q, &DeterministicAdjudicator, &ctx()).audit;
    for fault in faults {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
        let first = store.append_history(record("List accounts")).map_err(|e| e.to_string())?;
        store.inject_fault(fault);
        let r = store.append_history(record("Number of cards by card type"));
        ensure(matches!(r, Err(StoreError::StorageFailure(_))), format!("{fault:?}: {r:?}"))?;
        let reopened = Store::open(dir.path()).map_err(|e| format!("{fault:?}: reopen {e}"))?;
        let got = reopened.list_history(&graph().graph_id).map_err(|e| format!("{fault:?}: {e}"))?;
        ensure(got == vec![first.clone()], format!("{fault:?}: {} records after fault", got.len()))?;
        reopened.append_history(record("Total loan amount by loan type")).map_err(|e| e.to_string())?;
        let got = reopened.list_history(&graph().graph_id).map_err(|e| e.to_string())?;
        ensure(got.len() == 2 && got[0] == first, format!("{fault:?}: recovery wrote {} records", got.len()))?;
    }
    Ok(format!("{} fault kinds leave only committed records", faults.len()))
}

fn performance() -> Check {
    let started = Instant::now();
    let g = build_fixture_graph();
    let build = started.elapsed().as_secs_f64();
    ensure(build < 60.0, format!("build {build:.2}s"))?;

    let p = Planner::new(g);
    let corpus = read_corpus(&corpus_path()).map_err(|e| e.to_string())?;
    let mut ms = Vec::new();
    for _ in 0..5 {
        for e in &corpus {
            let t = Instant::now();
            let _ = p.plan(&e.question, &DeterministicAdjudicator, &ctx());
            ms.push(t.elapsed().as_secs_f64() * 1000.0);
        }
    }
    ms.sort_by(f64::total_cmp);
    let p50 = ms[ms.len() / 2];
    ensure(p50 < 100.0, format!("plan p50 {p50:.2}ms"))?;
    Ok(format!("plan p50 {p50:.2}ms over {} calls; build {build:.2}s", ms.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("join inference ground truth", join_ground_truth),
        ("symmetric aggregates", symmetric_aggregates),
        ("PII soundness", pii_soundness),
        ("ambiguity and annotation loop", ambiguity_loop),
        ("determinism", determinism),
        ("structural accuracy", structural_accuracy),
        ("argmax invariance", argmax_invariance),
        ("role matrix", role_matrix),
        ("crash safety", crash_safety),
        ("performance envelope", performance),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("acceptance failed: {failed:?}");
        std::process::exit(1);
    }
}
