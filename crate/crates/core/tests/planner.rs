mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use common::*;
use ctxsql_core::adjudicator::{
    Adjudicator, AdjudicatorError, DeterministicAdjudicator, GraphSummary, IntentReply, TextKind, Transcript, Verdict,
};
use ctxsql_core::joins::JoinCandidate;
use ctxsql_core::model::{apply_annotation, Annotation, AnnotationPayload, AnnotationTarget, ColumnRef, ContextGraph};
use ctxsql_core::planner::{
    connect, ground_sketch, parse_question, Comparator, GroundTarget, Literal, PlanError, PlanNode, Planner, QuerySketch,
    SelectTerm, Stage, TermRole, RULE_SYMMETRIC,
};
use ctxsql_core::sqlref::analyze;
use serde_json::Value as Json;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares with a frozen golden file; `UPDATE_GOLDEN=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {}", path.display()));
    assert_eq!(actual, expected, "golden {name} differs");
}

fn sql(q: &str) -> String {
    planner().plan(q, &DeterministicAdjudicator, &ctx()).result.unwrap_or_else(|f| panic!("{q}: {f}")).sql
}

fn annotate(g: &ContextGraph, target: AnnotationTarget, payload: AnnotationPayload) -> ContextGraph {
    apply_annotation(g, Annotation { target, payload, author: "owner".into(), created_at: clock() }).unwrap()
}

fn prioritize_loan_close(g: &ContextGraph) -> ContextGraph {
    annotate(
        g,
        AnnotationTarget::Graph,
        AnnotationPayload::Prioritization {
            term: "close_date".into(),
            candidates: vec![
                ColumnRef::new("loan", "close_date"),
                ColumnRef::new("member_account", "close_date"),
                ColumnRef::new("card", "close_date"),
            ],
        },
    )
}

#[test]
fn single_scan_golden() {
    assert_eq!(sql("List accounts"), "SELECT ma.account_id FROM member_account AS ma LIMIT 1000");
}

#[test]
fn closed_accounts_tree_golden() {
    let q = "Which members have closed accounts in the last quarter?";
    let p = planner().plan(q, &DeterministicAdjudicator, &ctx()).result.unwrap();
    check_golden("closed_accounts_tree.json", &(serde_json::to_string_pretty(&p.tree).unwrap() + "\n"));
    check_golden("closed_accounts.sql", &(p.sql.clone() + "\n"));
    assert!(p.sql.contains("BETWEEN DATE '2025-01-01' AND DATE '2025-03-31'"));
}

#[test]
fn symmetric_aggregate_golden() {
    let q = "Total balance per member for accounts with transactions in 2024";
    let out = planner().plan(q, &DeterministicAdjudicator, &ctx());
    let p = out.result.unwrap();
    check_golden("fanout_balance_per_member.sql", &(p.sql.clone() + "\n"));
    assert!(out.audit.rules_fired.iter().any(|r| r == RULE_SYMMETRIC));
    assert!(p.sql.contains("GROUP BY tran.account_id) AS tran_k"));
}

#[test]
fn no_fanout_leaves_plan_alone() {
    let out = planner().plan("Total loan amount by loan type", &DeterministicAdjudicator, &ctx());
    assert!(!out.audit.rules_fired.iter().any(|r| r == RULE_SYMMETRIC));
    let out = planner().plan("Top 5 members by total balance", &DeterministicAdjudicator, &ctx());
    assert!(!out.audit.rules_fired.iter().any(|r| r == RULE_SYMMETRIC));
}

fn walk<'a>(n: &'a PlanNode, out: &mut Vec<&'a PlanNode>) {
    out.push(n);
    for c in n.children() {
        walk(c, out);
    }
}

#[test]
fn limit_closes_the_tree() {
    let p = planner().plan("Top 10 accounts by balance", &DeterministicAdjudicator, &ctx()).result.unwrap();
    assert!(matches!(&p.tree, PlanNode::Limit { n: 10, .. }), "{:?}", p.tree.name());
    assert!(matches!(p.tree.children()[0], PlanNode::Sort { .. }));
}

#[test]
fn every_join_node_carries_a_graph_edge() {
    let g = graph();
    for q in ["Total loan amount by branch for accounts with cards", "Number of loans per member"] {
        let p = planner().plan(q, &DeterministicAdjudicator, &ctx()).result.unwrap();
        let mut nodes = Vec::new();
        walk(&p.tree, &mut nodes);
        let mut joins = 0;
        for n in nodes {
            if let PlanNode::Join { edge, .. } = n {
                joins += 1;
                assert!(g.joins.contains(edge), "{q}: edge not in graph");
            }
        }
        assert!(joins >= 2);
    }
}

#[test]
fn identical_inputs_identical_outputs() {
    let q = "Number of accounts per branch with loans exceeding $10,000";
    let a = planner().plan(q, &DeterministicAdjudicator, &ctx()).result.unwrap();
    let b = planner().plan(q, &DeterministicAdjudicator, &ctx()).result.unwrap();
    assert_eq!(a, b);
    let rebuilt = Planner::new(build_fixture_graph());
    let c = rebuilt.plan(q, &DeterministicAdjudicator, &ctx()).result.unwrap();
    assert_eq!(a.sql, c.sql);
}

#[test]
fn stage_tagged_errors() {
    let err = |q: &str| planner().plan(q, &DeterministicAdjudicator, &ctx()).result.unwrap_err();
    let f = err("total rainfall by city");
    assert_eq!((f.stage, f.error.clone()), (Stage::IdentifyTables, PlanError::NoTableMatch));
    assert_eq!(err("").stage, Stage::IdentifyTables);
    let f = err("accounts with balance greater than 'abc'");
    assert_eq!(f.stage, Stage::Compose);
    assert!(matches!(f.error, PlanError::TypeMismatch { .. }));
    let f = err("list member ssn");
    assert_eq!((f.stage, f.error), (Stage::Rules, PlanError::PiiOnlyQuery));
    let f = err("List members with xyz");
    assert!(matches!(f.error, PlanError::UngroundedPhrase { .. }));
}

#[test]
fn every_call_is_audited() {
    let ok = planner().plan("List accounts", &DeterministicAdjudicator, &ctx());
    assert_eq!(ok.audit.sql.as_deref(), Some("SELECT ma.account_id FROM member_account AS ma LIMIT 1000"));
    assert!(ok.audit.error.is_none());
    assert_eq!(ok.audit.principal, "tester");
    assert_eq!(ok.audit.transcript.len(), 2);
    let bad = planner().plan("total rainfall by city", &DeterministicAdjudicator, &ctx());
    assert_eq!(bad.audit.error.as_ref().map(|e| e.stage), Some(Stage::IdentifyTables));
    assert!(bad.audit.sql.is_none());
}

#[test]
fn intent_sketches() {
    let g = graph();
    let rules = g.rules();
    let today = clock().date_naive();
    let s = parse_question("List members with delinquent loans exceeding $5,000", g, &rules, today);
    assert_eq!(s.select_terms.iter().map(|t| t.phrase.as_str()).collect::<Vec<_>>(), ["members"]);
    assert_eq!(s.filter_terms.len(), 1);
    assert_eq!(s.filter_terms[0].phrase, "delinquent loans");
    assert_eq!(s.filter_terms[0].comparator, Comparator::Gt);
    assert_eq!(s.filter_terms[0].literal, Some(Literal::Money(5000.0)));

    let s = parse_question("Average retention duration for accounts by product category", g, &rules, today);
    assert_eq!(s.select_terms[0].phrase, "retention duration");
    assert_eq!(s.select_terms[0].agg, Some(ctxsql_core::planner::AggFunc::Avg));
    assert_eq!(s.group_terms, ["product category"]);

    let s = parse_question("Which members have closed accounts in the last quarter?", g, &rules, today);
    let w = s.time_window.unwrap();
    assert_eq!((w.start.unwrap().to_string(), w.end.unwrap().to_string()), ("2025-01-01".into(), "2025-03-31".into()));

    let s = parse_question("accounts with balance at least 100", g, &rules, today);
    assert_eq!(s.filter_terms[0].comparator, Comparator::Ge);
    let s = parse_question("accounts with balance more than 100", g, &rules, today);
    assert_eq!(s.filter_terms[0].comparator, Comparator::Gt);

    let s = QuerySketch::fallback("");
    assert_eq!(s.select_terms, [SelectTerm { phrase: String::new(), agg: None }]);
}

fn close_sketch() -> QuerySketch {
    QuerySketch::fallback("close")
}

#[test]
fn close_ties_break_by_table_order_then_annotation() {
    let g = graph();
    let tables: Vec<String> = ["member_account", "loan", "card"].map(String::from).to_vec();
    let gq = ground_sketch(g, &g.rules(), &tables, &close_sketch()).unwrap();
    let sel = gq.by_role(TermRole::Select).next().unwrap();
    assert_eq!(sel.target, GroundTarget::Column { table: "member_account".into(), column: "close_date".into() });
    let tied: Vec<f64> = sel.alternatives.iter().filter(|a| a.score == sel.score).map(|a| a.score).collect();
    assert_eq!(tied.len(), 2, "all three close_date columns score equally");

    let g2 = prioritize_loan_close(g);
    let gq = ground_sketch(&g2, &g2.rules(), &tables, &close_sketch()).unwrap();
    let sel = gq.by_role(TermRole::Select).next().unwrap();
    assert_eq!(sel.target, GroundTarget::Column { table: "loan".into(), column: "close_date".into() });
}

#[test]
fn ssn_phrase_never_grounds() {
    let g = graph();
    let mut s = QuerySketch::fallback("members");
    s.filter_terms.push(ctxsql_core::planner::FilterTerm {
        phrase: "ssn".into(),
        comparator: Comparator::Eq,
        literal: Some(Literal::Text("217-95-7950".into())),
    });
    let r = ground_sketch(g, &g.rules(), &["member".to_string()], &s);
    assert!(r.is_err());
}

#[test]
fn prioritization_only_moves_its_term() {
    let g = graph();
    let before = Planner::new(g.clone());
    let after = Planner::new(prioritize_loan_close(g));
    let corpus = ctxsql_core::eval::read_corpus(&corpus_path()).unwrap();
    let mut questions: Vec<String> = corpus.into_iter().map(|e| e.question).collect();
    questions.push("List accounts which got closed last year".into());
    for q in questions {
        let a = before.plan(&q, &DeterministicAdjudicator, &ctx()).audit;
        let b = after.plan(&q, &DeterministicAdjudicator, &ctx()).audit;
        let targets = |gs: &[ctxsql_core::planner::Grounding]| -> Vec<(String, GroundTarget)> {
            gs.iter().filter(|x| !x.phrase.contains("clos")).map(|x| (x.phrase.clone(), x.target.clone())).collect()
        };
        assert_eq!(targets(&a.groundings), targets(&b.groundings), "{q}");
        if a.groundings.iter().any(|x| x.phrase.contains("clos")) {
            continue;
        }
        assert_eq!(a.sql, b.sql, "{q}");
    }
}

#[test]
fn enforcer_predicates_follow_their_table() {
    let g = annotate(
        graph(),
        AnnotationTarget::Table { table: "loan".into() },
        AnnotationPayload::EnforcerRule { predicate: "status <> 'VOID'".into() },
    );
    let p = Planner::new(g);
    let loans = p.plan("Total loan amount by loan type", &DeterministicAdjudicator, &ctx());
    assert!(loans.result.unwrap().sql.contains("loan.status <> 'VOID'"));
    assert!(loans.audit.rules_fired.iter().any(|r| r == "enforcer_predicates"));
    let cards = p.plan("Number of cards by card type", &DeterministicAdjudicator, &ctx()).result.unwrap();
    assert!(!cards.sql.contains("VOID"));
}

/// Every simple path between two tables, by brute force.
fn all_paths(g: &ContextGraph, from: &str, to: &str) -> Vec<Vec<String>> {
    fn go(g: &ContextGraph, cur: &str, to: &str, seen: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if cur == to {
            out.push(seen.clone());
            return;
        }
        let next: BTreeSet<String> = g.edges_of(cur).filter_map(|e| e.other_table(cur)).map(str::to_string).collect();
        for n in next {
            if !seen.contains(&n) {
                seen.push(n.clone());
                go(g, &n, to, seen, out);
                seen.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(g, from, to, &mut vec![from.to_string()], &mut out);
    out
}

#[test]
fn join_paths_are_minimal() {
    let g = graph();
    let ids: Vec<String> = g.tables.iter().map(|t| t.table_id.clone()).collect();
    for a in &ids {
        for b in &ids {
            if a == b {
                continue;
            }
            let sel = connect(g, &[a.clone(), b.clone()]).unwrap();
            let best = all_paths(g, a, b).iter().map(|p| p.len() - 1).min().unwrap();
            assert_eq!(sel.join_path.len(), best, "{a} -> {b}");
        }
    }
    let sel = connect(g, &["member".into(), "loan".into()]).unwrap();
    assert_eq!(sel.join_path.len(), 2);
    assert!(sel.tables.contains(&"member_account".to_string()));
}

/// Adjudicator whose rewrite returns a fixed statement.
struct Rewriter(String);

impl Adjudicator for Rewriter {
    fn adjudicate_join(&self, c: &JoinCandidate, log: &Transcript) -> Result<Verdict, AdjudicatorError> {
        DeterministicAdjudicator.adjudicate_join(c, log)
    }
    fn refine_text(&self, kind: TextKind, input: &str, context: &Json, log: &Transcript) -> String {
        DeterministicAdjudicator.refine_text(kind, input, context, log)
    }
    fn parse_intent(&self, _q: &str, _s: &GraphSummary, _log: &Transcript) -> IntentReply {
        IntentReply::Defer
    }
    fn rewrite_sql(&self, _sql: &str, _q: &str, _s: &GraphSummary, _log: &Transcript) -> String {
        self.0.clone()
    }
    fn mode(&self) -> &'static str {
        "test"
    }
}

#[test]
fn rewrites_are_validated() {
    let q = "Total loan amount by loan type";
    let original = sql(q);
    let run = |rewrite: &str| planner().plan(q, &Rewriter(rewrite.into()), &ctx());

    let bad = run("SELECT loan.no_such_column FROM loan");
    assert_eq!(bad.result.unwrap().sql, original);
    assert!(bad.audit.rewrite_rejected.as_deref().unwrap().starts_with("RewriteRejected"));

    let pii = run("SELECT m.ssn FROM member m");
    assert_eq!(pii.result.unwrap().sql, original);
    assert!(pii.audit.rewrite_rejected.is_some());

    let write = run("DELETE FROM loan");
    assert_eq!(write.result.unwrap().sql, original);

    let window = "SELECT l.loan_type, SUM(l.amount), RANK() OVER (ORDER BY SUM(l.amount) DESC) FROM loan AS l GROUP BY l.loan_type";
    let ok = run(window);
    assert_eq!(ok.result.unwrap().sql, window);
    assert!(ok.audit.rewrite_applied);
}

#[test]
fn emitted_sql_never_touches_pii() {
    let pii: BTreeSet<String> = graph()
        .tables
        .iter()
        .flat_map(|t| t.columns.iter().filter(|c| c.pii).map(move |c| format!("{}.{}", t.table_id, c.name)))
        .collect();
    assert_eq!(pii.len(), 3);
    let schema = ctxsql_core::planner::schema_lookup(graph());
    for q in [
        "Show members and their email",
        "list member ssn and branch",
        "members by birth date",
        "Number of members by branch",
        "List members with ssn 217-95-7950",
    ] {
        if let Ok(p) = planner().plan(q, &DeterministicAdjudicator, &ctx()).result {
            let a = analyze(&p.sql, Some(&schema)).unwrap();
            assert!(a.columns.is_disjoint(&pii), "{q}: {}", p.sql);
        }
    }
}

#[test]
fn listing_fallback_projects_the_table() {
    let out = planner().plan("Develop a risk profile for accounts that display erratic behavior", &DeterministicAdjudicator, &ctx());
    assert!(out.audit.table_fallback);
    assert_eq!(out.result.unwrap().sql, "SELECT ma.account_id FROM member_account AS ma LIMIT 1000");
}

#[test]
fn sample_library_is_capped() {
    let lib = ctxsql_core::planner::sample_library(graph());
    assert!(!lib.is_empty() && lib.len() <= ctxsql_core::planner::SAMPLE_LIBRARY_CAP);
    let by_q: BTreeMap<_, _> = lib.iter().map(|(q, s)| (q.clone(), s.clone())).collect();
    assert_eq!(by_q.len(), lib.len());
}

#[test]
fn closed_last_year_follows_the_annotation() {
    let q = "List accounts which got closed last year";
    let close_target = |p: &Planner| {
        let audit = p.plan(q, &DeterministicAdjudicator, &ctx()).audit;
        audit.groundings.iter().find(|x| x.phrase.contains("clos")).map(|x| x.target.clone()).unwrap()
    };
    assert_eq!(close_target(planner()), GroundTarget::Column { table: "member_account".into(), column: "close_date".into() });
    let after = Planner::new(prioritize_loan_close(graph()));
    assert_eq!(close_target(&after), GroundTarget::Column { table: "loan".into(), column: "close_date".into() });
}
