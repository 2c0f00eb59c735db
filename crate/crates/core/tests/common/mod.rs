//! Shared fixture helpers and brute-force oracles computed straight from the
//! CSV files, without SQL.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::OnceLock;

use chrono::{DateTime, TimeZone, Utc};
use ctxsql_core::adjudicator::{DeterministicAdjudicator, Transcript};
use ctxsql_core::builder::{build_graph, BuildOptions};
use ctxsql_core::model::ContextGraph;
use ctxsql_core::planner::{Dialect, PlanContext, Planner};
use ctxsql_core::profile::{CsvDirAdapter, ResultSet};
use ctxsql_core::value::Value;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_dir() -> PathBuf {
    repo_root().join("fixtures/cu_csv")
}

pub fn corpus_path() -> PathBuf {
    repo_root().join("fixtures/corpus.jsonl")
}

pub fn clock() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 4, 1, 0, 0, 0).unwrap()
}

pub fn adapter() -> &'static CsvDirAdapter {
    static A: OnceLock<CsvDirAdapter> = OnceLock::new();
    A.get_or_init(|| CsvDirAdapter::open(fixture_dir()).expect("fixture dir"))
}

pub fn build_fixture_graph() -> ContextGraph {
    let opts = BuildOptions::new("cu", clock());
    build_graph(adapter(), &opts, &DeterministicAdjudicator, &Transcript::default()).expect("fixture build").graph
}

pub fn graph() -> &'static ContextGraph {
    static G: OnceLock<ContextGraph> = OnceLock::new();
    G.get_or_init(build_fixture_graph)
}

pub fn planner() -> &'static Planner {
    static P: OnceLock<Planner> = OnceLock::new();
    P.get_or_init(|| Planner::new(graph().clone()))
}

pub fn ctx() -> PlanContext {
    PlanContext::new(clock(), "tester")
}

/// Context for executing plans against the fixture: SQLite literals and no
/// truncating default limit.
pub fn exec_ctx() -> PlanContext {
    let mut c = ctx();
    c.dialect = Dialect::Sqlite;
    c.default_limit = 1_000_000;
    c
}

/// Decimal text to integer cents, exactly.
fn cents(s: &str) -> i64 {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    let neg = whole.starts_with('-');
    let w: i64 = whole.trim_start_matches('-').parse().unwrap();
    let mut f = frac.to_string();
    assert!(f.len() <= 2, "more than two decimals in {s}");
    while f.len() < 2 {
        f.push('0');
    }
    let v = w * 100 + f.parse::<i64>().unwrap();
    if neg {
        -v
    } else {
        v
    }
}

fn opt(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

pub struct Member {
    pub id: i64,
    pub first: String,
    pub last: String,
    pub ssn: String,
    pub email: String,
    pub join_date: String,
    pub branch: String,
}

pub struct Account {
    pub id: i64,
    pub member_id: i64,
    pub product: String,
    pub status: i64,
    pub open_date: String,
    pub close_date: Option<String>,
    pub balance: i64,
}

pub struct Loan {
    pub id: i64,
    pub account_id: i64,
    pub loan_type: String,
    pub status: String,
    pub amount: i64,
    pub delinquent_days: i64,
    pub close_date: Option<String>,
}

pub struct Card {
    pub id: i64,
    pub account_id: i64,
    pub card_type: String,
    pub credit_limit: i64,
    pub close_date: Option<String>,
}

pub struct Txn {
    pub id: i64,
    pub account_id: i64,
    pub date: String,
    pub amount: i64,
    pub txn_type: String,
}

pub struct Data {
    pub members: Vec<Member>,
    pub accounts: Vec<Account>,
    pub loans: Vec<Loan>,
    pub cards: Vec<Card>,
    pub txns: Vec<Txn>,
}

fn rows(table: &str) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(fixture_dir().join(format!("{table}.csv"))).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    r.records()
        .map(|rec| header.iter().cloned().zip(rec.unwrap().iter().map(str::to_string)).collect())
        .collect()
}

pub fn data() -> &'static Data {
    static D: OnceLock<Data> = OnceLock::new();
    D.get_or_init(|| {
        let int = |m: &BTreeMap<String, String>, k: &str| m[k].parse::<i64>().unwrap();
        Data {
            members: rows("member")
                .iter()
                .map(|m| Member {
                    id: int(m, "member_id"),
                    first: m["first_name"].clone(),
                    last: m["last_name"].clone(),
                    ssn: m["ssn"].clone(),
                    email: m["email"].clone(),
                    join_date: m["join_date"].clone(),
                    branch: m["branch"].clone(),
                })
                .collect(),
            accounts: rows("member_account")
                .iter()
                .map(|m| Account {
                    id: int(m, "account_id"),
                    member_id: int(m, "member_id"),
                    product: m["product_category"].clone(),
                    status: int(m, "status"),
                    open_date: m["open_date"].clone(),
                    close_date: opt(&m["close_date"]),
                    balance: cents(&m["balance"]),
                })
                .collect(),
            loans: rows("loan")
                .iter()
                .map(|m| Loan {
                    id: int(m, "loan_id"),
                    account_id: int(m, "account_id"),
                    loan_type: m["loan_type"].clone(),
                    status: m["status"].clone(),
                    amount: cents(&m["amount"]),
                    delinquent_days: int(m, "delinquent_days"),
                    close_date: opt(&m["close_date"]),
                })
                .collect(),
            cards: rows("card")
                .iter()
                .map(|m| Card {
                    id: int(m, "card_id"),
                    account_id: int(m, "account_id"),
                    card_type: m["card_type"].clone(),
                    credit_limit: cents(&m["credit_limit"]),
                    close_date: opt(&m["close_date"]),
                })
                .collect(),
            txns: rows("transaction")
                .iter()
                .map(|m| Txn {
                    id: int(m, "txn_id"),
                    account_id: int(m, "account_id"),
                    date: m["txn_date"].clone(),
                    amount: cents(&m["amount"]),
                    txn_type: m["txn_type"].clone(),
                })
                .collect(),
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Cents(i64),
    /// Exact mean as numerator / denominator.
    Mean(i128, i128),
    Text(String),
}

pub type Rows = Vec<Vec<Cell>>;

#[derive(Debug, Clone)]
pub struct Expected {
    pub rows: Rows,
    pub ordered: bool,
}

fn between(d: &str, lo: &str, hi: &str) -> bool {
    d >= lo && d <= hi
}

fn member_map(d: &Data) -> BTreeMap<i64, &Member> {
    d.members.iter().map(|m| (m.id, m)).collect()
}

fn account_map(d: &Data) -> BTreeMap<i64, &Account> {
    d.accounts.iter().map(|a| (a.id, a)).collect()
}

fn member_cells(m: &Member) -> Vec<Cell> {
    vec![Cell::Int(m.id), Cell::Text(m.first.clone()), Cell::Text(m.last.clone())]
}

fn unordered(rows: Rows) -> Expected {
    Expected { rows, ordered: false }
}

fn grouped_sum<K: Ord + Clone>(items: impl Iterator<Item = (K, i64)>) -> BTreeMap<K, i64> {
    let mut m = BTreeMap::new();
    for (k, v) in items {
        *m.entry(k).or_insert(0) += v;
    }
    m
}

fn grouped_mean<K: Ord + Clone>(items: impl Iterator<Item = (K, i64)>) -> BTreeMap<K, (i128, i128)> {
    let mut m: BTreeMap<K, (i128, i128)> = BTreeMap::new();
    for (k, v) in items {
        let e = m.entry(k).or_insert((0, 0));
        e.0 += v as i128;
        e.1 += 1;
    }
    m
}

/// Brute-force answer for a corpus question, or `None` if it has no oracle.
pub fn oracle(question: &str) -> Option<Expected> {
    let d = data();
    let members = member_map(d);
    let accounts = account_map(d);
    let branch_of = |account_id: i64| members[&accounts[&account_id].member_id].branch.clone();
    let with_loans: BTreeSet<i64> = d.loans.iter().map(|l| l.account_id).collect();
    let with_cards: BTreeSet<i64> = d.cards.iter().map(|c| c.account_id).collect();
    let with_txns: BTreeSet<i64> = d.txns.iter().map(|t| t.account_id).collect();

    let e = match question {
        "Which members have closed accounts in the last quarter?" => {
            let ids: BTreeSet<i64> = d
                .accounts
                .iter()
                .filter(|a| a.close_date.as_deref().is_some_and(|c| between(c, "2025-01-01", "2025-03-31")))
                .map(|a| a.member_id)
                .collect();
            unordered(ids.iter().map(|i| member_cells(members[i])).collect())
        }
        "List members with delinquent loans exceeding $5,000" => {
            let ids: BTreeSet<i64> = d
                .loans
                .iter()
                .filter(|l| l.delinquent_days > 0 && l.amount > 500_000)
                .map(|l| accounts[&l.account_id].member_id)
                .collect();
            unordered(ids.iter().map(|i| member_cells(members[i])).collect())
        }
        "List accounts which got closed last year" => unordered(
            d.accounts
                .iter()
                .filter(|a| a.close_date.as_deref().is_some_and(|c| between(c, "2024-01-01", "2024-12-31")))
                .map(|a| vec![Cell::Int(a.id)])
                .collect(),
        ),
        "Total balance per member for accounts with transactions in 2024" => {
            let active: BTreeSet<i64> =
                d.txns.iter().filter(|t| between(&t.date, "2024-01-01", "2024-12-31")).map(|t| t.account_id).collect();
            let sums = grouped_sum(d.accounts.iter().filter(|a| active.contains(&a.id)).map(|a| (a.member_id, a.balance)));
            unordered(
                sums.iter()
                    .map(|(m, s)| {
                        let mut r = member_cells(members[m]);
                        r.push(Cell::Cents(*s));
                        r
                    })
                    .collect(),
            )
        }
        "Total balance by branch for accounts with loans" => {
            let sums = grouped_sum(d.accounts.iter().filter(|a| with_loans.contains(&a.id)).map(|a| (branch_of(a.id), a.balance)));
            unordered(sums.into_iter().map(|(b, s)| vec![Cell::Text(b), Cell::Cents(s)]).collect())
        }
        "Average balance by product category for accounts with loans" => {
            let m = grouped_mean(d.accounts.iter().filter(|a| with_loans.contains(&a.id)).map(|a| (a.product.clone(), a.balance)));
            // balance is in cents; the mean is reported in currency units
            unordered(m.into_iter().map(|(k, (s, n))| vec![Cell::Text(k), Cell::Mean(s, n * 100)]).collect())
        }
        "Total loan amount by branch for accounts with cards" => {
            let sums = grouped_sum(d.loans.iter().filter(|l| with_cards.contains(&l.account_id)).map(|l| (branch_of(l.account_id), l.amount)));
            unordered(sums.into_iter().map(|(b, s)| vec![Cell::Text(b), Cell::Cents(s)]).collect())
        }
        "Maximum credit limit per branch for accounts with transactions" => {
            let mut m: BTreeMap<String, i64> = BTreeMap::new();
            for c in d.cards.iter().filter(|c| with_txns.contains(&c.account_id)) {
                let e = m.entry(branch_of(c.account_id)).or_insert(i64::MIN);
                *e = (*e).max(c.credit_limit);
            }
            unordered(m.into_iter().map(|(b, v)| vec![Cell::Text(b), Cell::Cents(v)]).collect())
        }
        "Number of accounts per branch with loans exceeding $10,000" => {
            let big: BTreeSet<i64> = d.loans.iter().filter(|l| l.amount > 1_000_000).map(|l| l.account_id).collect();
            let counts = grouped_sum(big.iter().map(|a| (branch_of(*a), 1)));
            unordered(counts.into_iter().map(|(b, n)| vec![Cell::Text(b), Cell::Int(n)]).collect())
        }
        "Total loan amount by loan type" => {
            let sums = grouped_sum(d.loans.iter().map(|l| (l.loan_type.clone(), l.amount)));
            unordered(sums.into_iter().map(|(k, s)| vec![Cell::Text(k), Cell::Cents(s)]).collect())
        }
        "Number of transactions by transaction type" => {
            let counts = grouped_sum(d.txns.iter().map(|t| (t.txn_type.clone(), 1)));
            unordered(counts.into_iter().map(|(k, n)| vec![Cell::Text(k), Cell::Int(n)]).collect())
        }
        "Top 5 members by total balance" => {
            let sums = grouped_sum(d.accounts.iter().map(|a| (a.member_id, a.balance)));
            let mut v: Vec<(i64, i64)> = sums.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1));
            Expected {
                rows: v.into_iter()
                    .take(5)
                    .map(|(m, s)| {
                        let mut r = member_cells(members[&m]);
                        r.push(Cell::Cents(s));
                        r
                    })
                    .collect(),
                ordered: true,
            }
        }
        "Accounts opened in 2024" => unordered(
            d.accounts.iter().filter(|a| between(&a.open_date, "2024-01-01", "2024-12-31")).map(|a| vec![Cell::Int(a.id)]).collect(),
        ),
        "List loans with loan type Auto" => {
            unordered(d.loans.iter().filter(|l| l.loan_type == "Auto").map(|l| vec![Cell::Int(l.id)]).collect())
        }
        "Total transaction amount by transaction type in 2024" => {
            let sums = grouped_sum(
                d.txns.iter().filter(|t| between(&t.date, "2024-01-01", "2024-12-31")).map(|t| (t.txn_type.clone(), t.amount)),
            );
            unordered(sums.into_iter().map(|(k, s)| vec![Cell::Text(k), Cell::Cents(s)]).collect())
        }
        "Number of loans per member" => {
            let counts = grouped_sum(d.loans.iter().map(|l| (accounts[&l.account_id].member_id, 1)));
            unordered(
                counts
                    .into_iter()
                    .map(|(m, n)| {
                        let mut r = member_cells(members[&m]);
                        r.push(Cell::Int(n));
                        r
                    })
                    .collect(),
            )
        }
        "How many loans does each branch have?" => {
            let counts = grouped_sum(d.loans.iter().map(|l| (branch_of(l.account_id), 1)));
            unordered(counts.into_iter().map(|(b, n)| vec![Cell::Text(b), Cell::Int(n)]).collect())
        }
        "Count of closed cards" => {
            unordered(vec![vec![Cell::Int(d.cards.iter().filter(|c| c.close_date.is_some()).count() as i64)]])
        }
        "Average transaction amount for withdrawals" => {
            let w: Vec<i64> = d.txns.iter().filter(|t| t.txn_type == "Withdrawal").map(|t| t.amount).collect();
            unordered(vec![vec![Cell::Mean(w.iter().map(|v| *v as i128).sum(), w.len() as i128 * 100)]])
        }
        "Top 10 accounts by balance" => {
            let mut v: Vec<&Account> = d.accounts.iter().collect();
            v.sort_by(|a, b| b.balance.cmp(&a.balance));
            Expected { rows: v.into_iter().take(10).map(|a| vec![Cell::Int(a.id), Cell::Cents(a.balance)]).collect(), ordered: true }
        }
        _ => return None,
    };
    Some(e)
}

fn cell_matches(expected: &Cell, got: &Value) -> bool {
    match (expected, got) {
        (Cell::Int(e), v) => v.as_f64().is_some_and(|g| g == *e as f64),
        // a sum of REAL cents rounds back to the exact decimal
        (Cell::Cents(e), v) => v.as_f64().is_some_and(|g| (g * 100.0).round() as i64 == *e),
        (Cell::Mean(n, dnm), v) => v.as_f64().is_some_and(|g| {
            let exact = *n as f64 / *dnm as f64;
            (g - exact).abs() <= 1e-9 * exact.abs().max(1.0)
        }),
        (Cell::Text(e), Value::Text(g)) => e == g,
        _ => false,
    }
}

fn row_key(r: &[Value]) -> String {
    r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\u{1f}")
}

fn cell_key(r: &[Cell]) -> String {
    r.iter()
        .map(|c| match c {
            Cell::Int(i) => i.to_string(),
            Cell::Cents(c) => format!("{c}c"),
            Cell::Mean(n, d) => format!("{n}/{d}"),
            Cell::Text(t) => t.clone(),
        })
        .collect::<Vec<_>>()
        .join("\u{1f}")
}

/// Compares a result set with an oracle answer; unordered answers are
/// matched after sorting both sides by their first text-like key.
pub fn compare(expected: &Expected, got: &ResultSet) -> Result<(), String> {
    if expected.rows.len() != got.rows.len() {
        return Err(format!("row count {} != expected {}", got.rows.len(), expected.rows.len()));
    }
    let mut exp: Vec<&Vec<Cell>> = expected.rows.iter().collect();
    let mut act: Vec<&Vec<Value>> = got.rows.iter().collect();
    if !expected.ordered {
        // grouping keys lead each row; sort both sides on them
        exp.sort_by_key(|r| cell_key(&r[..key_len(r)]));
        let k = exp.first().map(|e| key_len(e)).unwrap_or(1);
        act.sort_by_key(|r| row_key(&r[..k.min(r.len())]));
    }
    for (i, (e, a)) in exp.iter().zip(&act).enumerate() {
        if e.len() != a.len() || !e.iter().zip(a.iter()).all(|(c, v)| cell_matches(c, v)) {
            return Err(format!("row {i}: expected {e:?}, got {a:?}"));
        }
    }
    Ok(())
}

/// Leading Int/Text cells form the row key.
fn key_len(r: &[Cell]) -> usize {
    r.iter().take_while(|c| matches!(c, Cell::Int(_) | Cell::Text(_))).count().max(1)
}
