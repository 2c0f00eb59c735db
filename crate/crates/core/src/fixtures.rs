//! Seeded generator for the five-table credit-union fixture and its manifest.
//!
//! Table ids occupy disjoint ranges so that only the seeded foreign keys are
//! value-included in another table's key. `member_account.status` is a small
//! integer code whose values fall inside `member.member_id`; it is the
//! deliberate decoy inclusion with no name evidence.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 42;

pub const MEMBER_ROWS: usize = 1200;
pub const ACCOUNT_ROWS: usize = 1500;
pub const LOAN_ROWS: usize = 600;
pub const CARD_ROWS: usize = 500;
pub const TXN_ROWS: usize = 8000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableManifest {
    pub name: String,
    pub row_count: usize,
    pub primary_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub fk_table: String,
    pub fk_column: String,
    pub pk_table: String,
    pub pk_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoy {
    pub table: String,
    pub column: String,
    pub included_in_table: String,
    pub included_in_column: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub seed: u64,
    pub tables: Vec<TableManifest>,
    pub foreign_keys: Vec<ForeignKey>,
    pub decoys: Vec<Decoy>,
    pub pii_columns: Vec<String>,
}

const FIRST: &[&str] = &[
    "Ava", "Ben", "Carla", "Dev", "Elena", "Farid", "Grace", "Hugo", "Ines", "Jamal", "Kira", "Liam", "Maya",
    "Noah", "Olga", "Pavel", "Quinn", "Rosa", "Sam", "Tara", "Umar", "Vera", "Wen", "Yusuf", "Zoe",
];
const LAST: &[&str] = &[
    "Adams", "Brooks", "Chen", "Diaz", "Evans", "Fischer", "Garcia", "Hughes", "Ito", "Jensen", "Khan", "Lopez",
    "Moreau", "Nakamura", "Okafor", "Patel", "Quint", "Reyes", "Silva", "Turner", "Ueda", "Vargas", "Walsh",
];
const BRANCHES: &[&str] = &["Downtown", "Lakeview", "Northside", "Riverside", "Westgate"];
const PRODUCTS: &[&str] = &["Certificate", "Checking", "IRA", "Money Market", "Savings"];
const LOAN_TYPES: &[&str] = &["Auto", "Home Equity", "Mortgage", "Personal"];
const LOAN_STATUS: &[&str] = &["ACTIVE", "CHARGED_OFF", "PAID", "VOID"];
const CARD_TYPES: &[&str] = &["Mastercard Platinum", "Visa Classic", "Visa Gold"];
const TXN_TYPES: &[&str] = &["Deposit", "Fee", "Payment", "Transfer", "Withdrawal"];

fn date_between(rng: &mut ChaCha8Rng, from: NaiveDate, to: NaiveDate) -> NaiveDate {
    let span = (to - from).num_days();
    from + Duration::days(rng.random_range(0..=span))
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

fn cents(c: i64) -> String {
    format!("{}.{:02}", c / 100, c % 100)
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

/// Rows of one table as header + records, all as CSV text.
pub struct FixtureTable {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

/// Generates the fixture in memory.
pub fn generate_tables(seed: u64) -> Vec<FixtureTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut member = Vec::with_capacity(MEMBER_ROWS);
    let mut ssns = HashSet::new();
    for id in 1..=MEMBER_ROWS as i64 {
        let first = pick(&mut rng, FIRST);
        let last = pick(&mut rng, LAST);
        let ssn = loop {
            let s = format!(
                "{:03}-{:02}-{:04}",
                rng.random_range(100..900),
                rng.random_range(10..100),
                rng.random_range(1000..10000)
            );
            if ssns.insert(s.clone()) {
                break s;
            }
        };
        let email = format!("{}.{}{}@example.org", first.to_lowercase(), last.to_lowercase(), id);
        let birth = date_between(&mut rng, ymd(1945, 1, 1), ymd(2004, 12, 31));
        let joined = date_between(&mut rng, ymd(2010, 1, 1), ymd(2024, 12, 31));
        let branch = pick(&mut rng, BRANCHES);
        member.push(vec![
            id.to_string(),
            first.to_string(),
            last.to_string(),
            ssn,
            email,
            birth.to_string(),
            joined.to_string(),
            branch.to_string(),
        ]);
    }

    let mut account = Vec::with_capacity(ACCOUNT_ROWS);
    let mut account_ids = Vec::with_capacity(ACCOUNT_ROWS);
    for i in 0..ACCOUNT_ROWS as i64 {
        let id = 100_001 + i;
        account_ids.push(id);
        let member_id = rng.random_range(1..=MEMBER_ROWS as i64);
        let product = pick(&mut rng, PRODUCTS);
        let status = rng.random_range(1..=3i64);
        let open = date_between(&mut rng, ymd(2015, 1, 1), ymd(2024, 6, 30));
        let close = if rng.random_range(0..100) < 30 {
            let c = date_between(&mut rng, open + Duration::days(30), ymd(2025, 3, 31));
            if c > open { c.to_string() } else { String::new() }
        } else {
            String::new()
        };
        let balance = rng.random_range(0..5_000_000i64);
        account.push(vec![
            id.to_string(),
            member_id.to_string(),
            product.to_string(),
            status.to_string(),
            open.to_string(),
            close,
            cents(balance),
        ]);
    }

    let mut loan = Vec::with_capacity(LOAN_ROWS);
    for i in 0..LOAN_ROWS as i64 {
        let id = 300_001 + i;
        let acct = account_ids[rng.random_range(0..account_ids.len())];
        let kind = pick(&mut rng, LOAN_TYPES);
        let status = pick(&mut rng, LOAN_STATUS);
        let amount = rng.random_range(100_000..6_000_000i64);
        let delinquent = if rng.random_range(0..100) < 65 { 0 } else { rng.random_range(1..=180i64) };
        let close = if rng.random_range(0..100) < 40 {
            date_between(&mut rng, ymd(2016, 1, 1), ymd(2025, 3, 31)).to_string()
        } else {
            String::new()
        };
        loan.push(vec![
            id.to_string(),
            acct.to_string(),
            kind.to_string(),
            status.to_string(),
            cents(amount),
            delinquent.to_string(),
            close,
        ]);
    }

    let mut card = Vec::with_capacity(CARD_ROWS);
    for i in 0..CARD_ROWS as i64 {
        let id = 400_001 + i;
        let acct = account_ids[rng.random_range(0..account_ids.len())];
        let kind = pick(&mut rng, CARD_TYPES);
        let limit = rng.random_range(1..=40i64) * 50_000 + rng.random_range(0..100);
        let close = if rng.random_range(0..100) < 25 {
            date_between(&mut rng, ymd(2016, 1, 1), ymd(2025, 3, 31)).to_string()
        } else {
            String::new()
        };
        card.push(vec![id.to_string(), acct.to_string(), kind.to_string(), cents(limit), close]);
    }

    let mut txn = Vec::with_capacity(TXN_ROWS);
    for i in 0..TXN_ROWS as i64 {
        let id = 500_001 + i;
        let acct = account_ids[rng.random_range(0..account_ids.len())];
        let date = date_between(&mut rng, ymd(2023, 1, 1), ymd(2025, 3, 31));
        let amount = rng.random_range(100..500_000i64);
        let kind = pick(&mut rng, TXN_TYPES);
        txn.push(vec![id.to_string(), acct.to_string(), date.to_string(), cents(amount), kind.to_string()]);
    }

    vec![
        FixtureTable {
            name: "member",
            header: vec!["member_id", "first_name", "last_name", "ssn", "email", "birth_date", "join_date", "branch"],
            rows: member,
        },
        FixtureTable {
            name: "member_account",
            header: vec!["account_id", "member_id", "product_category", "status", "open_date", "close_date", "balance"],
            rows: account,
        },
        FixtureTable {
            name: "loan",
            header: vec!["loan_id", "account_id", "loan_type", "status", "amount", "delinquent_days", "close_date"],
            rows: loan,
        },
        FixtureTable {
            name: "card",
            header: vec!["card_id", "account_id", "card_type", "credit_limit", "close_date"],
            rows: card,
        },
        FixtureTable {
            name: "transaction",
            header: vec!["txn_id", "account_id", "txn_date", "amount", "txn_type"],
            rows: txn,
        },
    ]
}

pub fn manifest(seed: u64, tables: &[FixtureTable]) -> FixtureManifest {
    let fk = |t: &str, c: &str, pt: &str, pc: &str| ForeignKey {
        fk_table: t.into(),
        fk_column: c.into(),
        pk_table: pt.into(),
        pk_column: pc.into(),
    };
    FixtureManifest {
        seed,
        tables: tables
            .iter()
            .map(|t| TableManifest {
                name: t.name.to_string(),
                row_count: t.rows.len(),
                primary_key: t.header[0].to_string(),
            })
            .collect(),
        foreign_keys: vec![
            fk("card", "account_id", "member_account", "account_id"),
            fk("loan", "account_id", "member_account", "account_id"),
            fk("member_account", "member_id", "member", "member_id"),
            fk("transaction", "account_id", "member_account", "account_id"),
        ],
        decoys: vec![Decoy {
            table: "member_account".into(),
            column: "status".into(),
            included_in_table: "member".into(),
            included_in_column: "member_id".into(),
            note: "status codes 1..3 are a subset of member ids but carry no name evidence".into(),
        }],
        pii_columns: vec!["member.birth_date".into(), "member.email".into(), "member.ssn".into()],
    }
}

/// Writes `<table>.csv` files and `manifest.json` into `dir`.
pub fn generate_fixture(seed: u64, dir: &Path) -> std::io::Result<FixtureManifest> {
    fs::create_dir_all(dir)?;
    let tables = generate_tables(seed);
    for t in &tables {
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", t.name)))?;
        w.write_record(&t.header)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    let m = manifest(seed, &tables);
    let mut json = serde_json::to_vec_pretty(&m).map_err(std::io::Error::other)?;
    json.push(b'\n');
    fs::write(dir.join("manifest.json"), json)?;
    Ok(m)
}
