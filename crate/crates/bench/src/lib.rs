//! Shared setup for the benchmarks.

use std::path::PathBuf;

use chrono::{DateTime, TimeZone, Utc};
use ctxsql_core::adjudicator::{DeterministicAdjudicator, Transcript};
use ctxsql_core::builder::{build_graph, BuildOptions};
use ctxsql_core::model::ContextGraph;
use ctxsql_core::profile::CsvDirAdapter;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/cu_csv")
}

pub fn clock() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 4, 1, 0, 0, 0).unwrap()
}

pub fn adapter() -> CsvDirAdapter {
    CsvDirAdapter::open(fixture_dir()).expect("fixture dir")
}

pub fn build(adapter: &CsvDirAdapter) -> ContextGraph {
    build_graph(adapter, &BuildOptions::new("cu", clock()), &DeterministicAdjudicator, &Transcript::default())
        .expect("fixture build")
        .graph
}

pub const QUESTIONS: &[&str] = &[
    "List accounts",
    "Which members have closed accounts in the last quarter?",
    "Total balance per member for accounts with transactions in 2024",
    "Number of accounts per branch with loans exceeding $10,000",
    "Top 5 members by total balance",
];
