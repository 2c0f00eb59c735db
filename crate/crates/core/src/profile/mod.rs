//! Data-source adapters and per-column profiling over seeded reservoir samples.

mod csvdir;
mod sqlite;

use std::collections::BTreeSet;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::value::{is_iso_date, is_iso_timestamp, parse_bool, DataType, Value};

pub use csvdir::CsvDirAdapter;
pub use sqlite::SqliteAdapter;

pub const DEFAULT_SAMPLE_SIZE: usize = 10_000;
/// Cap on distinct values kept in `ColumnStats::value_sample`.
pub const VALUE_SAMPLE_CAP: usize = 100;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("table not found: {0}")]
    TableNotFound(String),
    #[error("statement rejected: {0}")]
    Rejected(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("sql error: {0}")]
    Sql(#[from] rusqlite::Error),
}

/// Rows returned by `execute`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

pub trait DataSourceAdapter: Send + Sync {
    fn list_tables(&self) -> Result<Vec<String>, AdapterError>;

    /// Column names with declared types; `None` when the source has none.
    fn read_schema(&self, table: &str) -> Result<Vec<(String, Option<DataType>)>, AdapterError>;

    /// Up to `limit` rows in storage order, or all rows when `limit` is `None`.
    fn scan(&self, table: &str, limit: Option<usize>) -> Result<Vec<Vec<Value>>, AdapterError>;

    /// Runs a single read-only query. Anything else is rejected.
    fn execute(&self, sql: &str) -> Result<ResultSet, AdapterError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    CsvDir,
    Sqlite,
}

impl SourceKind {
    /// A directory is read as CSV files, anything else as a SQLite file.
    pub fn detect(path: &std::path::Path) -> Self {
        if path.is_dir() {
            SourceKind::CsvDir
        } else {
            SourceKind::Sqlite
        }
    }
}

pub fn open_source(kind: SourceKind, path: &std::path::Path) -> Result<Box<dyn DataSourceAdapter>, AdapterError> {
    Ok(match kind {
        SourceKind::CsvDir => Box::new(CsvDirAdapter::open(path)?),
        SourceKind::Sqlite => {
            if !path.is_file() {
                return Err(AdapterError::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{} is not a file", path.display()),
                )));
            }
            Box::new(SqliteAdapter::open(path)?)
        }
    })
}

/// Rejects everything but a single SELECT-style statement.
pub(crate) fn ensure_read_only(sql: &str) -> Result<(), AdapterError> {
    crate::sqlref::parse_query(sql).map(|_| ()).map_err(|e| AdapterError::Rejected(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub table: String,
    pub column: String,
    pub sampled_rows: u64,
    pub distinct_count: u64,
    pub null_count: u64,
    pub null_fraction: f64,
    pub min: Option<Value>,
    pub max: Option<Value>,
    pub avg_length: Option<f64>,
    pub value_sample: Vec<Value>,
    pub inferred_type: DataType,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("table not found: {0}")]
    TableNotFound(String),
    #[error("sample size must be at least 1")]
    InvalidSampleSize,
    #[error("adapter failure: {0}")]
    AdapterFailure(AdapterError),
}

impl From<AdapterError> for ProfileError {
    fn from(e: AdapterError) -> Self {
        match e {
            AdapterError::TableNotFound(t) => ProfileError::TableNotFound(t),
            other => ProfileError::AdapterFailure(other),
        }
    }
}

/// Reservoir seed for one table of one graph.
pub fn sample_seed(graph_id: &str, table: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(graph_id.as_bytes());
    h.update([0u8]);
    h.update(table.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Classic algorithm R over `items`, keeping original order among the kept.
pub fn reservoir_sample<T: Clone>(items: &[T], k: usize, seed: u64) -> Vec<T> {
    if items.len() <= k {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<usize> = (0..k).collect();
    for i in k..items.len() {
        let j = rng.random_range(0..=i);
        if j < k {
            slots[j] = i;
        }
    }
    slots.sort_unstable();
    slots.into_iter().map(|i| items[i].clone()).collect()
}

/// Narrowest type in integer, decimal, date, timestamp, boolean, text order
/// that parses every non-null value.
pub fn infer_type<'a, I>(values: I) -> DataType
where
    I: IntoIterator<Item = &'a str>,
{
    const ORDER: [DataType; 5] =
        [DataType::Integer, DataType::Decimal, DataType::Date, DataType::Timestamp, DataType::Boolean];
    let mut alive = [true; 5];
    let mut any = false;
    for v in values {
        if v.is_empty() {
            continue;
        }
        any = true;
        for (i, ty) in ORDER.iter().enumerate() {
            if alive[i] && !parses_as(v, *ty) {
                alive[i] = false;
            }
        }
        if !alive.iter().any(|a| *a) {
            return DataType::Text;
        }
    }
    if !any {
        return DataType::Text;
    }
    ORDER.iter().zip(alive).find(|(_, a)| *a).map(|(t, _)| *t).unwrap_or(DataType::Text)
}

fn parses_as(v: &str, ty: DataType) -> bool {
    match ty {
        DataType::Integer => v.parse::<i64>().is_ok(),
        DataType::Decimal => {
            v.bytes().any(|b| b.is_ascii_digit())
                && v.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
                && v.parse::<f64>().is_ok_and(f64::is_finite)
        }
        DataType::Date => is_iso_date(v),
        DataType::Timestamp => is_iso_timestamp(v),
        DataType::Boolean => parse_bool(v).is_some(),
        DataType::Text => true,
    }
}

fn raw_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

/// Profiles every column of `table` over a seeded reservoir sample of
/// `sample_size` rows.
pub fn profile_table(
    adapter: &dyn DataSourceAdapter,
    graph_id: &str,
    table: &str,
    sample_size: usize,
) -> Result<Vec<ColumnStats>, ProfileError> {
    if sample_size == 0 {
        return Err(ProfileError::InvalidSampleSize);
    }
    let schema = adapter.read_schema(table)?;
    let rows = adapter.scan(table, None)?;
    let seed = sample_seed(graph_id, table);
    let sample = reservoir_sample(&rows, sample_size, seed);
    let mut out = Vec::with_capacity(schema.len());
    for (idx, (name, declared)) in schema.iter().enumerate() {
        let raw: Vec<Option<String>> = sample.iter().map(|r| r.get(idx).and_then(raw_text)).collect();
        let ty = declared.unwrap_or_else(|| infer_type(raw.iter().flatten().map(String::as_str)));
        let typed: Vec<Value> = raw
            .iter()
            .map(|r| r.as_deref().map(|s| Value::parse_as(s, ty)).unwrap_or(Value::Null))
            .collect();
        out.push(column_stats(table, name, ty, &typed, seed ^ idx as u64));
    }
    Ok(out)
}

fn column_stats(table: &str, column: &str, ty: DataType, values: &[Value], seed: u64) -> ColumnStats {
    let sampled = values.len() as u64;
    let non_null: Vec<&Value> = values.iter().filter(|v| !v.is_null()).collect();
    let nulls = sampled - non_null.len() as u64;
    let distinct: BTreeSet<&Value> = non_null.iter().copied().collect();
    let avg_length = (ty == DataType::Text && !non_null.is_empty()).then(|| {
        let total: usize = non_null.iter().map(|v| v.to_string().chars().count()).sum();
        total as f64 / non_null.len() as f64
    });
    let ordered: Vec<Value> = distinct.iter().map(|v| (*v).clone()).collect();
    let value_sample = reservoir_sample(&ordered, VALUE_SAMPLE_CAP, seed);
    ColumnStats {
        table: table.to_string(),
        column: column.to_string(),
        sampled_rows: sampled,
        distinct_count: distinct.len() as u64,
        null_count: nulls,
        null_fraction: if sampled == 0 { 0.0 } else { nulls as f64 / sampled as f64 },
        min: distinct.first().map(|v| (*v).clone()),
        max: distinct.last().map(|v| (*v).clone()),
        avg_length,
        value_sample,
        inferred_type: ty,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn infer_type_examples() {
        assert_eq!(infer_type(["1", "2", "42"]), DataType::Integer);
        assert_eq!(infer_type(["2024-01-05", "2023-12-31"]), DataType::Date);
        assert_eq!(infer_type(["1", "2", "x"]), DataType::Text);
        assert_eq!(infer_type(["1.5", "2"]), DataType::Decimal);
        assert_eq!(infer_type(["true", "no"]), DataType::Boolean);
        assert_eq!(infer_type(["2024-01-05T10:00:00"]), DataType::Timestamp);
        assert_eq!(infer_type(Vec::<&str>::new()), DataType::Text);
        assert_eq!(infer_type(["inf"]), DataType::Text);
    }

    #[test]
    fn reservoir_is_deterministic_and_bounded() {
        let items: Vec<u32> = (0..1000).collect();
        let a = reservoir_sample(&items, 50, 7);
        let b = reservoir_sample(&items, 50, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        assert_ne!(a, reservoir_sample(&items, 50, 8));
        assert_eq!(reservoir_sample(&items[..10], 50, 7).len(), 10);
    }

    #[test]
    fn all_null_column() {
        let s = column_stats("t", "c", DataType::Integer, &[Value::Null, Value::Null], 1);
        assert_eq!(s.null_fraction, 1.0);
        assert!(s.min.is_none() && s.max.is_none());
        assert_eq!(s.distinct_count, 0);
    }

    fn token() -> impl Strategy<Value = String> {
        prop_oneof![
            (-1000i64..1000).prop_map(|i| i.to_string()),
            (-1000.0f64..1000.0).prop_map(|f| format!("{f:.2}")),
            Just("2024-02-29".to_string()),
            Just("2024-02-29T12:00:00".to_string()),
            Just("yes".to_string()),
            "[a-z]{1,5}",
        ]
    }

    proptest! {
        #[test]
        fn infer_type_is_monotone(vals in prop::collection::vec(token(), 1..20), extra in token()) {
            let before = infer_type(vals.iter().map(String::as_str));
            let mut more = vals.clone();
            more.push(extra);
            let after = infer_type(more.iter().map(String::as_str));
            let rank = |t: DataType| [DataType::Integer, DataType::Decimal, DataType::Date, DataType::Timestamp, DataType::Boolean, DataType::Text]
                .iter().position(|x| *x == t).unwrap();
            prop_assert!(rank(after) >= rank(before), "{before:?} -> {after:?}");
        }
    }
}
