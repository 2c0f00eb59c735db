use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rusqlite::{params_from_iter, Connection};

use super::sqlite::{quote_ident, run_query};
use super::{ensure_read_only, infer_type, AdapterError, DataSourceAdapter, ResultSet};
use crate::value::{DataType, Value};

/// One CSV file per table; the file stem is the table name. The first row is
/// the header and empty fields are null. There are no declared types.
pub struct CsvDirAdapter {
    dir: PathBuf,
    // lazily loaded in-memory copy used by `execute`
    engine: Mutex<Option<Connection>>,
}

impl CsvDirAdapter {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, AdapterError> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.is_dir() {
            return Err(AdapterError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} is not a directory", dir.display()),
            )));
        }
        Ok(CsvDirAdapter { dir, engine: Mutex::new(None) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn file_for(&self, table: &str) -> Result<PathBuf, AdapterError> {
        let path = self.dir.join(format!("{table}.csv"));
        if path.is_file() {
            Ok(path)
        } else {
            Err(AdapterError::TableNotFound(table.to_string()))
        }
    }

    fn read_all(&self, table: &str, limit: Option<usize>) -> Result<(Vec<String>, Vec<Vec<Value>>), AdapterError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(self.file_for(table)?)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            if limit.is_some_and(|n| rows.len() >= n) {
                break;
            }
            let rec = rec?;
            rows.push(
                (0..header.len())
                    .map(|i| match rec.get(i) {
                        Some("") | None => Value::Null,
                        Some(s) => Value::Text(s.to_string()),
                    })
                    .collect(),
            );
        }
        Ok((header, rows))
    }

    fn load_engine(&self) -> Result<Connection, AdapterError> {
        let conn = Connection::open_in_memory()?;
        for table in self.list_tables()? {
            let (header, rows) = self.read_all(&table, None)?;
            let types: Vec<DataType> = (0..header.len())
                .map(|i| infer_type(rows.iter().filter_map(|r| r[i].as_str())))
                .collect();
            let cols: Vec<String> = header
                .iter()
                .zip(&types)
                .map(|(h, t)| format!("{} {}", quote_ident(h), sql_type(*t)))
                .collect();
            conn.execute_batch(&format!("CREATE TABLE {} ({});", quote_ident(&table), cols.join(", ")))?;
            let placeholders = vec!["?"; header.len()].join(", ");
            let tx = conn.unchecked_transaction()?;
            {
                let mut stmt = tx.prepare(&format!("INSERT INTO {} VALUES ({placeholders})", quote_ident(&table)))?;
                for row in &rows {
                    let typed = row.iter().zip(&types).map(|(v, t)| to_sql(v, *t));
                    stmt.execute(params_from_iter(typed))?;
                }
            }
            tx.commit()?;
        }
        conn.execute_batch("PRAGMA query_only = ON;")?;
        Ok(conn)
    }
}

fn sql_type(t: DataType) -> &'static str {
    match t {
        DataType::Integer | DataType::Boolean => "INTEGER",
        DataType::Decimal => "REAL",
        DataType::Text | DataType::Date | DataType::Timestamp => "TEXT",
    }
}

fn to_sql(v: &Value, t: DataType) -> rusqlite::types::Value {
    use rusqlite::types::Value as S;
    let Some(raw) = v.as_str() else { return S::Null };
    match Value::parse_as(raw, t) {
        Value::Null => S::Null,
        Value::Int(i) => S::Integer(i),
        Value::Float(f) => S::Real(f),
        Value::Bool(b) => S::Integer(b as i64),
        Value::Text(s) => S::Text(s),
    }
}

impl DataSourceAdapter for CsvDirAdapter {
    fn list_tables(&self) -> Result<Vec<String>, AdapterError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.push(stem.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    fn read_schema(&self, table: &str) -> Result<Vec<(String, Option<DataType>)>, AdapterError> {
        let mut rdr = csv::Reader::from_path(self.file_for(table)?)?;
        Ok(rdr.headers()?.iter().map(|h| (h.to_string(), None)).collect())
    }

    fn scan(&self, table: &str, limit: Option<usize>) -> Result<Vec<Vec<Value>>, AdapterError> {
        Ok(self.read_all(table, limit)?.1)
    }

    fn execute(&self, sql: &str) -> Result<ResultSet, AdapterError> {
        ensure_read_only(sql)?;
        let mut guard = self.engine.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.load_engine()?);
        }
        let conn = guard.as_ref().expect("engine loaded above");
        run_query(conn, sql)
    }
}
