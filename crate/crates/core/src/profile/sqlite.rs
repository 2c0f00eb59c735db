use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};

use super::{ensure_read_only, AdapterError, DataSourceAdapter, ResultSet};
use crate::value::{DataType, Value};

/// Read-only adapter over a SQLite database file.
pub struct SqliteAdapter {
    path: PathBuf,
    conn: Mutex<Connection>,
}

impl SqliteAdapter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AdapterError> {
        let path = path.as_ref().to_path_buf();
        let conn = Connection::open_with_flags(
            &path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
        )?;
        conn.execute_batch("PRAGMA query_only = ON;")?;
        Ok(SqliteAdapter { path, conn: Mutex::new(conn) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub(crate) fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

pub(crate) fn value_from_ref(v: ValueRef<'_>) -> Value {
    match v {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::Int(i),
        ValueRef::Real(f) => Value::Float(f),
        ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::Text(hex::encode(b)),
    }
}

/// Runs a read-only query on `conn` and materializes every row.
pub(crate) fn run_query(conn: &Connection, sql: &str) -> Result<ResultSet, AdapterError> {
    ensure_read_only(sql)?;
    let mut stmt = conn.prepare(sql)?;
    if !stmt.readonly() {
        return Err(AdapterError::Rejected("statement is not read-only".into()));
    }
    let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
    let n = columns.len();
    let mut rows = Vec::new();
    let mut cursor = stmt.query([])?;
    while let Some(row) = cursor.next()? {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(value_from_ref(row.get_ref(i)?));
        }
        rows.push(out);
    }
    Ok(ResultSet { columns, rows })
}

pub(crate) fn table_names(conn: &Connection) -> Result<Vec<String>, AdapterError> {
    let mut stmt = conn.prepare(
        "SELECT name FROM sqlite_master WHERE type IN ('table','view') AND name NOT LIKE 'sqlite_%' ORDER BY name",
    )?;
    let names = stmt.query_map([], |r| r.get::<_, String>(0))?.collect::<Result<Vec<_>, _>>()?;
    Ok(names)
}

impl DataSourceAdapter for SqliteAdapter {
    fn list_tables(&self) -> Result<Vec<String>, AdapterError> {
        table_names(&self.conn())
    }

    fn read_schema(&self, table: &str) -> Result<Vec<(String, Option<DataType>)>, AdapterError> {
        let conn = self.conn();
        if !table_names(&conn)?.iter().any(|t| t == table) {
            return Err(AdapterError::TableNotFound(table.to_string()));
        }
        let mut stmt = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(table)))?;
        let cols = stmt
            .query_map([], |r| Ok((r.get::<_, String>(1)?, r.get::<_, String>(2)?)))?
            .collect::<Result<Vec<_>, _>>()?;
        Ok(cols
            .into_iter()
            .map(|(name, decl)| {
                let ty = (!decl.is_empty()).then(|| DataType::from_declared(&decl));
                (name, ty)
            })
            .collect())
    }

    fn scan(&self, table: &str, limit: Option<usize>) -> Result<Vec<Vec<Value>>, AdapterError> {
        let conn = self.conn();
        if !table_names(&conn)?.iter().any(|t| t == table) {
            return Err(AdapterError::TableNotFound(table.to_string()));
        }
        let mut sql = format!("SELECT * FROM {}", quote_ident(table));
        if let Some(n) = limit {
            sql.push_str(&format!(" LIMIT {n}"));
        }
        Ok(run_query(&conn, &sql)?.rows)
    }

    fn execute(&self, sql: &str) -> Result<ResultSet, AdapterError> {
        run_query(&self.conn(), sql)
    }
}
