//! Runtime settings shared by the CLI and the service.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{Dialect, DEFAULT_LIMIT};
use crate::profile::DEFAULT_SAMPLE_SIZE;

pub const CONFIG_ENV: &str = "CTXSQL_CONFIG";
pub const ADDR_ENV: &str = "CTXSQL_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("bad listen address {0:?}")]
    Addr(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    pub addr: String,
    /// JSON principals file for the service.
    pub principals: Option<PathBuf>,
    pub sample_size: usize,
    pub default_limit: u64,
    pub dialect: Dialect,
    pub adjudicator_timeout_ms: u64,
    pub adjudicator_max_in_flight: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: PathBuf::from("ctxsql-data"),
            addr: DEFAULT_ADDR.to_string(),
            principals: None,
            sample_size: DEFAULT_SAMPLE_SIZE,
            default_limit: DEFAULT_LIMIT,
            dialect: Dialect::Ansi,
            adjudicator_timeout_ms: 30_000,
            adjudicator_max_in_flight: 4,
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    /// Explicit path, else `$CTXSQL_CONFIG`, else defaults; then
    /// `$CTXSQL_DATA_DIR` and `$CTXSQL_ADDR` override the file.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let mut cfg = match explicit.map(Path::to_path_buf).or(env_path) {
            Some(p) => Self::from_file(&p)?,
            None => Config::default(),
        };
        if let Some(d) = std::env::var_os(crate::store::DATA_DIR_ENV) {
            cfg.data_dir = d.into();
        }
        if let Ok(a) = std::env::var(ADDR_ENV) {
            cfg.addr = a;
        }
        Ok(cfg)
    }

    pub fn socket_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.addr.parse().map_err(|_| ConfigError::Addr(self.addr.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_keep_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"default_limit": 50, "dialect": "sqlite"}"#).unwrap();
        let c = Config::from_file(&p).unwrap();
        assert_eq!(c.default_limit, 50);
        assert_eq!(c.dialect, Dialect::Sqlite);
        assert_eq!(c.addr, DEFAULT_ADDR);
        std::fs::write(&p, r#"{"nope": 1}"#).unwrap();
        assert!(matches!(Config::from_file(&p), Err(ConfigError::Parse { .. })));
    }
}
