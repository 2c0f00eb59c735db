//! Registered datasources and which datasource each graph was built from.
//! Persisted as one JSON file in the data directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ctxsql_core::profile::SourceKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const FILE: &str = "registry.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasourceConfig {
    pub kind: SourceKind,
    pub path: PathBuf,
}

impl DatasourceConfig {
    pub fn id(&self) -> String {
        let kind = serde_json::to_string(&self.kind).unwrap_or_default();
        let digest = Sha256::digest(format!("{kind}\0{}", self.path.display()).as_bytes());
        format!("ds{}", &hex::encode(digest)[..10])
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Contents {
    datasources: BTreeMap<String, DatasourceConfig>,
    /// graph id -> datasource id
    graphs: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct Registry {
    path: PathBuf,
    inner: Mutex<Contents>,
}

impl Registry {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(FILE);
        let inner = match fs::read(&path) {
            Ok(b) => serde_json::from_slice(&b).map_err(std::io::Error::other)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Contents::default(),
            Err(e) => return Err(e),
        };
        Ok(Registry { path, inner: Mutex::new(inner) })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Contents> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn persist(&self, c: &Contents) -> std::io::Result<()> {
        let tmp = self.path.with_extension("json.tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(&serde_json::to_vec_pretty(c).map_err(std::io::Error::other)?)?;
        f.sync_all()?;
        fs::rename(tmp, &self.path)
    }

    pub fn add_datasource(&self, cfg: DatasourceConfig) -> std::io::Result<String> {
        let id = cfg.id();
        let mut c = self.lock();
        if c.datasources.get(&id) != Some(&cfg) {
            c.datasources.insert(id.clone(), cfg);
            self.persist(&c)?;
        }
        Ok(id)
    }

    pub fn datasource(&self, id: &str) -> Option<DatasourceConfig> {
        self.lock().datasources.get(id).cloned()
    }

    pub fn datasources(&self) -> BTreeMap<String, DatasourceConfig> {
        self.lock().datasources.clone()
    }

    pub fn bind_graph(&self, graph_id: &str, datasource: &str) -> std::io::Result<()> {
        let mut c = self.lock();
        if c.graphs.get(graph_id).map(String::as_str) != Some(datasource) {
            c.graphs.insert(graph_id.to_string(), datasource.to_string());
            self.persist(&c)?;
        }
        Ok(())
    }

    pub fn graph_source(&self, graph_id: &str) -> Option<String> {
        self.lock().graphs.get(graph_id).cloned()
    }
}
