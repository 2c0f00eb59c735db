//! `ctxsql` command line. Every command prints one JSON document on stdout;
//! logs go to stderr. Exit codes: 0 success, 1 planner or user error,
//! 2 system error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use ctxsql_core::adjudicator::{self, Transcript};
use ctxsql_core::builder::{build_graph, derive_graph_id, BuildOptions};
use ctxsql_core::config::{Config, ConfigError};
use ctxsql_core::eval::{read_corpus, run_corpus, EvalError};
use ctxsql_core::fixtures::{generate_fixture, DEFAULT_SEED};
use ctxsql_core::model::{apply_annotation, deserialize_graph, serialize_graph, Annotation, ContextGraph};
use ctxsql_core::planner::{Dialect, PlanContext, PlanError, Planner};
use ctxsql_core::profile::{open_source, profile_table, DataSourceAdapter, SourceKind};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "ctxsql", version, about = "Build context graphs over relational sources and plan questions against them")]
struct Cli {
    /// JSON config file
    #[arg(long, global = true, env = ctxsql_core::config::CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Profile the columns of a source.
    Profile {
        /// CSV directory or SQLite file
        source: PathBuf,
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        tables: Option<Vec<String>>,
    },
    /// Build a context graph.
    Build {
        source: PathBuf,
        #[arg(long, value_delimiter = ',')]
        tables: Option<Vec<String>>,
        /// Write the graph here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Build timestamp recorded in the graph
        #[arg(long)]
        clock: Option<DateTime<Utc>>,
        #[arg(long)]
        graph_id: Option<String>,
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Plan a question, optionally running it.
    Query {
        graph: PathBuf,
        question: String,
        /// Plan only; never touches the source
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        execute: bool,
        /// Anchors relative dates such as "last quarter"
        #[arg(long)]
        clock: Option<DateTime<Utc>>,
        /// Source to run against; required with --execute
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long, default_value = "cli")]
        principal: String,
    },
    /// Apply an annotation and write the new graph version.
    Annotate {
        graph: PathBuf,
        /// Prioritization, Synonym, Description, CustomMeasure or EnforcerRule
        #[arg(long)]
        kind: String,
        /// Kind-specific payload as JSON
        #[arg(long)]
        payload: String,
        /// `graph`, `<table>` or `<table>.<column>`
        #[arg(long, default_value = "graph")]
        target: String,
        #[arg(long, default_value = "cli")]
        author: String,
        #[arg(long)]
        clock: Option<DateTime<Utc>>,
        /// Output path; the input graph is replaced when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score planned SQL against a reference corpus.
    Eval {
        graph: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        clock: Option<DateTime<Utc>>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        addr: Option<String>,
    },
    /// Write the seeded sample dataset.
    Fixture {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Debug)]
enum Failure {
    /// Bad input or a question the planner could not answer.
    User(Value),
    System(String),
}

impl Failure {
    fn user(code: &str, message: impl ToString) -> Self {
        Failure::User(json!({ "error": code, "message": message.to_string() }))
    }

    fn system(message: impl ToString) -> Self {
        Failure::System(message.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::system(e),
            _ => Failure::user("config", e),
        }
    }
}

type Outcome = Result<Value, Failure>;

pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            return emit(out, &json!({ "error": "usage", "message": e.to_string() }), 1);
        }
    };
    match dispatch(cli) {
        Ok(v) => emit(out, &v, 0),
        Err(Failure::User(v)) => emit(out, &v, 1),
        Err(Failure::System(m)) => {
            tracing::error!("{m}");
            emit(out, &json!({ "error": "system", "message": m }), 2)
        }
    }
}

fn emit(out: &mut dyn Write, v: &Value, code: i32) -> i32 {
    let text = serde_json::to_string_pretty(v).unwrap_or_else(|_| "null".into());
    if writeln!(out, "{text}").is_err() {
        return 2;
    }
    code
}

fn dispatch(cli: Cli) -> Outcome {
    let config = Config::resolve(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Profile { source, sample, tables } => profile(&config, &source, sample, tables),
        Cmd::Build { source, tables, out, clock, graph_id, sample } => build(&config, &source, tables, out, clock, graph_id, sample),
        Cmd::Query { graph, question, dry_run, execute, clock, source, principal } => {
            query(&config, &graph, &question, execute && !dry_run, clock, source, principal)
        }
        Cmd::Annotate { graph, kind, payload, target, author, clock, out } => {
            annotate(&graph, &kind, &payload, &target, author, clock, out)
        }
        Cmd::Eval { graph, corpus, clock } => eval(&config, &graph, &corpus, clock),
        Cmd::Serve { addr } => serve(config, addr),
        Cmd::Fixture { dir, seed } => {
            let m = generate_fixture(seed, &dir).map_err(Failure::system)?;
            Ok(json!({ "dir": dir, "manifest": m }))
        }
    }
}

fn open(source: &Path) -> Result<Box<dyn DataSourceAdapter>, Failure> {
    open_source(SourceKind::detect(source), source).map_err(|e| Failure::user("source", e))
}

/// Tables to use: the requested ones, checked, or all of them; sorted.
fn select_tables(adapter: &dyn DataSourceAdapter, requested: Option<Vec<String>>) -> Result<Vec<String>, Failure> {
    let all = adapter.list_tables().map_err(Failure::system)?;
    let mut tables = match requested {
        Some(t) => {
            if let Some(m) = t.iter().find(|t| !all.contains(t)) {
                return Err(Failure::user("unknown_table", m));
            }
            t
        }
        None => all,
    };
    tables.sort();
    tables.dedup();
    Ok(tables)
}

/// Stable label for a source: its last path component.
fn source_label(source: &Path) -> String {
    source.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_else(|| source.display().to_string())
}

fn profile(config: &Config, source: &Path, sample: Option<usize>, tables: Option<Vec<String>>) -> Outcome {
    let adapter = open(source)?;
    let tables = select_tables(adapter.as_ref(), tables)?;
    let gid = derive_graph_id(&source_label(source), &tables);
    let sample = sample.unwrap_or(config.sample_size);
    let mut out = Vec::new();
    for t in &tables {
        let stats = profile_table(adapter.as_ref(), &gid, t, sample).map_err(|e| Failure::user("profile", e))?;
        out.push(json!({ "table": t, "columns": stats }));
    }
    Ok(json!({ "source": source_label(source), "sample_size": sample, "tables": out }))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path)).map_err(Failure::system)
}

fn load_graph(path: &Path) -> Result<ContextGraph, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::user("graph", format!("{}: {e}", path.display())))?;
    deserialize_graph(&bytes).map_err(|e| Failure::user("graph", e))
}

fn build(
    config: &Config,
    source: &Path,
    tables: Option<Vec<String>>,
    out: Option<PathBuf>,
    clock: Option<DateTime<Utc>>,
    graph_id: Option<String>,
    sample: Option<usize>,
) -> Outcome {
    let adapter = open(source)?;
    let tables = select_tables(adapter.as_ref(), tables)?;
    let gid = graph_id.unwrap_or_else(|| derive_graph_id(&source_label(source), &tables));
    let mut opts = BuildOptions::new(gid, clock.unwrap_or_else(Utc::now));
    opts.tables = Some(tables);
    opts.sample_size = sample.unwrap_or(config.sample_size);
    let adj = adjudicator::from_env();
    let built = build_graph(adapter.as_ref(), &opts, adj.as_ref(), &Transcript::default()).map_err(|e| Failure::user("build", e))?;
    let g = built.graph;
    let bytes = serialize_graph(&g).map_err(Failure::system)?;
    match out {
        Some(path) => {
            write_atomic(&path, &bytes)?;
            Ok(json!({
                "graph_id": g.graph_id,
                "version": g.version,
                "out": path,
                "tables": g.tables.iter().map(|t| &t.table_id).collect::<Vec<_>>(),
                "join_edges": g.joins.len(),
                "adjudicator": adj.mode(),
            }))
        }
        None => serde_json::from_slice(&bytes).map_err(Failure::system),
    }
}

fn query(
    config: &Config,
    graph: &Path,
    question: &str,
    execute: bool,
    clock: Option<DateTime<Utc>>,
    source: Option<PathBuf>,
    principal: String,
) -> Outcome {
    let planner = Planner::new(load_graph(graph)?);
    let adapter = match (&source, execute) {
        (Some(s), true) => Some(open(s)?),
        (None, true) => return Err(Failure::user("usage", "--execute needs --source")),
        _ => None,
    };
    let ctx = PlanContext {
        clock: clock.unwrap_or_else(Utc::now),
        principal,
        // both source kinds run SQLite underneath
        dialect: if source.is_some() { Dialect::Sqlite } else { config.dialect },
        default_limit: config.default_limit,
    };
    let adj = adjudicator::from_env();
    let outcome = planner.plan(question, adj.as_ref(), &ctx);
    let a = outcome.audit;
    let planned = match outcome.result {
        Ok(p) => p,
        Err(f) => {
            let alternatives = match &f.error {
                PlanError::UngroundedPhrase { alternatives, .. } => json!(alternatives),
                _ => json!([]),
            };
            return Err(Failure::User(json!({
                "error": "planner",
                "stage": f.stage,
                "kind": f.error.kind(),
                "message": f.error.to_string(),
                "detail": f.error,
                "alternatives": alternatives,
            })));
        }
    };
    // latency is left out so identical runs print identical bytes
    let mut v = json!({
        "graph_id": a.graph_id,
        "graph_version": a.graph_version,
        "question": a.question,
        "clock": ctx.clock,
        "dry_run": !execute,
        "sketch": a.sketch,
        "tables": a.tables,
        "join_path": a.join_path,
        "groundings": a.groundings,
        "suppressed": a.suppressed,
        "rules_fired": a.rules_fired,
        "table_fallback": a.table_fallback,
        "rewrite_applied": a.rewrite_applied,
        "rewrite_rejected": a.rewrite_rejected,
        "sql": planned.sql,
        "tree": planned.tree,
        "transcript": a.transcript,
    });
    if let Some(ad) = adapter {
        let rs = ad.execute(&planned.sql).map_err(Failure::system)?;
        v["result"] = json!(rs);
    }
    Ok(v)
}

fn parse_target(target: &str) -> Value {
    match target.split_once('.') {
        _ if target == "graph" => json!({ "scope": "graph" }),
        Some((t, c)) => json!({ "scope": "column", "table": t, "column": c }),
        None => json!({ "scope": "table", "table": target }),
    }
}

fn annotate(
    graph: &Path,
    kind: &str,
    payload: &str,
    target: &str,
    author: String,
    clock: Option<DateTime<Utc>>,
    out: Option<PathBuf>,
) -> Outcome {
    let g = load_graph(graph)?;
    let payload: Value = serde_json::from_str(payload).map_err(|e| Failure::user("payload", e))?;
    let raw = json!({
        "target": parse_target(target),
        "kind": kind,
        "payload": payload,
        "author": author,
        "created_at": clock.unwrap_or_else(Utc::now),
    });
    let ann: Annotation = serde_json::from_value(raw).map_err(|e| Failure::user("annotation", e))?;
    let next = apply_annotation(&g, ann).map_err(|e| Failure::user("annotation", e))?;
    let path = out.unwrap_or_else(|| graph.to_path_buf());
    write_atomic(&path, &serialize_graph(&next).map_err(Failure::system)?)?;
    Ok(json!({ "graph_id": next.graph_id, "version": next.version, "out": path }))
}

fn eval(config: &Config, graph: &Path, corpus: &Path, clock: Option<DateTime<Utc>>) -> Outcome {
    let planner = Planner::new(load_graph(graph)?);
    let entries = read_corpus(corpus).map_err(|e| match e {
        EvalError::Io(_) => Failure::system(e),
        other => Failure::user("corpus", other),
    })?;
    let mut ctx = PlanContext::new(clock.unwrap_or_else(Utc::now), "eval");
    ctx.dialect = config.dialect;
    ctx.default_limit = config.default_limit;
    let adj = adjudicator::from_env();
    let report = run_corpus(&entries, &planner, adj.as_ref(), &ctx);
    serde_json::to_value(report).map_err(Failure::system)
}

fn serve(mut config: Config, addr: Option<String>) -> Outcome {
    if let Some(a) = addr {
        config.addr = a;
    }
    let socket = config.socket_addr()?;
    let state = ctxsql_service::AppState::from_config(config).map_err(Failure::system)?;
    let rt = tokio::runtime::Runtime::new().map_err(Failure::system)?;
    rt.block_on(ctxsql_service::serve(Arc::new(state), socket)).map_err(Failure::system)?;
    Ok(json!({ "stopped": socket.to_string() }))
}
