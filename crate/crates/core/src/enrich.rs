//! Column roles, readable names, descriptions, PII flags, aliases and
//! generated measures.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::model::{
    Annotation, AnnotationPayload, AnnotationTarget, ColumnMeta, ColumnRole, ContextGraph, MAX_ALIAS_LEN,
};
use crate::profile::ColumnStats;
use crate::text::{split_words, stem};
use crate::value::{DataType, Value};

const ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");
const PII_TERMS: &str = include_str!("../data/pii_terms.txt");
const MEASURE_TERMS: &str = include_str!("../data/measure_terms.txt");

/// Word lists driving enrichment. The bundled lists can be extended from
/// files in the same line formats.
#[derive(Debug, Clone)]
pub struct Lexicons {
    pub abbreviations: BTreeMap<String, String>,
    /// Each term as its underscore-separated words.
    pub pii_terms: Vec<Vec<String>>,
    pub measure_terms: BTreeSet<String>,
}

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

impl Lexicons {
    pub fn bundled() -> &'static Lexicons {
        static LEX: OnceLock<Lexicons> = OnceLock::new();
        LEX.get_or_init(|| {
            let mut l = Lexicons { abbreviations: BTreeMap::new(), pii_terms: Vec::new(), measure_terms: BTreeSet::new() };
            l.add_abbreviations(ABBREVIATIONS);
            l.add_pii_terms(PII_TERMS);
            l.measure_terms.extend(data_lines(MEASURE_TERMS).map(str::to_lowercase));
            l
        })
    }

    pub fn add_abbreviations(&mut self, text: &str) {
        for line in data_lines(text) {
            if let Some((k, v)) = line.split_once('=') {
                self.abbreviations.insert(k.trim().to_lowercase(), v.trim().to_string());
            }
        }
    }

    pub fn add_pii_terms(&mut self, text: &str) {
        for line in data_lines(text) {
            let words = split_words(line);
            if !words.is_empty() && !self.pii_terms.contains(&words) {
                self.pii_terms.push(words);
            }
        }
    }

    /// Bundled lists plus optional user files.
    pub fn with_files(abbrev: Option<&Path>, pii: Option<&Path>) -> std::io::Result<Lexicons> {
        let mut l = Lexicons::bundled().clone();
        if let Some(p) = abbrev {
            l.add_abbreviations(&std::fs::read_to_string(p)?);
        }
        if let Some(p) = pii {
            l.add_pii_terms(&std::fs::read_to_string(p)?);
        }
        Ok(l)
    }
}

const NON_MEASURE_TOKENS: &[&str] = &["id", "code", "date", "dt", "key", "year", "month", "zip"];

/// Dimension or measure from type, key participation, name and cardinality.
pub fn classify_column(name: &str, data_type: DataType, stats: &ColumnStats, is_key_or_fk: bool, lex: &Lexicons) -> ColumnRole {
    if !data_type.is_numeric() || is_key_or_fk {
        return ColumnRole::Dimension;
    }
    let words = split_words(name);
    if words.iter().any(|w| NON_MEASURE_TOKENS.contains(&w.as_str())) {
        return ColumnRole::Dimension;
    }
    let ratio = if stats.sampled_rows == 0 { 0.0 } else { stats.distinct_count as f64 / stats.sampled_rows as f64 };
    let lexical = words.iter().any(|w| lex.measure_terms.contains(w) || lex.measure_terms.contains(&stem(w)));
    if ratio > 0.5 || lexical {
        ColumnRole::Measure
    } else {
        ColumnRole::Dimension
    }
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(f) => f.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Human-readable name: split, expand abbreviations, title-case.
pub fn expand_name(physical: &str, lex: &Lexicons) -> String {
    split_words(physical)
        .iter()
        .map(|w| match lex.abbreviations.get(w) {
            Some(exp) => exp.split_whitespace().map(title_case).collect::<Vec<_>>().join(" "),
            None => title_case(w),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn pii_patterns() -> &'static [Regex; 3] {
    static RE: OnceLock<[Regex; 3]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"^\d{3}-?\d{2}-?\d{4}$").expect("ssn pattern"),
            Regex::new(r"^[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}$").expect("email pattern"),
            Regex::new(r"^\+[1-9]\d{6,14}$").expect("phone pattern"),
        ]
    })
}

/// Share of non-null values shaped like an SSN, email or E.164 phone number.
pub fn pii_value_rate(values: &[Value]) -> f64 {
    let texts: Vec<String> = values.iter().filter(|v| !v.is_null()).map(|v| v.to_string()).collect();
    if texts.is_empty() {
        return 0.0;
    }
    let hits = texts.iter().filter(|t| pii_patterns().iter().any(|re| re.is_match(t))).count();
    hits as f64 / texts.len() as f64
}

pub fn name_is_pii(name: &str, lex: &Lexicons) -> bool {
    let words = split_words(name);
    lex.pii_terms.iter().any(|term| {
        if term.len() == 1 {
            words.iter().any(|w| w == &term[0] || stem(w) == stem(&term[0]))
        } else {
            words.windows(term.len()).any(|win| win == term.as_slice())
        }
    })
}

pub fn detect_pii(name: &str, stats: &ColumnStats, lex: &Lexicons) -> bool {
    name_is_pii(name, lex) || pii_value_rate(&stats.value_sample) >= 0.8
}

/// Compact lowercase alias: initials for multi-word names, else the first
/// four characters; numeric suffix on collision.
pub fn generate_alias(physical: &str, existing: &BTreeSet<String>) -> String {
    let words = split_words(physical);
    let mut base: String = if words.len() >= 2 {
        words.iter().filter_map(|w| w.chars().next()).collect()
    } else {
        words.first().map(|w| w.chars().take(4).collect()).unwrap_or_else(|| "t".to_string())
    };
    base = base.to_lowercase();
    if base.is_empty() || !base.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
        base = format!("t{base}");
    }
    base.truncate(MAX_ALIAS_LEN - 4);
    if !existing.contains(&base) {
        return base;
    }
    (2..)
        .map(|n| format!("{base}{n}"))
        .find(|cand| !existing.contains(cand))
        .expect("unbounded suffix search")
}

/// Template description used when no provider refines it.
pub fn describe_column(col: &ColumnMeta, table_display: &str) -> String {
    let mut s = format!("{} of {}; type {}", col.display_name, table_display, col.data_type);
    if let Some(v) = col.sample_values.iter().find(|v| !v.is_null()) {
        s.push_str(&format!("; e.g. {v}"));
    }
    s
}

/// Generated SUM/AVG per measure column and a row count per table.
pub fn derive_custom_measures(graph: &ContextGraph) -> Vec<Annotation> {
    let mut out = Vec::new();
    let mk = |table: &str, name: String, expression: String| Annotation {
        target: AnnotationTarget::Table { table: table.to_string() },
        payload: AnnotationPayload::CustomMeasure { name, expression, source_table: table.to_string() },
        author: "system".to_string(),
        created_at: graph.built_at,
    };
    for t in &graph.tables {
        for c in t.columns.iter().filter(|c| c.role == ColumnRole::Measure && !c.pii) {
            out.push(mk(&t.table_id, format!("sum_{}", c.name), format!("SUM({})", c.name)));
            out.push(mk(&t.table_id, format!("avg_{}", c.name), format!("AVG({})", c.name)));
        }
        out.push(mk(&t.table_id, "row_count".to_string(), "COUNT(*)".to_string()));
    }
    out
}

/// Accepts a user-supplied measure iff it references only non-PII columns of
/// its source table.
pub fn validate_custom_measure(graph: &ContextGraph, ann: &Annotation) -> Result<(), crate::model::AnnotationError> {
    match &ann.payload {
        AnnotationPayload::CustomMeasure { expression, source_table, .. } => {
            crate::model::check_expression(graph, expression, source_table)
        }
        _ => Err(crate::model::AnnotationError::InvalidPayload("not a custom measure".into())),
    }
}
