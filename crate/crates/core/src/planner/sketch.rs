use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFunc {
    Sum,
    Avg,
    Count,
    Min,
    Max,
}

impl AggFunc {
    pub fn sql(self) -> &'static str {
        match self {
            AggFunc::Sum => "SUM",
            AggFunc::Avg => "AVG",
            AggFunc::Count => "COUNT",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "<>")]
    Ne,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    /// No comparison; the phrase names a state or an entity to include.
    #[serde(rename = "exists")]
    Exists,
}

impl Comparator {
    pub fn sql(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "<>",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Exists => "IS NOT NULL",
        }
    }

    pub fn is_ordering(self) -> bool {
        matches!(self, Comparator::Gt | Comparator::Ge | Comparator::Lt | Comparator::Le)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Literal {
    Number(f64),
    /// Currency amount; compares against decimal columns.
    Money(f64),
    Text(String),
    Date(NaiveDate),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(n) | Literal::Money(n) => write!(f, "{n}"),
            Literal::Text(s) => write!(f, "{s}"),
            Literal::Date(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectTerm {
    pub phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agg: Option<AggFunc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTerm {
    pub phrase: String,
    pub comparator: Comparator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub literal: Option<Literal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    /// Phrase naming the date column, e.g. "close date".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTerm {
    pub phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agg: Option<AggFunc>,
    pub direction: Direction,
}

/// Structured intent of a question, before grounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySketch {
    pub select_terms: Vec<SelectTerm>,
    #[serde(default)]
    pub group_terms: Vec<String>,
    #[serde(default)]
    pub filter_terms: Vec<FilterTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_window: Option<TimeWindow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_term: Option<OrderTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<u64>,
    #[serde(default)]
    pub wants_aggregate: bool,
}

impl QuerySketch {
    /// Whole-question fallback used when nothing parses.
    pub fn fallback(question: &str) -> Self {
        QuerySketch {
            select_terms: vec![SelectTerm { phrase: question.trim().to_string(), agg: None }],
            group_terms: Vec::new(),
            filter_terms: Vec::new(),
            time_window: None,
            order_term: None,
            limit: None,
            wants_aggregate: false,
        }
    }
}
