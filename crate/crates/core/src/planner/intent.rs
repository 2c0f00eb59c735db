//! Rule-based question parser.
//!
//! Shape: `[agg-word] SELECT [by GROUP] [with|where FILTER] [time] [top N]`,
//! with the clause pieces allowed in any order after the select phrase.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use chrono::{Datelike, Duration, Months, NaiveDate};
use regex::Regex;

use super::index::{date_heads, indexes_values, table_name_stems};
use super::sketch::{AggFunc, Comparator, Direction, FilterTerm, Literal, OrderTerm, QuerySketch, SelectTerm, TimeWindow};
use crate::model::{ContextGraph, GraphRules};
use crate::text::{is_stopword, split_words, stem};

/// Upper bound on generated sample questions per graph.
pub const SAMPLE_LIBRARY_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Num { value: f64, raw: String },
    Money(f64),
    Date(NaiveDate),
    Quoted(String),
    Sym(String),
}

impl Tok {
    fn word(&self) -> Option<&str> {
        match self {
            Tok::Word(w) => Some(w),
            _ => None,
        }
    }

    fn is(&self, w: &str) -> bool {
        self.word() == Some(w)
    }

    fn year(&self) -> Option<i32> {
        match self {
            Tok::Num { value, raw } if raw.len() == 4 && raw.chars().all(|c| c.is_ascii_digit()) => {
                let y = *value as i32;
                (1900..=2100).contains(&y).then_some(y)
            }
            _ => None,
        }
    }

    fn literal(&self) -> Option<Literal> {
        match self {
            Tok::Num { value, .. } => Some(Literal::Number(*value)),
            Tok::Money(v) => Some(Literal::Money(*v)),
            Tok::Date(d) => Some(Literal::Date(*d)),
            Tok::Quoted(s) => Some(Literal::Text(s.clone())),
            _ => None,
        }
    }
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"(?x)
            (?P<date>\d{4}-\d{2}-\d{2})
          | (?P<money>\$\s?\d[\d,]*(?:\.\d+)?)
          | (?P<num>\d[\d,]*(?:\.\d+)?)
          | '(?P<sq>[^']*)'
          | "(?P<dq>[^"]*)"
          | (?P<sym>[<>]=?|!=|=)
          | (?P<word>[A-Za-z][A-Za-z0-9_]*(?:'[A-Za-z]+)?)
            "#,
        )
        .expect("token pattern")
    })
}

fn parse_number(raw: &str) -> Option<f64> {
    raw.trim_start_matches('$').trim().replace(',', "").parse().ok()
}

fn tokenize(q: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    for cap in token_re().captures_iter(q) {
        if let Some(m) = cap.name("date") {
            match NaiveDate::parse_from_str(m.as_str(), "%Y-%m-%d") {
                Ok(d) => out.push(Tok::Date(d)),
                Err(_) => out.push(Tok::Quoted(m.as_str().to_string())),
            }
        } else if let Some(m) = cap.name("money") {
            if let Some(v) = parse_number(m.as_str()) {
                out.push(Tok::Money(v));
            }
        } else if let Some(m) = cap.name("num") {
            if let Some(v) = parse_number(m.as_str()) {
                out.push(Tok::Num { value: v, raw: m.as_str().to_string() });
            }
        } else if let Some(m) = cap.name("sq").or_else(|| cap.name("dq")) {
            out.push(Tok::Quoted(m.as_str().to_string()));
        } else if let Some(m) = cap.name("sym") {
            out.push(Tok::Sym(m.as_str().to_string()));
        } else if let Some(m) = cap.name("word") {
            out.push(Tok::Word(m.as_str().to_lowercase()));
        }
    }
    out
}

/// Graph vocabulary consulted by the grammar.
struct Vocab {
    table_words: BTreeSet<String>,
    table_heads: BTreeSet<String>,
    date_heads: BTreeSet<String>,
    /// (lowercase words, canonical value), longest first.
    values: Vec<(Vec<String>, String)>,
}

impl Vocab {
    fn of(graph: &ContextGraph, rules: &GraphRules) -> Self {
        let mut table_words = BTreeSet::new();
        let mut table_heads = BTreeSet::new();
        let mut date = BTreeSet::new();
        let mut values = Vec::new();
        for t in &graph.tables {
            table_words.extend(table_name_stems(t, rules));
            if let Some(h) = split_words(&t.table_id).last() {
                table_heads.insert(stem(h));
            }
            for c in t.columns.iter().filter(|c| !c.pii) {
                if c.data_type.is_temporal() {
                    date.extend(date_heads(c));
                }
                if indexes_values(c) {
                    for v in c.sample_values.iter().filter_map(|v| v.as_str()) {
                        let words = split_words(v);
                        if !words.is_empty() && !values.iter().any(|(w, _)| *w == words) {
                            values.push((words, v.to_string()));
                        }
                    }
                }
            }
        }
        values.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        Vocab { table_words, table_heads, date_heads: date, values }
    }

    fn is_table_word(&self, w: &str) -> bool {
        self.table_words.contains(&stem(w))
    }

    /// Sample value spelled by the words at `toks[i..]`, with its length.
    fn value_at(&self, toks: &[Tok], i: usize) -> Option<(usize, String)> {
        self.values.iter().find_map(|(words, canon)| {
            let n = words.len();
            (i + n <= toks.len() && toks[i..i + n].iter().zip(words).all(|(t, w)| t.is(w))).then(|| (n, canon.clone()))
        })
    }
}

fn agg_word(toks: &[Tok], i: usize) -> Option<(AggFunc, usize)> {
    let w = toks.get(i)?.word()?;
    let next = toks.get(i + 1).and_then(Tok::word);
    let (f, mut n) = match w {
        "total" | "sum" => (AggFunc::Sum, 1),
        "average" | "avg" | "mean" => (AggFunc::Avg, 1),
        "count" | "number" => (AggFunc::Count, 1),
        "how" if next == Some("many") => (AggFunc::Count, 2),
        "maximum" | "max" | "highest" | "largest" | "biggest" => (AggFunc::Max, 1),
        "minimum" | "min" | "lowest" | "smallest" => (AggFunc::Min, 1),
        _ => return None,
    };
    while toks.get(i + n).is_some_and(|t| t.is("of") || t.is("the")) {
        n += 1;
    }
    Some((f, n))
}

const COMPARATORS: &[(&[&str], Comparator)] = &[
    (&["no", "less", "than"], Comparator::Ge),
    (&["no", "more", "than"], Comparator::Le),
    (&["greater", "than", "or", "equal", "to"], Comparator::Ge),
    (&["less", "than", "or", "equal", "to"], Comparator::Le),
    (&["more", "than"], Comparator::Gt),
    (&["greater", "than"], Comparator::Gt),
    (&["larger", "than"], Comparator::Gt),
    (&["higher", "than"], Comparator::Gt),
    (&["at", "least"], Comparator::Ge),
    (&["less", "than"], Comparator::Lt),
    (&["fewer", "than"], Comparator::Lt),
    (&["lower", "than"], Comparator::Lt),
    (&["smaller", "than"], Comparator::Lt),
    (&["at", "most"], Comparator::Le),
    (&["equal", "to"], Comparator::Eq),
    (&["other", "than"], Comparator::Ne),
    (&["exceeding"], Comparator::Gt),
    (&["exceeds"], Comparator::Gt),
    (&["exceed"], Comparator::Gt),
    (&["over"], Comparator::Gt),
    (&["above"], Comparator::Gt),
    (&["under"], Comparator::Lt),
    (&["below"], Comparator::Lt),
    (&["equals"], Comparator::Eq),
];

/// Comparator starting at `i` that is followed by a literal.
fn comparator_at(toks: &[Tok], i: usize) -> Option<(Comparator, usize)> {
    if let Some(Tok::Sym(s)) = toks.get(i) {
        let c = match s.as_str() {
            ">" => Comparator::Gt,
            ">=" => Comparator::Ge,
            "<" => Comparator::Lt,
            "<=" => Comparator::Le,
            "=" => Comparator::Eq,
            _ => Comparator::Ne,
        };
        return Some((c, 1));
    }
    COMPARATORS.iter().find_map(|(words, c)| {
        let n = words.len();
        let hit = i + n <= toks.len()
            && toks[i..i + n].iter().zip(words.iter()).all(|(t, w)| t.is(w))
            && toks.get(i + n).is_some_and(|t| t.literal().is_some());
        hit.then_some((*c, n))
    })
}

const UNIT_WORDS: &[&str] = &["days", "day", "months", "month", "years", "year", "weeks", "week", "percent"];
const MONEY_WORDS: &[&str] = &["dollars", "dollar", "usd"];

fn first_of_month(y: i32, m: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, 1).expect("valid month")
}

fn year_range(y: i32) -> (NaiveDate, NaiveDate) {
    (first_of_month(y, 1), NaiveDate::from_ymd_opt(y, 12, 31).expect("valid date"))
}

fn quarter_start(d: NaiveDate) -> NaiveDate {
    first_of_month(d.year(), (d.month0() / 3) * 3 + 1)
}

/// Matches a time phrase at `i`: (window, tokens consumed).
fn time_at(toks: &[Tok], i: usize, clock: NaiveDate) -> Option<(TimeWindow, usize)> {
    let w = |k: usize| toks.get(i + k).and_then(Tok::word);
    let mk = |label: String, start: Option<NaiveDate>, end: Option<NaiveDate>| TimeWindow { anchor: None, label, start, end };
    let day = Duration::days(1);
    match w(0) {
        Some("last" | "previous" | "past" | "prior") => {
            if let Some(n) = toks.get(i + 1).and_then(|t| match t {
                Tok::Num { value, .. } if *value >= 1.0 && value.fract() == 0.0 => Some(*value as i64),
                _ => None,
            }) {
                let unit = w(2)?;
                let start = match unit {
                    "days" | "day" => clock - Duration::days(n),
                    "weeks" | "week" => clock - Duration::days(7 * n),
                    "months" | "month" => clock.checked_sub_months(Months::new(n as u32))?,
                    "years" | "year" => clock.checked_sub_months(Months::new(12 * n as u32))?,
                    _ => return None,
                };
                return Some((mk(format!("last {n} {unit}"), Some(start), Some(clock)), 3));
            }
            let (start, end) = match w(1)? {
                "quarter" => {
                    let this = quarter_start(clock);
                    let s = this.checked_sub_months(Months::new(3))?;
                    (s, this - day)
                }
                "year" => year_range(clock.year() - 1),
                "month" => {
                    let this = first_of_month(clock.year(), clock.month());
                    (this.checked_sub_months(Months::new(1))?, this - day)
                }
                "week" => {
                    let monday = clock - Duration::days(clock.weekday().num_days_from_monday() as i64);
                    (monday - Duration::days(7), monday - day)
                }
                _ => return None,
            };
            Some((mk(format!("last {}", w(1)?), Some(start), Some(end)), 2))
        }
        Some("this" | "current") => {
            let start = match w(1)? {
                "year" => first_of_month(clock.year(), 1),
                "quarter" => quarter_start(clock),
                "month" => first_of_month(clock.year(), clock.month()),
                _ => return None,
            };
            Some((mk(format!("this {}", w(1)?), Some(start), Some(clock)), 2))
        }
        Some("in" | "during") => {
            let y = toks.get(i + 1)?.year()?;
            let (s, e) = year_range(y);
            Some((mk(format!("in {y}"), Some(s), Some(e)), 2))
        }
        Some("since" | "after" | "before") => {
            let t = toks.get(i + 1)?;
            let (lo, hi) = match t {
                Tok::Date(d) => (*d, *d),
                _ => year_range(t.year()?),
            };
            let word = w(0)?;
            let label = format!("{word} {}", if let Tok::Date(d) = t { d.to_string() } else { lo.year().to_string() });
            let win = match word {
                "since" => mk(label, Some(lo), Some(clock)),
                "after" => mk(label, Some(hi + day), None),
                _ => mk(label, None, Some(lo - day)),
            };
            Some((win, 2))
        }
        Some("between") => {
            let a = toks.get(i + 1)?;
            if !toks.get(i + 2)?.is("and") {
                return None;
            }
            let b = toks.get(i + 3)?;
            let lo = match a {
                Tok::Date(d) => *d,
                _ => year_range(a.year()?).0,
            };
            let hi = match b {
                Tok::Date(d) => *d,
                _ => year_range(b.year()?).1,
            };
            Some((mk(format!("between {lo} and {hi}"), Some(lo), Some(hi)), 4))
        }
        Some("on") => match toks.get(i + 1)? {
            Tok::Date(d) => Some((mk(format!("on {d}"), Some(*d), Some(*d)), 2)),
            _ => None,
        },
        _ => None,
    }
}

const TIME_PREFIX: &[&str] = &["in", "during", "over", "for", "within", "the"];

/// Removes the first time phrase; returns it with the index where it began.
fn take_time(toks: &mut Vec<Tok>, clock: NaiveDate, vocab: &Vocab) -> Option<TimeWindow> {
    let (mut start, (mut win, n)) = (0..toks.len()).find_map(|i| time_at(toks, i, clock).map(|m| (i, m)))?;
    let end = start + n;
    while start > 0 && toks[start - 1].word().is_some_and(|w| TIME_PREFIX.contains(&w)) {
        start -= 1;
    }
    toks.drain(start..end);
    // nearest preceding date-column head names the anchor
    if let Some(j) = (0..start).rev().find(|&j| toks[j].word().is_some_and(|w| vocab.date_heads.contains(&stem(w)))) {
        let w = toks[j].word().unwrap_or_default().to_string();
        win.anchor = Some(format!("{w} date"));
        if !vocab.is_table_word(&w) {
            toks.remove(j);
        }
    }
    Some(win)
}

fn take_limit(toks: &mut Vec<Tok>) -> Option<(u64, Direction, bool)> {
    for i in 0..toks.len() {
        let Some(w) = toks[i].word() else { continue };
        if !matches!(w, "top" | "first" | "bottom" | "limit") {
            continue;
        }
        if let Some(Tok::Num { value, .. }) = toks.get(i + 1) {
            if *value >= 1.0 && value.fract() == 0.0 {
                let dir = if w == "bottom" { Direction::Asc } else { Direction::Desc };
                let ranked = w != "limit";
                let n = *value as u64;
                toks.drain(i..i + 2);
                return Some((n, dir, ranked));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Seg {
    Select,
    Group,
    Filter,
    Order,
}

fn marker_at(toks: &[Tok], i: usize) -> Option<(Seg, usize)> {
    let w = toks[i].word()?;
    let next = toks.get(i + 1).and_then(Tok::word);
    let next2 = toks.get(i + 2).and_then(Tok::word);
    Some(match (w, next, next2) {
        ("for", Some("each"), _) => (Seg::Group, 2),
        ("grouped", Some("by"), _) => (Seg::Group, 2),
        ("broken", Some("down"), Some("by")) => (Seg::Group, 3),
        ("ordered" | "sorted" | "order" | "sort", Some("by"), _) => (Seg::Order, 2),
        ("by" | "per", _, _) => (Seg::Group, 1),
        ("with" | "where" | "having" | "whose" | "that" | "which" | "who" | "have" | "has", _, _) => (Seg::Filter, 1),
        _ => return None,
    })
}

fn segments(toks: &[Tok]) -> Vec<(Seg, Vec<Tok>)> {
    let mut out = vec![(Seg::Select, Vec::new())];
    let mut i = 0;
    while i < toks.len() {
        if let Some((kind, n)) = marker_at(toks, i) {
            out.push((kind, Vec::new()));
            i += n;
            continue;
        }
        out.last_mut().expect("non-empty").1.push(toks[i].clone());
        i += 1;
    }
    out
}

/// Splits on "and", except inside `between X and Y`.
fn parts(toks: &[Tok]) -> Vec<Vec<Tok>> {
    let mut out = vec![Vec::new()];
    for (i, t) in toks.iter().enumerate() {
        let in_between = i >= 2 && toks[i - 2].is("between");
        if t.is("and") && !in_between {
            out.push(Vec::new());
        } else {
            out.last_mut().expect("non-empty").push(t.clone());
        }
    }
    out.retain(|p| !p.is_empty());
    out
}

fn phrase(toks: &[Tok]) -> String {
    toks.iter().filter_map(Tok::word).collect::<Vec<_>>().join(" ")
}

fn has_content(toks: &[Tok]) -> bool {
    toks.iter().filter_map(Tok::word).any(|w| !is_stopword(w))
}

/// Drops a trailing `for|of|in <table words>` qualifier.
fn strip_qualifier(toks: &mut Vec<Tok>, vocab: &Vocab) {
    let cut = (1..toks.len()).find(|&k| {
        toks[k].word().is_some_and(|w| matches!(w, "for" | "of" | "in"))
            && toks[k + 1..].iter().filter_map(Tok::word).filter(|w| *w != "the" && *w != "all").all(|w| vocab.is_table_word(w))
            && toks[k + 1..].iter().any(|t| t.word().is_some_and(|w| vocab.is_table_word(w)))
            && toks[k + 1..].iter().all(|t| t.word().is_some())
    });
    if let Some(k) = cut {
        toks.truncate(k);
    }
}

fn leading_agg(toks: &mut Vec<Tok>) -> Option<AggFunc> {
    let (f, n) = agg_word(toks, 0)?;
    toks.drain(..n);
    Some(f)
}

/// Filters from one clause part.
fn parse_filter(part: &[Tok], vocab: &Vocab) -> Vec<FilterTerm> {
    let toks: Vec<Tok> = part.iter().filter(|t| !(t.is("is") || t.is("are") || t.is("was") || t.is("were"))).cloned().collect();

    if let Some(b) = toks.iter().position(|t| t.is("between")) {
        if let (Some(lo), Some(true), Some(hi)) =
            (toks.get(b + 1).and_then(Tok::literal), toks.get(b + 2).map(|t| t.is("and")), toks.get(b + 3).and_then(Tok::literal))
        {
            let mut rest = toks[..b].to_vec();
            rest.extend_from_slice(&toks[(b + 4).min(toks.len())..]);
            let p = phrase(&rest);
            return vec![
                FilterTerm { phrase: p.clone(), comparator: Comparator::Ge, literal: Some(lo) },
                FilterTerm { phrase: p, comparator: Comparator::Le, literal: Some(hi) },
            ];
        }
    }

    for i in 0..toks.len() {
        if let Some((cmp, n)) = comparator_at(&toks, i) {
            let mut lit = toks[i + n].literal().expect("comparator_at checks the literal");
            let mut words: Vec<Tok> = toks[..i].to_vec();
            for t in &toks[i + n + 1..] {
                match t.word() {
                    Some(w) if MONEY_WORDS.contains(&w) => {
                        if let Literal::Number(v) = lit {
                            lit = Literal::Money(v);
                        }
                    }
                    Some(_) => words.push(t.clone()),
                    None => {}
                }
            }
            return vec![FilterTerm { phrase: phrase(&words), comparator: cmp, literal: Some(lit) }];
        }
    }

    let negated = toks.iter().any(|t| t.is("not") || t.is("excluding"));
    let comparator = if negated { Comparator::Ne } else { Comparator::Eq };
    let toks: Vec<Tok> = toks.into_iter().filter(|t| !(t.is("not") || t.is("excluding"))).collect();
    for i in 0..toks.len() {
        if let Some((n, value)) = vocab.value_at(&toks, i) {
            let mut rest = toks[..i].to_vec();
            rest.extend_from_slice(&toks[i + n..]);
            return vec![FilterTerm { phrase: phrase(&rest), comparator, literal: Some(Literal::Text(value)) }];
        }
    }
    if let Some(i) = toks.iter().position(|t| t.literal().is_some()) {
        let lit = toks[i].literal().expect("checked");
        let mut rest = toks[..i].to_vec();
        rest.extend(toks[i + 1..].iter().filter(|t| t.word().is_some_and(|w| !UNIT_WORDS.contains(&w))).cloned());
        return vec![FilterTerm { phrase: phrase(&rest), comparator, literal: Some(lit) }];
    }
    if !has_content(&toks) {
        return Vec::new();
    }
    vec![FilterTerm { phrase: phrase(&toks), comparator: Comparator::Exists, literal: None }]
}

const LEAD_WORDS: &[&str] = &[
    "which", "what", "list", "show", "find", "display", "give", "get", "me", "all", "the", "please", "are", "is",
    "return", "tell", "us", "retrieve", "fetch", "who", "whats", "what's",
];

/// Parses with the built-in grammar. Never fails: input with no select phrase
/// falls back to the whole question as one select term.
pub fn parse_question(question: &str, graph: &ContextGraph, rules: &GraphRules, clock: NaiveDate) -> QuerySketch {
    let vocab = Vocab::of(graph, rules);
    if let Some(s) = sample_library(graph).into_iter().find(|(q, _)| *q == normalize_question(question)).map(|(_, s)| s) {
        return s;
    }
    let mut toks = tokenize(question);
    let limit = take_limit(&mut toks);
    let time_window = take_time(&mut toks, clock, &vocab);
    while toks.first().and_then(Tok::word).is_some_and(|w| LEAD_WORDS.contains(&w)) {
        toks.remove(0);
    }

    let mut sketch = QuerySketch {
        select_terms: Vec::new(),
        group_terms: Vec::new(),
        filter_terms: Vec::new(),
        time_window,
        order_term: None,
        limit: limit.map(|l| l.0),
        wants_aggregate: false,
    };

    let segs = segments(&toks);
    for (kind, seg) in &segs {
        match kind {
            Seg::Select => {
                for mut part in parts(seg) {
                    let agg = leading_agg(&mut part);
                    strip_qualifier(&mut part, &vocab);
                    parse_select_part(part, agg, &vocab, &mut sketch);
                }
            }
            Seg::Group => {
                for mut part in parts(seg) {
                    strip_qualifier(&mut part, &vocab);
                    let agg = leading_agg(&mut part);
                    if !has_content(&part) {
                        continue;
                    }
                    let p = phrase(&part);
                    match (agg, limit) {
                        (Some(f), _) => {
                            let dir = limit.map(|l| l.1).unwrap_or(Direction::Desc);
                            sketch.order_term = Some(OrderTerm { phrase: p.clone(), agg: Some(f), direction: dir });
                            sketch.select_terms.push(SelectTerm { phrase: p, agg: Some(f) });
                            let entities: Vec<String> =
                                sketch.select_terms.iter().filter(|s| s.agg.is_none()).map(|s| s.phrase.clone()).collect();
                            sketch.group_terms.extend(entities);
                        }
                        (None, Some((_, dir, true))) => {
                            sketch.order_term = Some(OrderTerm { phrase: p, agg: None, direction: dir });
                        }
                        _ => sketch.group_terms.push(p),
                    }
                }
            }
            Seg::Filter => {
                for part in parts(seg) {
                    sketch.filter_terms.extend(parse_filter(&part, &vocab));
                }
            }
            Seg::Order => {
                for mut part in parts(seg) {
                    let desc = part.iter().any(|t| t.is("desc") || t.is("descending"));
                    part.retain(|t| !matches!(t.word(), Some("desc" | "descending" | "asc" | "ascending")));
                    let agg = leading_agg(&mut part);
                    if has_content(&part) {
                        let dir = if desc || limit.is_some_and(|l| l.1 == Direction::Desc) { Direction::Desc } else { Direction::Asc };
                        sketch.order_term = Some(OrderTerm { phrase: phrase(&part), agg, direction: dir });
                    }
                }
            }
        }
    }

    if sketch.select_terms.is_empty() {
        let mut fb = QuerySketch::fallback(question);
        fb.time_window = sketch.time_window.take();
        fb.limit = sketch.limit;
        fb.filter_terms = std::mem::take(&mut sketch.filter_terms);
        return fb;
    }
    sketch.group_terms.dedup();
    sketch.wants_aggregate = sketch.select_terms.iter().any(|s| s.agg.is_some()) || !sketch.group_terms.is_empty();
    sketch
}

fn parse_select_part(mut part: Vec<Tok>, agg: Option<AggFunc>, vocab: &Vocab, sketch: &mut QuerySketch) {
    // "loans exceeding $10,000", "loans delinquent more than 30 days"
    if let Some(i) = (0..part.len()).find(|&i| comparator_at(&part, i).is_some()) {
        let subject = part[..i].to_vec();
        let head_len = subject.iter().position(|t| !t.word().is_some_and(|w| vocab.table_heads.contains(&stem(w)))).unwrap_or(subject.len());
        let (select, filter_subject) = if head_len > 0 && head_len < subject.len() {
            (subject[..head_len].to_vec(), subject[head_len..].to_vec())
        } else {
            (subject.clone(), subject.clone())
        };
        let mut filter_toks = filter_subject;
        filter_toks.extend_from_slice(&part[i..]);
        sketch.filter_terms.extend(parse_filter(&filter_toks, vocab));
        part = select;
    }
    // "Auto loans": a leading sample value becomes an equality filter
    for i in 0..part.len() {
        if let Some((n, value)) = vocab.value_at(&part, i) {
            let mut rest = part[..i].to_vec();
            rest.extend_from_slice(&part[i + n..]);
            if has_content(&rest) {
                sketch.filter_terms.push(FilterTerm { phrase: String::new(), comparator: Comparator::Eq, literal: Some(Literal::Text(value)) });
                part = rest;
            }
            break;
        }
    }
    if has_content(&part) || agg.is_some() {
        let p = phrase(&part);
        if !p.is_empty() {
            sketch.select_terms.push(SelectTerm { phrase: p, agg });
        }
    }
}

fn normalize_question(q: &str) -> String {
    tokenize(q).iter().filter_map(|t| t.word().map(str::to_string)).collect::<Vec<_>>().join(" ")
}

/// Generated (question, sketch) pairs: one per measure x dimension pair in
/// the same table, capped at [`SAMPLE_LIBRARY_CAP`].
pub fn sample_library(graph: &ContextGraph) -> Vec<(String, QuerySketch)> {
    let mut out = Vec::new();
    for t in &graph.tables {
        let measures = t.columns.iter().filter(|c| !c.pii && c.role == crate::model::ColumnRole::Measure);
        for m in measures {
            for d in t.columns.iter().filter(|c| indexes_values(c)) {
                if out.len() >= SAMPLE_LIBRARY_CAP {
                    return out;
                }
                let mp = m.display_name.to_lowercase();
                let dp = d.display_name.to_lowercase();
                let q = normalize_question(&format!("total {mp} by {dp}"));
                let sketch = QuerySketch {
                    select_terms: vec![SelectTerm { phrase: mp, agg: Some(AggFunc::Sum) }],
                    group_terms: vec![dp],
                    filter_terms: Vec::new(),
                    time_window: None,
                    order_term: None,
                    limit: None,
                    wants_aggregate: true,
                };
                out.push((q, sketch));
            }
        }
    }
    out
}
