//! Maps sketch phrases onto columns, measures and tables.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::index::{column_forms, head_noun, table_forms};
use super::sketch::{AggFunc, Comparator, FilterTerm, Literal, QuerySketch, TimeWindow};
use crate::enrich::Lexicons;
use crate::model::{ColumnMeta, ColumnRef, ColumnRole, ContextGraph, GraphRules, MeasureDef, TableNode};
use crate::text::{jaccard, split_words, stem, stem_set};
use crate::value::DataType;

/// Scores below this leave a phrase ungrounded.
pub const GROUNDING_THRESHOLD: f64 = 0.3;
pub const SAMPLE_VALUE_SCORE: f64 = 0.8;
const MAX_ALTERNATIVES: usize = 3;

const PHRASE_STOP: &[&str] = &[
    "the", "a", "an", "of", "for", "in", "on", "at", "with", "by", "to", "all", "each", "any", "got", "get", "have",
    "has", "had", "is", "are", "was", "were", "be", "been", "that", "which", "who", "whose", "where", "there", "their",
    "its", "s",
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTarget {
    Column { table: String, column: String },
    Measure { table: String, name: String },
    Table { table: String },
}

impl GroundTarget {
    pub fn column(c: &ColumnRef) -> Self {
        GroundTarget::Column { table: c.table.clone(), column: c.column.clone() }
    }

    pub fn table(&self) -> &str {
        match self {
            GroundTarget::Column { table, .. } | GroundTarget::Measure { table, .. } | GroundTarget::Table { table } => table,
        }
    }

    pub fn as_column(&self) -> Option<ColumnRef> {
        match self {
            GroundTarget::Column { table, column } => Some(ColumnRef::new(table, column)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    ExactAlias,
    TokenOverlap,
    SampleValueHit,
    EntityMeasure,
    StateAdjective,
    TableName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermRole {
    Select,
    Group,
    Filter,
    Time,
    Order,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub target: GroundTarget,
    pub score: f64,
    pub basis: Basis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub role: TermRole,
    pub phrase: String,
    pub target: GroundTarget,
    pub score: f64,
    pub basis: Basis,
    #[serde(default)]
    pub alternatives: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agg: Option<AggFunc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparator: Option<Comparator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub literal: Option<Literal>,
}

/// Phrase withheld because its best match is a PII column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suppressed {
    pub role: TermRole,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedQuery {
    pub groundings: Vec<Grounding>,
    pub suppressed: Vec<Suppressed>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_window: Option<TimeWindow>,
}

impl GroundedQuery {
    pub fn by_role(&self, role: TermRole) -> impl Iterator<Item = &Grounding> {
        self.groundings.iter().filter(move |g| g.role == role)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundError {
    Ungrounded { phrase: String, alternatives: Vec<Candidate> },
}

/// Tie-break key: prioritization rank, then table order, then name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RankKey {
    /// Rank in a matching prioritization; unranked sorts last.
    pub priority: (bool, usize),
    pub table_pos: usize,
    pub name: String,
}

/// Index of the highest score; exact ties go to the smallest key. Depends
/// only on the order of scores, so positive rescaling never changes it.
pub fn select_best(scores: &[f64], keys: &[RankKey]) -> Option<usize> {
    (0..scores.len()).min_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| keys[a].cmp(&keys[b])))
}

/// Stemmed content words of a phrase.
pub fn phrase_stems(phrase: &str) -> BTreeSet<String> {
    split_words(phrase).iter().filter(|w| !PHRASE_STOP.contains(&w.as_str())).map(|w| stem(w)).collect()
}

fn form_score(p: &BTreeSet<String>, forms: &[BTreeSet<String>], qualifier: &BTreeSet<String>) -> (f64, Basis) {
    let pq: BTreeSet<String> = p.difference(qualifier).cloned().collect();
    let mut best = (0.0, Basis::TokenOverlap);
    for f in forms {
        let fq: BTreeSet<String> = f.difference(qualifier).cloned().collect();
        let fq = if fq.is_empty() { f.clone() } else { fq };
        let s = if p == f || (!pq.is_empty() && pq == fq) {
            (1.0, Basis::ExactAlias)
        } else {
            let a = jaccard(p, f);
            let b = if pq.is_empty() { 0.0 } else { jaccard(&pq, &fq) };
            (a.max(b), Basis::TokenOverlap)
        };
        if s.0 > best.0 {
            best = s;
        }
    }
    best
}

/// First measure column of a table, preferring lexicon measure words.
pub fn primary_measure(t: &TableNode) -> Option<&ColumnMeta> {
    let lex = Lexicons::bundled();
    let measures: Vec<&ColumnMeta> = t.columns.iter().filter(|c| !c.pii && c.role == ColumnRole::Measure).collect();
    measures
        .iter()
        .find(|c| split_words(&c.name).iter().any(|w| lex.measure_terms.contains(w)))
        .or_else(|| measures.first())
        .copied()
}

/// Name columns shown for a table reference.
pub fn name_columns(t: &TableNode) -> Vec<&ColumnMeta> {
    t.columns.iter().filter(|c| !c.pii && c.data_type == DataType::Text && split_words(&c.name).iter().any(|w| w == "name")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Want {
    /// Any column, table or measure.
    Any,
    /// Numeric value to sum or average.
    Numeric,
    /// Ordered value for MIN/MAX.
    Ordered,
    /// Group key.
    Group,
    Temporal,
    Literal(LitKind),
    Exists,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum LitKind {
    Number,
    Money,
    Text,
    Date,
}

fn lit_kind(l: &Literal) -> LitKind {
    match l {
        Literal::Number(_) => LitKind::Number,
        Literal::Money(_) => LitKind::Money,
        Literal::Text(_) => LitKind::Text,
        Literal::Date(_) => LitKind::Date,
    }
}

fn column_fits(c: &ColumnMeta, want: Want) -> bool {
    match want {
        Want::Any | Want::Group | Want::Exists => true,
        Want::Numeric => c.data_type.is_numeric(),
        Want::Ordered => c.data_type.is_numeric() || c.data_type.is_temporal(),
        Want::Temporal => c.data_type.is_temporal(),
        Want::Literal(LitKind::Number) => c.data_type.is_numeric(),
        Want::Literal(LitKind::Money) => c.data_type == DataType::Decimal,
        Want::Literal(LitKind::Text) => matches!(c.data_type, DataType::Text | DataType::Boolean),
        Want::Literal(LitKind::Date) => c.data_type.is_temporal(),
    }
}

struct Ctx<'a> {
    rules: &'a GraphRules,
    tables: Vec<&'a TableNode>,
    measures: Vec<&'a MeasureDef>,
}

struct Scored {
    cand: Candidate,
    key: RankKey,
}

impl<'a> Ctx<'a> {
    fn qualifier(&self, t: &TableNode) -> BTreeSet<String> {
        table_forms(t, self.rules).into_iter().flatten().collect()
    }

    fn key(&self, target: &GroundTarget, p: &BTreeSet<String>) -> RankKey {
        let table_pos = self.tables.iter().position(|t| t.table_id == target.table()).unwrap_or(usize::MAX);
        let (priority, name) = match target {
            GroundTarget::Column { table, column } => {
                let col = ColumnRef::new(table, column);
                let rank = self.rules.prioritization_for(&col, p).and_then(|r| r.rank_of(&col));
                (rank.map(|r| (false, r)).unwrap_or((true, 0)), column.clone())
            }
            GroundTarget::Measure { name, .. } => ((true, 0), name.clone()),
            GroundTarget::Table { table } => ((true, 0), table.clone()),
        };
        RankKey { priority, table_pos, name }
    }

    fn table_score(&self, t: &TableNode, p: &BTreeSet<String>) -> f64 {
        if p.is_empty() {
            return 0.0;
        }
        let forms = table_forms(t, self.rules);
        if forms.iter().any(|f| f == p) || head_noun(t).is_some_and(|h| p.len() == 1 && p.contains(&h)) {
            return 1.0;
        }
        forms.iter().map(|f| jaccard(p, f)).fold(0.0, f64::max)
    }

    /// Scores every fitting target. `pii` selects PII columns only.
    fn score_all(&self, p: &BTreeSet<String>, want: Want, literal: Option<&Literal>, pii: bool) -> Vec<Scored> {
        let mut out = Vec::new();
        for t in &self.tables {
            let q = self.qualifier(t);
            for c in t.columns.iter().filter(|c| c.pii == pii && column_fits(c, want)) {
                let (mut s, mut basis) = if p.is_empty() { (0.0, Basis::TokenOverlap) } else { form_score(p, &column_forms(c), &q) };
                if let Some(Literal::Text(v)) = literal {
                    if c.sample_values.iter().any(|sv| sv.as_str().is_some_and(|x| x.eq_ignore_ascii_case(v))) && s < SAMPLE_VALUE_SCORE {
                        s = SAMPLE_VALUE_SCORE;
                        basis = Basis::SampleValueHit;
                    }
                }
                if s > 0.0 {
                    let target = GroundTarget::column(&t.column_ref(&c.name));
                    out.push(Scored { key: self.key(&target, p), cand: Candidate { target, score: s, basis } });
                }
            }
            if pii {
                continue;
            }
            let ts = self.table_score(t, p);
            if ts > 0.0 {
                match want {
                    Want::Any | Want::Group | Want::Exists => {
                        let target = GroundTarget::Table { table: t.table_id.clone() };
                        out.push(Scored { key: self.key(&target, p), cand: Candidate { target, score: ts, basis: Basis::TableName } });
                    }
                    Want::Numeric | Want::Ordered | Want::Literal(LitKind::Number | LitKind::Money) => {
                        if let Some(m) = primary_measure(t).filter(|m| column_fits(m, want)) {
                            let target = GroundTarget::column(&t.column_ref(&m.name));
                            out.push(Scored {
                                key: self.key(&target, p),
                                cand: Candidate { target, score: ts, basis: Basis::EntityMeasure },
                            });
                        }
                    }
                    _ => {}
                }
            }
            if matches!(want, Want::Any | Want::Numeric | Want::Ordered) {
                for m in self.measures.iter().filter(|m| m.source_table == t.table_id) {
                    let (s, basis) = form_score(p, &[stem_set(&m.name)], &q);
                    if s > 0.0 {
                        let target = GroundTarget::Measure { table: t.table_id.clone(), name: m.name.clone() };
                        out.push(Scored { key: self.key(&target, p), cand: Candidate { target, score: s, basis } });
                    }
                }
            }
        }
        out
    }

    fn pick(&self, mut scored: Vec<Scored>) -> (Option<Candidate>, Vec<Candidate>) {
        let scores: Vec<f64> = scored.iter().map(|s| s.cand.score).collect();
        let keys: Vec<RankKey> = scored.iter().map(|s| s.key.clone()).collect();
        let Some(i) = select_best(&scores, &keys) else {
            return (None, Vec::new());
        };
        let best = scored.remove(i);
        scored.sort_by(|a, b| b.cand.score.total_cmp(&a.cand.score).then_with(|| a.key.cmp(&b.key)));
        let alts = scored.into_iter().take(MAX_ALTERNATIVES).map(|s| s.cand).collect();
        (Some(best.cand), alts)
    }

    /// Adjective columns for a word: date or integer columns named after it.
    fn adjective_columns(&self, word: &str) -> Vec<(ColumnRef, DataType)> {
        let mut out = Vec::new();
        for t in &self.tables {
            for c in t.columns.iter().filter(|c| !c.pii) {
                let first = split_words(&c.name).first().map(|w| stem(w));
                if first.as_deref() == Some(word) && (c.data_type.is_temporal() || c.data_type == DataType::Integer) {
                    out.push((t.column_ref(&c.name), c.data_type));
                }
            }
        }
        out
    }
}

enum Outcome {
    Found(Vec<Grounding>),
    Suppressed,
    Missing(Vec<Candidate>),
}

fn grounding(role: TermRole, phrase: &str, c: Candidate, alts: Vec<Candidate>) -> Grounding {
    Grounding {
        role,
        phrase: phrase.to_string(),
        target: c.target,
        score: c.score,
        basis: c.basis,
        alternatives: alts,
        agg: None,
        comparator: None,
        literal: None,
    }
}

fn resolve(ctx: &Ctx, role: TermRole, phrase: &str, want: Want, literal: Option<&Literal>) -> Outcome {
    let p = phrase_stems(phrase);
    let (best, alts) = ctx.pick(ctx.score_all(&p, want, literal, false));
    let pii_best = ctx.pick(ctx.score_all(&p, want, literal, true)).0;
    let best_score = best.as_ref().map(|b| b.score).unwrap_or(0.0);
    if pii_best.is_some_and(|pb| pb.score >= GROUNDING_THRESHOLD && pb.score > best_score) {
        return Outcome::Suppressed;
    }
    match best {
        Some(b) if b.score >= GROUNDING_THRESHOLD => Outcome::Found(vec![grounding(role, phrase, b, alts)]),
        Some(b) => {
            let mut all = vec![b];
            all.extend(alts);
            Outcome::Missing(all)
        }
        None => Outcome::Missing(Vec::new()),
    }
}

/// Splits "delinquent loans" into a state predicate on `delinquent_days` and
/// the residual phrase.
fn resolve_adjective(ctx: &Ctx, phrase: &str, residual_want: Want, literal: Option<&Literal>, comparator: Comparator) -> Option<Vec<Grounding>> {
    let words: Vec<String> = split_words(phrase).into_iter().filter(|w| !PHRASE_STOP.contains(&w.as_str())).collect();
    for (i, w) in words.iter().enumerate() {
        let cols = ctx.adjective_columns(&stem(w));
        let Some((col, ty)) = cols.into_iter().next() else { continue };
        let residual: Vec<&str> = words.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| s.as_str()).collect();
        let residual = residual.join(" ");
        let (cmp, lit) = if ty.is_temporal() { (Comparator::Exists, None) } else { (Comparator::Gt, Some(Literal::Number(0.0))) };
        let mut adj = grounding(
            TermRole::Filter,
            w,
            Candidate { target: GroundTarget::column(&col), score: 1.0, basis: Basis::StateAdjective },
            Vec::new(),
        );
        adj.comparator = Some(cmp);
        adj.literal = lit;
        let mut out = vec![adj];
        if !phrase_stems(&residual).is_empty() {
            match resolve(ctx, TermRole::Filter, &residual, residual_want, literal) {
                Outcome::Found(mut gs) => {
                    for g in &mut gs {
                        g.comparator = Some(comparator);
                        g.literal = literal.cloned();
                    }
                    out.extend(gs);
                }
                _ => continue,
            }
        } else if literal.is_some() {
            continue;
        }
        return Some(out);
    }
    None
}

fn ground_filter(ctx: &Ctx, f: &FilterTerm) -> Result<Outcome, GroundError> {
    let want = match &f.literal {
        Some(l) => Want::Literal(lit_kind(l)),
        None => Want::Exists,
    };
    let stamp = |mut gs: Vec<Grounding>| {
        for g in &mut gs {
            if g.comparator.is_none() {
                g.comparator = Some(f.comparator);
                g.literal = f.literal.clone();
            }
        }
        gs
    };
    let first = resolve(ctx, TermRole::Filter, &f.phrase, want, f.literal.as_ref());
    let missing = match first {
        Outcome::Found(gs) => {
            let partial_entity = matches!(gs[0].basis, Basis::TableName | Basis::EntityMeasure) && gs[0].score < 1.0;
            if !partial_entity {
                return Ok(Outcome::Found(stamp(gs)));
            }
            // "closed accounts", "delinquent loans": the adjective reading
            // explains the extra word
            match resolve_adjective(ctx, &f.phrase, want, f.literal.as_ref(), f.comparator) {
                Some(adj) => return Ok(Outcome::Found(stamp(adj))),
                None => return Ok(Outcome::Found(stamp(gs))),
            }
        }
        Outcome::Suppressed => return Ok(Outcome::Suppressed),
        Outcome::Missing(alts) => alts,
    };
    if let Some(adj) = resolve_adjective(ctx, &f.phrase, want, f.literal.as_ref(), f.comparator) {
        return Ok(Outcome::Found(stamp(adj)));
    }
    // a name match of the wrong type surfaces as a type mismatch later
    if f.literal.is_some() {
        if let Outcome::Found(gs) = resolve(ctx, TermRole::Filter, &f.phrase, Want::Any, None) {
            if matches!(gs[0].target, GroundTarget::Column { .. }) {
                return Ok(Outcome::Found(stamp(gs)));
            }
        }
    }
    Err(GroundError::Ungrounded { phrase: f.phrase.clone(), alternatives: missing })
}

/// Grounds every phrase of `sketch` against the selected tables.
pub fn ground_sketch(graph: &ContextGraph, rules: &GraphRules, tables: &[String], sketch: &QuerySketch) -> Result<GroundedQuery, GroundError> {
    let ctx = Ctx {
        rules,
        tables: tables.iter().filter_map(|t| graph.table(t)).collect(),
        measures: rules.measures.iter().filter(|m| tables.contains(&m.source_table)).collect(),
    };
    let mut out = GroundedQuery { groundings: Vec::new(), suppressed: Vec::new(), time_window: sketch.time_window.clone() };
    let push = |out: &mut GroundedQuery, role: TermRole, phrase: &str, o: Outcome| -> Result<Vec<usize>, GroundError> {
        match o {
            Outcome::Found(gs) => {
                let start = out.groundings.len();
                out.groundings.extend(gs);
                Ok((start..out.groundings.len()).collect())
            }
            // only a projection can be dropped without changing the answer
            Outcome::Suppressed if role == TermRole::Select => {
                out.suppressed.push(Suppressed { role, phrase: phrase.to_string() });
                Ok(Vec::new())
            }
            Outcome::Suppressed => Err(GroundError::Ungrounded { phrase: phrase.to_string(), alternatives: Vec::new() }),
            Outcome::Missing(alternatives) => Err(GroundError::Ungrounded { phrase: phrase.to_string(), alternatives }),
        }
    };

    for s in &sketch.select_terms {
        let want = match s.agg {
            Some(AggFunc::Sum | AggFunc::Avg) => Want::Numeric,
            Some(AggFunc::Min | AggFunc::Max) => Want::Ordered,
            Some(AggFunc::Count) | None => Want::Any,
        };
        let o = resolve(&ctx, TermRole::Select, &s.phrase, want, None);
        for i in push(&mut out, TermRole::Select, &s.phrase, o)? {
            out.groundings[i].agg = s.agg;
        }
    }
    for g in &sketch.group_terms {
        let o = resolve(&ctx, TermRole::Group, g, Want::Group, None);
        push(&mut out, TermRole::Group, g, o)?;
    }
    for f in &sketch.filter_terms {
        let o = ground_filter(&ctx, f)?;
        push(&mut out, TermRole::Filter, &f.phrase, o)?;
    }
    if let Some(w) = &sketch.time_window {
        let phrase = w.anchor.clone().unwrap_or_else(|| "date".to_string());
        let o = match resolve(&ctx, TermRole::Time, &phrase, Want::Temporal, None) {
            Outcome::Missing(alts) if phrase != "date" => match resolve(&ctx, TermRole::Time, "date", Want::Temporal, None) {
                Outcome::Missing(_) => Outcome::Missing(alts),
                found => found,
            },
            o => o,
        };
        push(&mut out, TermRole::Time, &phrase, o)?;
    }
    if let Some(o) = &sketch.order_term {
        let want = match o.agg {
            Some(AggFunc::Sum | AggFunc::Avg) => Want::Numeric,
            Some(AggFunc::Count) => Want::Any,
            _ => Want::Ordered,
        };
        let r = resolve(&ctx, TermRole::Order, &o.phrase, want, None);
        for i in push(&mut out, TermRole::Order, &o.phrase, r)? {
            out.groundings[i].agg = o.agg;
        }
    }
    Ok(out)
}
