//! Identifier splitting and token normalization used by enrichment,
//! indexing and grounding.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Splits an identifier or phrase on underscores, whitespace, punctuation and
/// camel-case boundaries. Tokens are lowercased.
pub fn split_words(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = name.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if c.is_uppercase() && !cur.is_empty() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_lower) {
                out.push(std::mem::take(&mut cur));
            }
        }
        cur.extend(c.to_lowercase());
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Stems a single lowercase word.
pub fn stem(word: &str) -> String {
    stemmer().stem(&word.to_lowercase()).into_owned()
}

/// Split + stem.
pub fn stems(name: &str) -> Vec<String> {
    split_words(name).iter().map(|w| stem(w)).collect()
}

pub fn stem_set(name: &str) -> BTreeSet<String> {
    stems(name).into_iter().collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    inter as f64 / union as f64
}

/// Words that carry no schema meaning in a question.
pub fn is_stopword(word: &str) -> bool {
    const STOP: &[&str] = &[
        "a", "about", "across", "all", "an", "and", "any", "are", "as", "at", "be", "been", "by", "did", "do",
        "does", "during", "each", "every", "find", "first", "for", "from", "get", "give", "got", "had", "has",
        "have", "how", "i", "in", "into", "is", "it", "its", "last", "list", "me", "many", "much", "my", "of",
        "on", "or", "our", "over", "past", "per", "please", "previous", "show", "since", "so", "than",
        "that", "the", "their", "them", "there", "these", "they", "this", "those", "to", "top", "was",
        "were", "what", "when", "where", "which", "who", "whose", "will", "with", "within", "display",
        "quarter", "year", "month", "week", "day", "days", "months", "years", "weeks", "quarters", "today",
        "yesterday", "total", "sum", "average", "avg", "mean", "count", "number", "maximum", "max",
        "minimum", "min", "highest", "lowest", "largest", "smallest", "more", "less", "greater", "fewer",
        "exceeding", "exceed", "exceeds", "above", "below", "under", "least", "most", "equal", "equals",
        "between", "ordered", "sorted", "order", "sort", "descending", "ascending", "desc", "asc", "bottom",
        "limit", "grouped", "broken", "down", "whom", "not", "no",
    ];
    STOP.contains(&word)
}
