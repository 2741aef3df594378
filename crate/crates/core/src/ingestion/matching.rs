//! News/paper metadata matching: exact DOI, or approximate author overlap
//! within a publication date window.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::model::Document;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatchError {
    #[error("{0} record has neither a DOI nor any authors")]
    InsufficientMetadata(&'static str),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    #[serde(default)]
    pub doi: Option<String>,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub published: Option<NaiveDate>,
    /// Accepted for completeness; not used by the matching rule.
    #[serde(default)]
    pub affiliations: Vec<String>,
}

impl From<&Document> for DocumentMeta {
    fn from(d: &Document) -> Self {
        Self {
            doi: d.doi.clone(),
            authors: d.authors.clone(),
            published: d.published,
            affiliations: d.affiliations.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub min_author_overlap: f64,
    pub date_window_days: u32,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            min_author_overlap: 0.5,
            date_window_days: 14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub doi_exact: bool,
    pub author_overlap: f64,
    pub date_gap_days: Option<u32>,
}

/// A name reduced to lowercase ASCII-ish tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedName {
    tokens: Vec<String>,
}

impl NormalizedName {
    pub fn parse(raw: &str) -> Option<Self> {
        let mut cleaned = String::with_capacity(raw.len());
        for c in raw.nfd() {
            if is_combining_mark(c) {
                continue;
            }
            if c == '\'' || c == '’' || c == '-' {
                // "O'Brien" -> "obrien", "Jean-Paul" -> "jeanpaul"
                continue;
            }
            if c.is_alphanumeric() {
                cleaned.extend(c.to_lowercase());
            } else {
                cleaned.push(' ');
            }
        }
        let tokens: Vec<String> = cleaned.split_whitespace().map(str::to_owned).collect();
        (!tokens.is_empty()).then_some(Self { tokens })
    }

    fn first(&self) -> &str {
        &self.tokens[0]
    }

    fn last(&self) -> &str {
        self.tokens.last().expect("non-empty")
    }

    /// Same last token, and first tokens equal or one is the other's initial.
    pub fn matches(&self, other: &NormalizedName) -> bool {
        if self.last() != other.last() {
            return false;
        }
        let (a, b) = (self.first(), other.first());
        if a == b {
            return true;
        }
        let is_initial_of = |x: &str, y: &str| {
            x.chars().count() == 1 && y.chars().next() == x.chars().next()
        };
        is_initial_of(a, b) || is_initial_of(b, a)
    }
}

/// Size of a maximum one-to-one matching between the two name lists divided
/// by the smaller list's size.
pub fn author_overlap(a: &[String], b: &[String]) -> f64 {
    let left: Vec<NormalizedName> = dedup(a.iter().filter_map(|n| NormalizedName::parse(n)));
    let right: Vec<NormalizedName> = dedup(b.iter().filter_map(|n| NormalizedName::parse(n)));
    let denom = left.len().min(right.len());
    if denom == 0 {
        return 0.0;
    }
    let adj: Vec<Vec<usize>> = left
        .iter()
        .map(|l| {
            right
                .iter()
                .enumerate()
                .filter(|(_, r)| l.matches(r))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    max_bipartite_matching(&adj, right.len()) as f64 / denom as f64
}

fn dedup(names: impl Iterator<Item = NormalizedName>) -> Vec<NormalizedName> {
    let mut out: Vec<NormalizedName> = Vec::new();
    for n in names {
        if !out.contains(&n) {
            out.push(n);
        }
    }
    out
}

// Kuhn's augmenting paths; author lists are tiny.
fn max_bipartite_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    (0..adj.len())
        .filter(|&u| augment(u, adj, &mut vec![false; n_right], &mut owner))
        .count()
}

pub fn normalize_doi(doi: &str) -> Option<String> {
    let d = doi.trim().to_lowercase();
    let d = ["https://doi.org/", "http://doi.org/", "https://dx.doi.org/", "doi:"]
        .iter()
        .fold(d.as_str(), |acc, p| acc.strip_prefix(p).unwrap_or(acc))
        .trim()
        .to_owned();
    (!d.is_empty()).then_some(d)
}

/// Decides whether a news article and a paper describe the same work.
pub fn match_documents(
    news: &DocumentMeta,
    sci: &DocumentMeta,
    config: &MatchConfig,
) -> Result<(bool, MatchScore), MatchError> {
    for (label, meta) in [("news", news), ("science", sci)] {
        let has_doi = meta.doi.as_deref().and_then(normalize_doi).is_some();
        if !has_doi && meta.authors.iter().all(|a| NormalizedName::parse(a).is_none()) {
            return Err(MatchError::InsufficientMetadata(label));
        }
    }
    let doi_exact = match (
        news.doi.as_deref().and_then(normalize_doi),
        sci.doi.as_deref().and_then(normalize_doi),
    ) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    };
    let overlap = author_overlap(&news.authors, &sci.authors);
    let gap = match (news.published, sci.published) {
        (Some(a), Some(b)) => Some((a - b).num_days().unsigned_abs() as u32),
        _ => None,
    };
    let within_window = gap.is_some_and(|g| g <= config.date_window_days);
    let matched = doi_exact || (overlap >= config.min_author_overlap && within_window);
    Ok((
        matched,
        MatchScore {
            doi_exact,
            author_overlap: overlap,
            date_gap_days: gap,
        },
    ))
}
