//! Candidate pair generation: every news mention against every science
//! mention of a document pair, scored by cosine similarity of mean-pooled
//! token vectors and ranked for the annotation queue.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::exec::Execution;
use crate::ingestion::EmbeddingTable;
use crate::model::{CandidatePair, Corpus, Mention, PairId, PairKey, PairStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairGenError {
    #[error("mention {0} covers no embedded tokens")]
    EmptySpan(String),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero vector has no direction")]
    Degenerate,
    #[error("vector contains NaN or infinite values")]
    NonFinite,
}

/// Arithmetic mean of the token vectors in the mention's token span.
pub fn span_vector(mention: &Mention, table: &EmbeddingTable) -> Result<Vec<f64>, PairGenError> {
    let ts = mention
        .token_span
        .filter(|ts| ts.first <= ts.last && ts.last < table.token_count())
        .ok_or_else(|| PairGenError::EmptySpan(mention.mention_id.to_string()))?;
    let mut acc = vec![0.0f64; table.dim];
    for row in ts.rows() {
        for (a, &x) in acc.iter_mut().zip(table.row(row)) {
            *a += x as f64;
        }
    }
    let n = (ts.last - ts.first + 1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// `dot(u, v) / (|u| |v|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, PairGenError> {
    if u.len() != v.len() {
        return Err(PairGenError::DimMismatch(u.len(), v.len()));
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(PairGenError::NonFinite);
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(PairGenError::Degenerate);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Similarity of two mentions of one pair, when both resolve to tokens.
pub fn score_mentions(corpus: &Corpus, a: &Mention, b: &Mention) -> Option<f64> {
    let pair = corpus.pair_of_doc(&a.doc_id).ok()?;
    let table = corpus.embeddings(&pair.pair_id)?;
    let u = span_vector(a, table).ok()?;
    let v = span_vector(b, table).ok()?;
    match cosine_similarity(&u, &v) {
        Ok(s) => Some(s),
        Err(e) => {
            warn!(a = %a.mention_id, b = %b.mention_id, "unscorable pair: {e}");
            None
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Generated {
    pub pairs: Vec<CandidatePair>,
    pub warnings: Vec<String>,
}

/// All cross-document candidates of one document pair whose keys are not yet
/// known to `exists`. Candidates are unflagged and pending.
pub fn generate_candidates(
    corpus: &Corpus,
    pair_id: &PairId,
    exists: &(dyn Fn(&PairKey) -> bool + Sync),
) -> Generated {
    let mut out = Generated::default();
    let Some(pair) = corpus.pair(pair_id) else {
        out.warnings.push(format!("unknown document pair {pair_id}"));
        return out;
    };
    let news: Vec<&Mention> = corpus.active_mentions_of(&pair.news_doc.doc_id).collect();
    let sci: Vec<&Mention> = corpus.active_mentions_of(&pair.sci_doc.doc_id).collect();
    if news.is_empty() || sci.is_empty() {
        out.warnings.push(format!(
            "pair {pair_id}: no mentions loaded for {}",
            if news.is_empty() { "the news document" } else { "the science document" }
        ));
        return out;
    }
    for n in &news {
        for s in &sci {
            let key = crate::model::pair_key(corpus, &n.mention_id, &s.mention_id)
                .expect("news and science mentions of one pair");
            if exists(&key) {
                continue;
            }
            out.pairs.push(CandidatePair {
                pair_key: key,
                pair_id: pair_id.clone(),
                news_mention: n.mention_id.clone(),
                sci_mention: s.mention_id.clone(),
                similarity: score_mentions(corpus, n, s),
                iaa: false,
                status: PairStatus::Pending,
                gold: None,
            });
        }
    }
    out
}

/// Candidate generation over many document pairs, one task per pair.
pub fn generate_all(
    corpus: &Corpus,
    pair_ids: &[PairId],
    exists: &(dyn Fn(&PairKey) -> bool + Sync),
    exec: Execution,
) -> Generated {
    let parts = exec.map(pair_ids, |id| generate_candidates(corpus, id, exists));
    let mut out = Generated::default();
    for p in parts {
        out.pairs.extend(p.pairs);
        out.warnings.extend(p.warnings);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// Descending similarity.
    #[default]
    Descending,
    /// Round-robin over the top, middle and bottom thirds of the descending
    /// order, so annotators meet likely negatives early.
    Stratified,
}

fn by_similarity(a: &CandidatePair, b: &CandidatePair) -> Ordering {
    match (a.similarity, b.similarity) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.pair_key.cmp(&b.pair_key)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.pair_key.cmp(&b.pair_key),
    }
}

/// Total, deterministic queue order. Unscored pairs always come last in key
/// order.
pub fn rank_candidates(mut pairs: Vec<CandidatePair>, mode: RankMode) -> Vec<CandidatePair> {
    pairs.sort_by(by_similarity);
    if mode == RankMode::Descending {
        return pairs;
    }
    let split = pairs.iter().position(|p| p.similarity.is_none()).unwrap_or(pairs.len());
    let unscored = pairs.split_off(split);
    let n = pairs.len();
    let cut1 = n.div_ceil(3);
    let cut2 = cut1 + (n - cut1).div_ceil(2);
    let mut thirds: Vec<std::vec::IntoIter<CandidatePair>> = Vec::new();
    let mut rest = pairs;
    let tail = rest.split_off(cut2);
    let mid = rest.split_off(cut1);
    thirds.push(rest.into_iter());
    thirds.push(mid.into_iter());
    thirds.push(tail.into_iter());
    let mut out = Vec::with_capacity(n + unscored.len());
    loop {
        let before = out.len();
        for t in thirds.iter_mut() {
            if let Some(p) = t.next() {
                out.push(p);
            }
        }
        if out.len() == before {
            break;
        }
    }
    out.extend(unscored);
    out
}
