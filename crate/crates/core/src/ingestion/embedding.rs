//! Token embedding tables: file loading, token coverage and the deterministic
//! stub encoder used when no external encoder output is available.

use std::collections::BTreeMap;
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::seeded_u64;
use crate::model::{char_len, CharSpan, DocId, DocumentPair, PairId, TokenSpan};

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("row {row}: expected dimension {expected}, found {found}")]
    DimMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: vector contains NaN or infinite values")]
    NonFinite { row: usize },
    #[error("token counts in header do not match rows: {0}")]
    CountMismatch(String),
    #[error("token {row} for {doc_id}: {message}")]
    Token {
        row: usize,
        doc_id: DocId,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct IoError(#[from] pub std::io::Error);

impl PartialEq for IoError {
    fn eq(&self, other: &Self) -> bool {
        self.0.kind() == other.0.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub doc_id: DocId,
    pub span: CharSpan,
}

/// Token vectors for one document pair, rows in "summary [SEP] abstract"
/// order: all news tokens first, then all science tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub pair_id: PairId,
    pub dim: usize,
    pub encoder_tag: String,
    tokens: Vec<TokenRecord>,
    vectors: Vec<f32>,
}

impl EmbeddingTable {
    /// Builds a table after checking row dimensions and finiteness.
    pub fn new(
        pair_id: PairId,
        dim: usize,
        encoder_tag: String,
        rows: Vec<(TokenRecord, Vec<f32>)>,
    ) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::Format {
                line: 1,
                message: "dim must be positive".into(),
            });
        }
        let mut tokens = Vec::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (row, (tok, v)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(EmbeddingError::DimMismatch {
                    row,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite { row });
            }
            tokens.push(tok);
            vectors.extend(v);
        }
        let table = Self {
            pair_id,
            dim,
            encoder_tag,
            tokens,
            vectors,
        };
        table.check_token_order()?;
        Ok(table)
    }

    fn check_token_order(&self) -> Result<(), EmbeddingError> {
        let mut finished: Vec<&DocId> = Vec::new();
        for (row, w) in self.tokens.iter().enumerate() {
            let prev = row.checked_sub(1).map(|r| &self.tokens[r]);
            match prev {
                Some(p) if p.doc_id == w.doc_id => {
                    if w.span.start < p.span.start {
                        return Err(EmbeddingError::Token {
                            row,
                            doc_id: w.doc_id.clone(),
                            message: "tokens of a document must be sorted by start offset".into(),
                        });
                    }
                }
                Some(p) => {
                    finished.push(&p.doc_id);
                    if finished.contains(&&w.doc_id) {
                        return Err(EmbeddingError::Token {
                            row,
                            doc_id: w.doc_id.clone(),
                            message: "tokens of a document must be contiguous".into(),
                        });
                    }
                }
                None => {}
            }
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[TokenRecord] {
        &self.tokens
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn token_counts(&self) -> BTreeMap<DocId, usize> {
        let mut out = BTreeMap::new();
        for t in &self.tokens {
            *out.entry(t.doc_id.clone()).or_insert(0) += 1;
        }
        out
    }

    /// Rows of `doc` whose character range intersects `span`, as an inclusive
    /// range. `None` when no token intersects.
    pub fn covering_tokens(&self, doc: &DocId, span: CharSpan) -> Option<TokenSpan> {
        let mut hits = self
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| &t.doc_id == doc && t.span.intersects(&span))
            .map(|(i, _)| i);
        let first = hits.next()?;
        let last = hits.next_back().unwrap_or(first);
        Some(TokenSpan { first, last })
    }

    /// True iff `ts` names exactly the rows of `doc` that intersect `span`.
    pub fn span_covers(&self, ts: TokenSpan, doc: &DocId, span: CharSpan) -> bool {
        if ts.last >= self.tokens.len() || ts.first > ts.last {
            return false;
        }
        if self.tokens[ts.rows()].iter().any(|t| &t.doc_id != doc) {
            return false;
        }
        self.covering_tokens(doc, span)
            .is_some_and(|c| c.first >= ts.first && c.last <= ts.last)
    }

    /// Checks that every token lies inside its document's summary text.
    pub fn check_against(&self, pair: &DocumentPair) -> Result<(), EmbeddingError> {
        if self.pair_id != pair.pair_id {
            return Err(EmbeddingError::Format {
                line: 1,
                message: format!("table is for pair {}, not {}", self.pair_id, pair.pair_id),
            });
        }
        for (row, t) in self.tokens.iter().enumerate() {
            let doc = pair.document(&t.doc_id).ok_or_else(|| EmbeddingError::Token {
                row,
                doc_id: t.doc_id.clone(),
                message: format!("document is not part of pair {}", pair.pair_id),
            })?;
            t.span
                .check_within(doc.summary_len())
                .map_err(|e| EmbeddingError::Token {
                    row,
                    doc_id: t.doc_id.clone(),
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct Header {
    pair_id: PairId,
    dim: usize,
    #[serde(default)]
    encoder_tag: String,
    token_counts: BTreeMap<DocId, usize>,
}

#[derive(Debug, Deserialize)]
struct TokenLine {
    doc_id: DocId,
    start_char: usize,
    end_char: usize,
    vector: Vec<serde_json::Value>,
}

fn parse_component(v: &serde_json::Value) -> Option<f32> {
    match v {
        serde_json::Value::Number(n) => n.as_f64().map(|x| x as f32),
        serde_json::Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "nan" => Some(f32::NAN),
            "inf" | "+inf" | "infinity" | "+infinity" => Some(f32::INFINITY),
            "-inf" | "-infinity" => Some(f32::NEG_INFINITY),
            _ => None,
        },
        _ => None,
    }
}

/// Reads an embedding file: one header line, then one line per token.
pub fn read_embeddings(reader: impl BufRead) -> Result<EmbeddingTable, EmbeddingError> {
    let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let (hline, header) = lines.next().ok_or(EmbeddingError::Format {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: Header = serde_json::from_str(&header.map_err(IoError)?).map_err(|e| {
        EmbeddingError::Format {
            line: hline,
            message: e.to_string(),
        }
    })?;

    let mut rows = Vec::new();
    for (row, (line, text)) in lines.enumerate() {
        let tok: TokenLine =
            serde_json::from_str(&text.map_err(IoError)?).map_err(|e| EmbeddingError::Format {
                line,
                message: e.to_string(),
            })?;
        if tok.vector.len() != header.dim {
            return Err(EmbeddingError::DimMismatch {
                row,
                expected: header.dim,
                found: tok.vector.len(),
            });
        }
        let mut v = Vec::with_capacity(header.dim);
        for c in &tok.vector {
            match parse_component(c) {
                Some(x) if x.is_finite() => v.push(x),
                Some(_) => return Err(EmbeddingError::NonFinite { row }),
                None => {
                    return Err(EmbeddingError::Format {
                        line,
                        message: format!("vector component {c} is not a number"),
                    })
                }
            }
        }
        let span = CharSpan::new(tok.start_char, tok.end_char).map_err(|e| EmbeddingError::Token {
            row,
            doc_id: tok.doc_id.clone(),
            message: e.to_string(),
        })?;
        rows.push((
            TokenRecord {
                doc_id: tok.doc_id,
                span,
            },
            v,
        ));
    }

    let table = EmbeddingTable::new(header.pair_id, header.dim, header.encoder_tag, rows)?;
    let counts = table.token_counts();
    let declared: BTreeMap<DocId, usize> = header
        .token_counts
        .into_iter()
        .filter(|(_, n)| *n > 0)
        .collect();
    if counts != declared {
        return Err(EmbeddingError::CountMismatch(format!(
            "header declares {declared:?}, rows contain {counts:?}"
        )));
    }
    Ok(table)
}

pub fn load_embeddings(path: &std::path::Path) -> Result<EmbeddingTable, EmbeddingError> {
    let file = std::fs::File::open(path).map_err(IoError)?;
    read_embeddings(std::io::BufReader::new(file))
}

/// Serializes a table in the embedding file format.
pub fn write_embeddings(table: &EmbeddingTable, mut out: impl std::io::Write) -> std::io::Result<()> {
    let header = serde_json::json!({
        "pair_id": table.pair_id,
        "dim": table.dim,
        "encoder_tag": table.encoder_tag,
        "token_counts": table.token_counts(),
    });
    writeln!(out, "{header}")?;
    for (i, t) in table.tokens.iter().enumerate() {
        let line = serde_json::json!({
            "doc_id": t.doc_id,
            "start_char": t.span.start,
            "end_char": t.span.end,
            "vector": table.row(i),
        });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Whitespace tokens of `text` as code-point spans.
pub fn whitespace_tokens(text: &str) -> Vec<(CharSpan, String)> {
    let mut out = Vec::new();
    let mut current: Option<(usize, String)> = None;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if let Some((s, w)) = current.take() {
                out.push((CharSpan { start: s, end: i }, w));
            }
        } else {
            current.get_or_insert_with(|| (i, String::new())).1.push(c);
        }
    }
    if let Some((s, w)) = current {
        out.push((
            CharSpan {
                start: s,
                end: char_len(text),
            },
            w,
        ));
    }
    out
}

/// Unit vector in `dim` dimensions derived from the lowercased token surface.
pub fn stub_vector(surface: &str, dim: usize, seed: u64) -> Vec<f32> {
    let key = surface.to_lowercase();
    let mut rng = ChaCha8Rng::seed_from_u64(seeded_u64(seed, key.as_bytes()));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// Deterministic test encoder: whitespace tokens, each mapped to a seeded
/// hash of its lowercased surface on the unit sphere.
///
/// Panics if `dim < 2`.
pub fn stub_embed(pair: &DocumentPair, dim: usize, seed: u64) -> EmbeddingTable {
    assert!(dim >= 2, "stub embedder needs at least two dimensions");
    let mut rows = Vec::new();
    for doc in pair.documents() {
        for (span, surface) in whitespace_tokens(&doc.summary_text) {
            rows.push((
                TokenRecord {
                    doc_id: doc.doc_id.clone(),
                    span,
                },
                stub_vector(&surface, dim, seed),
            ));
        }
    }
    EmbeddingTable::new(
        pair.pair_id.clone(),
        dim,
        format!("stub-sha256/seed={seed}"),
        rows,
    )
    .expect("stub vectors are finite and well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::pair;

    fn table_text(rows: &[&str]) -> String {
        let mut s = String::from(
            r#"{"pair_id":"p1","dim":4,"encoder_tag":"bert-large","token_counts":{"p1-news":2}}"#,
        );
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s
    }

    #[test]
    fn accepts_finite_table() {
        let t = read_embeddings(
            table_text(&[
                r#"{"doc_id":"p1-news","start_char":0,"end_char":5,"vector":[1,2,3,4]}"#,
                r#"{"doc_id":"p1-news","start_char":6,"end_char":10,"vector":[0.5,0.25,0,-1]}"#,
            ])
            .as_bytes(),
        )
        .unwrap();
        assert_eq!(t.token_count(), 2);
        assert_eq!(t.row(1), &[0.5, 0.25, 0.0, -1.0]);
        assert_eq!(t.encoder_tag, "bert-large");
    }

    #[test]
    fn rejects_nan_row_with_index() {
        let err = read_embeddings(
            table_text(&[
                r#"{"doc_id":"p1-news","start_char":0,"end_char":5,"vector":[1,2,3,4]}"#,
                r#"{"doc_id":"p1-news","start_char":6,"end_char":10,"vector":["NaN","NaN","NaN","NaN"]}"#,
            ])
            .as_bytes(),
        )
        .unwrap_err();
        assert_eq!(err, EmbeddingError::NonFinite { row: 1 });
    }

    #[test]
    fn rejects_dimension_change() {
        let err = read_embeddings(
            table_text(&[
                r#"{"doc_id":"p1-news","start_char":0,"end_char":5,"vector":[1,2,3,4]}"#,
                r#"{"doc_id":"p1-news","start_char":6,"end_char":10,"vector":[1,2,3]}"#,
            ])
            .as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, EmbeddingError::DimMismatch { row: 1, expected: 4, found: 3 }));
    }

    #[test]
    fn rejects_count_mismatch_and_overflow() {
        let err = read_embeddings(
            table_text(&[r#"{"doc_id":"p1-news","start_char":0,"end_char":5,"vector":[1,2,3,4]}"#])
                .as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, EmbeddingError::CountMismatch(_)));
        let err = read_embeddings(
            table_text(&[
                r#"{"doc_id":"p1-news","start_char":0,"end_char":5,"vector":[1e300,2,3,4]}"#,
                r#"{"doc_id":"p1-news","start_char":6,"end_char":10,"vector":[1,2,3,4]}"#,
            ])
            .as_bytes(),
        )
        .unwrap_err();
        assert_eq!(err, EmbeddingError::NonFinite { row: 0 });
    }

    #[test]
    fn write_then_read_is_identity() {
        let p = pair("p1", "Bees carry pollen", "Apis mellifera pollination");
        let t = stub_embed(&p, 8, 3);
        let mut buf = Vec::new();
        write_embeddings(&t, &mut buf).unwrap();
        assert_eq!(read_embeddings(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn stub_is_deterministic_unit_norm_and_seeded() {
        let p = pair("p1", "blood from the Blood bank", "blood flow");
        let t = stub_embed(&p, 16, 42);
        assert_eq!(t.token_count(), 7);
        assert_eq!(t.row(0), t.row(3));
        assert_eq!(t.row(0), t.row(5));
        for i in 0..t.token_count() {
            let n: f64 = t.row(i).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let other = stub_embed(&p, 16, 43);
        assert_ne!(t.row(0), other.row(0));
        t.check_against(&p).unwrap();
        // news tokens precede science tokens
        assert_eq!(t.tokens()[4].doc_id.as_str(), "p1-news");
        assert_eq!(t.tokens()[5].doc_id.as_str(), "p1-sci");
    }

    #[test]
    fn partial_overlap_includes_token() {
        let p = pair("p1", "blood from the heart", "x");
        let t = stub_embed(&p, 4, 1);
        let doc: DocId = "p1-news".into();
        // "od fr" touches "blood" and "from"
        let ts = t.covering_tokens(&doc, CharSpan::new(3, 8).unwrap()).unwrap();
        assert_eq!((ts.first, ts.last), (0, 1));
        assert!(t.span_covers(ts, &doc, CharSpan::new(3, 8).unwrap()));
        assert!(!t.span_covers(crate::model::TokenSpan { first: 0, last: 0 }, &doc, CharSpan::new(3, 8).unwrap()));
        // whitespace-only range touches nothing
        assert!(t.covering_tokens(&doc, CharSpan::new(5, 6).unwrap()).is_none());
    }

    #[test]
    fn whitespace_tokens_report_code_points() {
        let toks = whitespace_tokens("  Zoë  likes\tbees ");
        let spans: Vec<_> = toks.iter().map(|(s, w)| (s.start, s.end, w.as_str())).collect();
        assert_eq!(spans, vec![(2, 5, "Zoë"), (7, 12, "likes"), (13, 17, "bees")]);
    }
}
