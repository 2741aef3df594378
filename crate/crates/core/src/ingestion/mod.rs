//! Line-oriented input formats: document pairs, mention spans and token
//! embeddings, plus metadata matching between news articles and papers.

mod embedding;
mod matching;

use std::io::BufRead;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

pub use embedding::{
    load_embeddings, read_embeddings, stub_embed, stub_vector, whitespace_tokens, write_embeddings,
    EmbeddingError, EmbeddingTable, IoError, TokenRecord,
};
pub use matching::{
    author_overlap, match_documents, normalize_doi, DocumentMeta, MatchConfig, MatchError,
    MatchScore, NormalizedName,
};

use crate::model::{DocId, DocKind, Document, DocumentPair, PairId, Split};

/// A rejected input record. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocRecord {
    doc_id: DocId,
    title: String,
    summary_text: String,
    #[serde(default)]
    full_text: Option<String>,
    #[serde(default)]
    doi: Option<String>,
    #[serde(default)]
    authors: Vec<String>,
    #[serde(default)]
    affiliations: Vec<String>,
    #[serde(default)]
    published: Option<NaiveDate>,
    #[serde(default)]
    url: Option<String>,
}

impl DocRecord {
    fn into_document(self, kind: DocKind) -> Document {
        Document {
            doc_id: self.doc_id,
            kind,
            title: self.title,
            summary_text: self.summary_text,
            full_text: self.full_text,
            doi: self.doi,
            authors: self.authors,
            affiliations: self.affiliations,
            published: self.published,
            url: self.url,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    pair_id: PairId,
    news: DocRecord,
    science: DocRecord,
    #[serde(default)]
    split: Option<Split>,
    #[serde(default)]
    created_at: Option<DateTime<Utc>>,
}

/// Document pairs parsed from a file, with per-line failures kept aside.
#[derive(Debug, Default)]
pub struct ParsedPairs {
    pub pairs: Vec<(usize, DocumentPair)>,
    pub errors: Vec<RecordError>,
}

fn numbered_lines(reader: impl BufRead) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
}

/// Parses a document-pair file. `now` stamps records without `created_at`.
pub fn read_document_pairs(reader: impl BufRead, now: DateTime<Utc>) -> ParsedPairs {
    let mut out = ParsedPairs::default();
    for (line, text) in numbered_lines(reader) {
        let parsed = text
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<PairRecord>(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => out.pairs.push((
                line,
                DocumentPair {
                    pair_id: r.pair_id,
                    news_doc: r.news.into_document(DocKind::News),
                    sci_doc: r.science.into_document(DocKind::Science),
                    created_at: r.created_at.unwrap_or(now),
                    split: r.split,
                },
            )),
            Err(message) => out.errors.push(RecordError { line, message }),
        }
    }
    out
}

/// One line of a mentions file. Any `surface` field in the input is ignored;
/// surfaces are always re-derived from the summary text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub doc_id: DocId,
    pub start_char: usize,
    pub end_char: usize,
}

#[derive(Debug, Default)]
pub struct ParsedMentions {
    pub mentions: Vec<(usize, MentionRecord)>,
    pub errors: Vec<RecordError>,
}

pub fn read_mentions(reader: impl BufRead) -> ParsedMentions {
    let mut out = ParsedMentions::default();
    for (line, text) in numbered_lines(reader) {
        let parsed = text
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<MentionRecord>(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => out.mentions.push((line, r)),
            Err(message) => out.errors.push(RecordError { line, message }),
        }
    }
    out
}

pub fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, IoError> {
    Ok(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Serializes a pair in the document-pair file format.
pub fn document_pair_record(pair: &DocumentPair) -> serde_json::Value {
    fn doc(d: &Document) -> serde_json::Value {
        let mut v = serde_json::json!({
            "doc_id": d.doc_id,
            "title": d.title,
            "summary_text": d.summary_text,
            "authors": d.authors,
        });
        let obj = v.as_object_mut().expect("object");
        if let Some(t) = &d.full_text {
            obj.insert("full_text".into(), t.clone().into());
        }
        if let Some(t) = &d.doi {
            obj.insert("doi".into(), t.clone().into());
        }
        if let Some(t) = &d.published {
            obj.insert("published".into(), t.to_string().into());
        }
        if let Some(t) = &d.url {
            obj.insert("url".into(), t.clone().into());
        }
        if !d.affiliations.is_empty() {
            obj.insert("affiliations".into(), d.affiliations.clone().into());
        }
        v
    }
    let mut v = serde_json::json!({
        "pair_id": pair.pair_id,
        "news": doc(&pair.news_doc),
        "science": doc(&pair.sci_doc),
        "created_at": pair.created_at,
    });
    if let Some(s) = pair.split {
        v.as_object_mut()
            .expect("object")
            .insert("split".into(), serde_json::to_value(s).expect("split"));
    }
    v
}
