//! Corpus data model: documents, mentions, candidate pairs, clusters and the
//! validation report that sanity-checks a loaded corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::EmbeddingTable;

/// Separator inside a serialized [`PairKey`]; forbidden in document ids.
pub const PAIR_KEY_SEPARATOR: char = '|';
/// Separator between document id and offsets inside a [`MentionId`].
pub const MENTION_ID_SEPARATOR: char = '@';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid character range [{start}, {end})")]
    InvalidRange { start: usize, end: usize },
    #[error("range [{start}, {end}) exceeds text length {len}")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("mentions {a} and {b} are not in distinct documents of one document pair")]
    CrossDocument { a: MentionId, b: MentionId },
    #[error("unknown document {0}")]
    UnknownDocument(DocId),
    #[error("unknown mention {0}")]
    UnknownMention(MentionId),
    #[error("invalid identifier {0:?}: must be non-empty and must not contain '|' or '@'")]
    InvalidIdentifier(String),
    #[error("malformed pair key {0:?}")]
    MalformedPairKey(String),
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(DocId);
string_id!(PairId);
string_id!(
    /// Stable mention identifier, derived from document id and offsets so that
    /// identical spans in one document always share an id.
    MentionId
);
string_id!(AnnotatorId);

impl MentionId {
    pub fn for_span(doc_id: &DocId, span: CharSpan) -> Self {
        Self(format!(
            "{}{}{}-{}",
            doc_id, MENTION_ID_SEPARATOR, span.start, span.end
        ))
    }
}

pub(crate) fn check_identifier(id: &str) -> Result<(), ModelError> {
    if id.is_empty() || id.contains(PAIR_KEY_SEPARATOR) || id.contains(MENTION_ID_SEPARATOR) {
        return Err(ModelError::InvalidIdentifier(id.to_owned()));
    }
    Ok(())
}

/// Half-open range of code-point offsets, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Result<Self, ModelError> {
        if start >= end {
            return Err(ModelError::InvalidRange { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn intersects(&self, other: &CharSpan) -> bool {
        self.start.max(other.start) < self.end.min(other.end)
    }

    /// Validates the span against a text of `len` code points.
    pub fn check_within(&self, len: usize) -> Result<(), ModelError> {
        if self.is_empty() {
            return Err(ModelError::InvalidRange {
                start: self.start,
                end: self.end,
            });
        }
        if self.end > len {
            return Err(ModelError::OutOfBounds {
                start: self.start,
                end: self.end,
                len,
            });
        }
        Ok(())
    }
}

impl fmt::Display for CharSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// True iff the two end-exclusive ranges share at least one code point.
pub fn span_overlap(a: CharSpan, b: CharSpan) -> Result<bool, ModelError> {
    for s in [a, b] {
        if s.is_empty() {
            return Err(ModelError::InvalidRange {
                start: s.start,
                end: s.end,
            });
        }
    }
    Ok(a.intersects(&b))
}

/// Number of code points in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Substring addressed by code-point offsets.
pub fn char_slice(text: &str, span: CharSpan) -> Option<&str> {
    let mut indices = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()));
    let start = indices.nth(span.start)?;
    let end = if span.end == span.start {
        start
    } else {
        indices.nth(span.end - span.start - 1)?
    };
    Some(&text[start..end])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    News,
    Science,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train|dev|test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: DocId,
    pub kind: DocKind,
    pub title: String,
    /// News extractive summary or paper abstract; all mention offsets index
    /// into this text.
    pub summary_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doi: Option<String>,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub affiliations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl Document {
    pub fn summary_len(&self) -> usize {
        char_len(&self.summary_text)
    }
}

/// One news article and one scientific paper; the unit of annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentPair {
    pub pair_id: PairId,
    pub news_doc: Document,
    pub sci_doc: Document,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl DocumentPair {
    pub fn documents(&self) -> [&Document; 2] {
        [&self.news_doc, &self.sci_doc]
    }

    pub fn document(&self, doc_id: &DocId) -> Option<&Document> {
        self.documents().into_iter().find(|d| &d.doc_id == doc_id)
    }

    /// Equality ignoring `created_at`, used for idempotent re-ingestion.
    pub fn same_content(&self, other: &DocumentPair) -> bool {
        self.pair_id == other.pair_id
            && self.news_doc == other.news_doc
            && self.sci_doc == other.sci_doc
            && self.split == other.split
    }
}

/// Inclusive range of row indices in the pair's embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub first: usize,
    pub last: usize,
}

impl TokenSpan {
    pub fn rows(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub mention_id: MentionId,
    pub doc_id: DocId,
    pub span: CharSpan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_span: Option<TokenSpan>,
    pub surface: String,
    /// Set when a span edit replaced this mention with a newer version.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superseded_by: Option<MentionId>,
}

impl Mention {
    pub fn is_active(&self) -> bool {
        self.superseded_by.is_none()
    }
}

/// Canonical unordered key of a cross-document mention pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    lo: MentionId,
    hi: MentionId,
}

impl PairKey {
    fn from_ids(a: MentionId, b: MentionId) -> Self {
        if a <= b {
            Self { lo: a, hi: b }
        } else {
            Self { lo: b, hi: a }
        }
    }

    pub fn members(&self) -> (&MentionId, &MentionId) {
        (&self.lo, &self.hi)
    }

    pub fn contains(&self, id: &MentionId) -> bool {
        &self.lo == id || &self.hi == id
    }

    /// The member that is not `id`.
    pub fn other(&self, id: &MentionId) -> Option<&MentionId> {
        if &self.lo == id {
            Some(&self.hi)
        } else if &self.hi == id {
            Some(&self.lo)
        } else {
            None
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.lo, PAIR_KEY_SEPARATOR, self.hi)
    }
}

impl std::str::FromStr for PairKey {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(PAIR_KEY_SEPARATOR)
            .ok_or_else(|| ModelError::MalformedPairKey(s.to_owned()))?;
        if a.is_empty() || b.is_empty() || b.contains(PAIR_KEY_SEPARATOR) || a == b {
            return Err(ModelError::MalformedPairKey(s.to_owned()));
        }
        Ok(Self::from_ids(a.into(), b.into()))
    }
}

impl Serialize for PairKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PairKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Canonical key for a pair of mentions that must sit in the two distinct
/// documents of a single document pair.
pub fn pair_key(corpus: &Corpus, a: &MentionId, b: &MentionId) -> Result<PairKey, ModelError> {
    let ma = corpus.mention(a)?;
    let mb = corpus.mention(b)?;
    let pa = corpus.pair_of_doc(&ma.doc_id)?;
    let pb = corpus.pair_of_doc(&mb.doc_id)?;
    if ma.doc_id == mb.doc_id || pa.pair_id != pb.pair_id {
        return Err(ModelError::CrossDocument {
            a: a.clone(),
            b: b.clone(),
        });
    }
    Ok(PairKey::from_ids(a.clone(), b.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairStatus {
    Pending,
    Claimed,
    Resolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Coreferent,
    NotCoreferent,
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
}

impl Verdict {
    pub fn flipped(self) -> Self {
        match self {
            Verdict::Yes => Verdict::No,
            Verdict::No => Verdict::Yes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub pair_key: PairKey,
    pub pair_id: PairId,
    pub news_mention: MentionId,
    pub sci_mention: MentionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    pub iaa: bool,
    pub status: PairStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u64);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreferenceCluster {
    pub cluster_id: ClusterId,
    pub mention_ids: BTreeSet<MentionId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MergeOutcome {
    AlreadyTogether { cluster: ClusterId },
    Merged { into: ClusterId, absorbed: Option<ClusterId> },
}

/// Disjoint coreference clusters. Merging always keeps the smaller id so the
/// numbering is a pure function of the merge sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    clusters: BTreeMap<ClusterId, BTreeSet<MentionId>>,
    member_of: BTreeMap<MentionId, ClusterId>,
    next_id: u64,
}

impl ClusterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cluster_of(&self, m: &MentionId) -> Option<ClusterId> {
        self.member_of.get(m).copied()
    }

    pub fn members(&self, id: ClusterId) -> Option<&BTreeSet<MentionId>> {
        self.clusters.get(&id)
    }

    pub fn same_cluster(&self, a: &MentionId, b: &MentionId) -> bool {
        match (self.cluster_of(a), self.cluster_of(b)) {
            (Some(x), Some(y)) => x == y,
            _ => a == b,
        }
    }

    fn ensure(&mut self, m: &MentionId) -> ClusterId {
        if let Some(c) = self.member_of.get(m) {
            return *c;
        }
        let id = ClusterId(self.next_id);
        self.next_id += 1;
        self.clusters.insert(id, BTreeSet::from([m.clone()]));
        self.member_of.insert(m.clone(), id);
        id
    }

    /// Unions the clusters of `a` and `b`, creating singletons as needed.
    pub fn merge(&mut self, a: &MentionId, b: &MentionId) -> MergeOutcome {
        if let (Some(x), Some(y)) = (self.cluster_of(a), self.cluster_of(b)) {
            if x == y {
                return MergeOutcome::AlreadyTogether { cluster: x };
            }
        }
        let had_a = self.cluster_of(a).is_some();
        let had_b = self.cluster_of(b).is_some();
        let ca = self.ensure(a);
        let cb = self.ensure(b);
        let (into, from) = if ca < cb { (ca, cb) } else { (cb, ca) };
        let moved = self.clusters.remove(&from).unwrap_or_default();
        for m in &moved {
            self.member_of.insert(m.clone(), into);
        }
        self.clusters.entry(into).or_default().extend(moved);
        // A freshly created singleton is not reported as an absorbed cluster.
        let from_existed = if from == ca { had_a } else { had_b };
        MergeOutcome::Merged {
            into,
            absorbed: from_existed.then_some(from),
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClusterId, &BTreeSet<MentionId>)> {
        self.clusters.iter().map(|(k, v)| (*k, v))
    }

    pub fn to_clusters(&self) -> Vec<CoreferenceCluster> {
        self.iter()
            .map(|(cluster_id, m)| CoreferenceCluster {
                cluster_id,
                mention_ids: m.clone(),
            })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn insert_raw(&mut self, id: ClusterId, members: BTreeSet<MentionId>) {
        for m in &members {
            self.member_of.insert(m.clone(), id);
        }
        self.clusters.insert(id, members);
        self.next_id = self.next_id.max(id.0 + 1);
    }
}

/// In-memory corpus: document pairs, their mentions and embedding tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pairs: BTreeMap<PairId, DocumentPair>,
    doc_index: BTreeMap<DocId, PairId>,
    mentions: BTreeMap<MentionId, Mention>,
    by_doc: BTreeMap<DocId, BTreeSet<MentionId>>,
    embeddings: BTreeMap<PairId, EmbeddingTable>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &DocumentPair> {
        self.pairs.values()
    }

    pub fn pair(&self, id: &PairId) -> Option<&DocumentPair> {
        self.pairs.get(id)
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair_of_doc(&self, doc: &DocId) -> Result<&DocumentPair, ModelError> {
        self.doc_index
            .get(doc)
            .and_then(|p| self.pairs.get(p))
            .ok_or_else(|| ModelError::UnknownDocument(doc.clone()))
    }

    pub fn document(&self, doc: &DocId) -> Result<&Document, ModelError> {
        self.pair_of_doc(doc)?
            .document(doc)
            .ok_or_else(|| ModelError::UnknownDocument(doc.clone()))
    }

    pub fn mention(&self, id: &MentionId) -> Result<&Mention, ModelError> {
        self.mentions
            .get(id)
            .ok_or_else(|| ModelError::UnknownMention(id.clone()))
    }

    pub fn mentions(&self) -> impl Iterator<Item = &Mention> {
        self.mentions.values()
    }

    /// Active (non-superseded) mentions of one document, in id order.
    pub fn active_mentions_of<'a>(&'a self, doc: &DocId) -> impl Iterator<Item = &'a Mention> + 'a {
        self.by_doc
            .get(doc)
            .into_iter()
            .flatten()
            .filter_map(|id| self.mentions.get(id))
            .filter(|m| m.is_active())
    }

    pub fn embeddings(&self, pair: &PairId) -> Option<&EmbeddingTable> {
        self.embeddings.get(pair)
    }

    /// Looks up a mention by document and exact span.
    pub fn find_mention(&self, doc: &DocId, span: CharSpan) -> Option<&Mention> {
        self.mentions.get(&MentionId::for_span(doc, span))
    }

    /// Checks a document pair against the documents already stored. Returns
    /// `Ok(false)` when an identical pair is already present.
    pub fn check_new_pair(&self, pair: &DocumentPair) -> Result<bool, String> {
        check_identifier(pair.pair_id.as_str()).map_err(|e| e.to_string())?;
        if pair.news_doc.kind != DocKind::News || pair.sci_doc.kind != DocKind::Science {
            return Err("news_doc must be news and sci_doc must be science".into());
        }
        if pair.news_doc.doc_id == pair.sci_doc.doc_id {
            return Err(format!("both documents share doc_id {}", pair.news_doc.doc_id));
        }
        for doc in pair.documents() {
            check_identifier(doc.doc_id.as_str()).map_err(|e| e.to_string())?;
            if doc.summary_text.trim().is_empty() {
                return Err(format!("document {} has an empty summary_text", doc.doc_id));
            }
        }
        if let Some(existing) = self.pairs.get(&pair.pair_id) {
            return if existing.same_content(pair) {
                Ok(false)
            } else {
                Err(format!(
                    "pair_id {} already stored with different content",
                    pair.pair_id
                ))
            };
        }
        for doc in pair.documents() {
            if let Some(owner) = self.doc_index.get(&doc.doc_id) {
                return Err(format!(
                    "doc_id {} already belongs to pair {}",
                    doc.doc_id, owner
                ));
            }
        }
        Ok(true)
    }

    pub(crate) fn insert_pair(&mut self, pair: DocumentPair) {
        for doc in pair.documents() {
            self.doc_index.insert(doc.doc_id.clone(), pair.pair_id.clone());
        }
        self.pairs.insert(pair.pair_id.clone(), pair);
    }

    /// Builds a mention for `span` in `doc`, deriving the surface from the
    /// summary text and resolving tokens against the pair's embedding table.
    pub fn build_mention(&self, doc: &DocId, span: CharSpan) -> Result<Mention, ModelError> {
        let document = self.document(doc)?;
        span.check_within(document.summary_len())?;
        let surface = char_slice(&document.summary_text, span)
            .expect("span checked against text length")
            .to_owned();
        let pair = self.pair_of_doc(doc)?;
        let token_span = self
            .embeddings
            .get(&pair.pair_id)
            .and_then(|t| t.covering_tokens(doc, span));
        Ok(Mention {
            mention_id: MentionId::for_span(doc, span),
            doc_id: doc.clone(),
            span,
            token_span,
            surface,
            superseded_by: None,
        })
    }

    /// Inserts a mention; an existing mention with the same span is reused
    /// (and reactivated if a span edit had superseded it).
    pub(crate) fn insert_mention(&mut self, mention: Mention) -> bool {
        if let Some(existing) = self.mentions.get_mut(&mention.mention_id) {
            existing.superseded_by = None;
            return false;
        }
        self.by_doc
            .entry(mention.doc_id.clone())
            .or_default()
            .insert(mention.mention_id.clone());
        self.mentions.insert(mention.mention_id.clone(), mention);
        true
    }

    pub(crate) fn supersede(&mut self, old: &MentionId, new: &MentionId) {
        if old == new {
            return;
        }
        if let Some(m) = self.mentions.get_mut(old) {
            m.superseded_by = Some(new.clone());
        }
    }

    /// Attaches an embedding table and resolves token spans of mentions
    /// already stored for that pair.
    pub(crate) fn insert_embeddings(&mut self, table: EmbeddingTable) {
        let pair_id = table.pair_id.clone();
        if let Some(pair) = self.pairs.get(&pair_id) {
            let docs: Vec<DocId> = pair.documents().iter().map(|d| d.doc_id.clone()).collect();
            for doc in docs {
                let ids: Vec<MentionId> = self
                    .by_doc
                    .get(&doc)
                    .map(|s| s.iter().cloned().collect())
                    .unwrap_or_default();
                for id in ids {
                    if let Some(m) = self.mentions.get_mut(&id) {
                        m.token_span = table.covering_tokens(&doc, m.span);
                    }
                }
            }
        }
        self.embeddings.insert(pair_id, table);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub document_pairs: usize,
    pub documents: usize,
    pub mentions: usize,
    /// Clusters with at least two mentions.
    pub clusters: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Counts documents, active mentions and non-singleton clusters, and lists
/// every invariant violation found in the corpus and cluster set.
pub fn validate_corpus(corpus: &Corpus, clusters: &ClusterSet) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |subject: String, message: String| violations.push(Violation { subject, message });

    for pair in corpus.pairs.values() {
        if pair.news_doc.kind != DocKind::News {
            push(pair.pair_id.to_string(), "news_doc is not of kind news".into());
        }
        if pair.sci_doc.kind != DocKind::Science {
            push(pair.pair_id.to_string(), "sci_doc is not of kind science".into());
        }
        for doc in pair.documents() {
            if doc.summary_text.trim().is_empty() {
                push(doc.doc_id.to_string(), "empty summary_text".into());
            }
        }
    }

    for m in corpus.mentions.values() {
        let doc = match corpus.document(&m.doc_id) {
            Ok(d) => d,
            Err(e) => {
                push(m.mention_id.to_string(), e.to_string());
                continue;
            }
        };
        if let Err(e) = m.span.check_within(doc.summary_len()) {
            push(m.mention_id.to_string(), e.to_string());
            continue;
        }
        match char_slice(&doc.summary_text, m.span) {
            Some(s) if s == m.surface => {}
            _ => push(
                m.mention_id.to_string(),
                "surface does not match summary_text at the stored offsets".into(),
            ),
        }
        if let (Some(ts), Ok(pair)) = (m.token_span, corpus.pair_of_doc(&m.doc_id)) {
            if let Some(table) = corpus.embeddings.get(&pair.pair_id) {
                if !table.span_covers(ts, &m.doc_id, m.span) {
                    push(
                        m.mention_id.to_string(),
                        "token_span does not cover the mention's characters".into(),
                    );
                }
            }
        }
    }

    let mut seen: BTreeMap<&MentionId, ClusterId> = BTreeMap::new();
    for (cid, members) in clusters.iter() {
        for m in members {
            if !corpus.mentions.contains_key(m) {
                push(cid.to_string(), format!("member {m} is not a stored mention"));
            }
            if let Some(prev) = seen.insert(m, cid) {
                push(
                    cid.to_string(),
                    format!("mention {m} also belongs to cluster {prev}"),
                );
            }
        }
    }

    ValidationReport {
        document_pairs: corpus.pairs.len(),
        documents: corpus.doc_index.len(),
        mentions: corpus.mentions.values().filter(|m| m.is_active()).count(),
        clusters: clusters.iter().filter(|(_, m)| m.len() >= 2).count(),
        violations,
    }
}
