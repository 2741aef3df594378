//! The annotation protocol as an event-sourced state machine.
//!
//! Every mutation is first turned into an [`Event`], handed to the engine's
//! [`EventSink`] (which must persist it before returning), and only then
//! applied to the in-memory [`State`]. Replaying a log through
//! [`Engine::replay`] reproduces the state exactly.
//!
//! Queue policy: IAA-flagged pairs the annotator has not answered come first
//! while the annotator is under the weekly IAA cap; then the annotator's own
//! live claims; then unclaimed, unanswered pending pairs in rank order.

mod config;
mod events;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{sample_iaa, QueueConfig};
pub use events::{
    AnnotationEvent, ConflictKind, ConflictReport, Event, GoldOutcome, SpanEdit, StateDelta,
};

use crate::agreement::{self, AgreementReport, IaaItem};
use crate::exec::Execution;
use crate::ingestion::{
    match_documents, DocumentMeta, EmbeddingError, EmbeddingTable, MatchConfig, ParsedMentions,
    ParsedPairs, RecordError,
};
use crate::model::{
    self, AnnotatorId, CandidatePair, CharSpan, ClusterSet, Corpus, DocId, Gold, Mention,
    MentionId, MergeOutcome, ModelError, PairId, PairKey, PairStatus, Split, ValidationReport,
    Verdict,
};
use crate::pairgen::{self, rank_candidates};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown annotator {0}")]
    UnknownAnnotator(AnnotatorId),
    #[error("unknown candidate pair {0}")]
    UnknownPair(PairKey),
    #[error("unknown document pair {0}")]
    UnknownDocumentPair(PairId),
    #[error("no live claim by {annotator} on {pair_key}")]
    StaleClaim {
        annotator: AnnotatorId,
        pair_key: PairKey,
    },
    #[error("{annotator} reached the weekly IAA cap of {cap} in {week}")]
    CapReached {
        annotator: AnnotatorId,
        week: String,
        cap: u32,
    },
    #[error("pair {0} is not flagged for IAA")]
    NotIaa(PairKey),
    #[error("pair {pair_key} has {found} verdicts; consensus needs at least 2")]
    InsufficientVerdicts { pair_key: PairKey, found: usize },
    #[error("proposed pair duplicates existing pair {existing}")]
    Duplicate { existing: PairKey },
    #[error("mention {mention} belongs to resolved IAA pair {pair_key}")]
    LockedByIaa {
        mention: MentionId,
        pair_key: PairKey,
    },
    #[error("mention {0} was replaced by a newer span")]
    Superseded(MentionId),
    #[error("embeddings for pair {0} are already loaded with different content")]
    EmbeddingConflict(PairId),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("event log: {0}")]
    Log(String),
    #[error("replay: {0}")]
    Replay(String),
}

/// Durable destination for events. `append` must not return before the
/// event is persisted; it returns the event's sequence number.
pub trait EventSink {
    fn append(&mut self, event: &Event) -> Result<u64, EngineError>;

    /// Sequence number the next appended event will receive.
    fn next_seq(&self) -> u64;

    /// Called after an appended event has been applied.
    fn applied(&mut self, _seq: u64, _state: &State) -> Result<(), EngineError> {
        Ok(())
    }
}

/// In-memory log, used by tests and simulations.
#[derive(Debug, Clone, Default)]
pub struct MemoryLog {
    pub events: Vec<Event>,
}

impl EventSink for MemoryLog {
    fn append(&mut self, event: &Event) -> Result<u64, EngineError> {
        self.events.push(event.clone());
        Ok(self.events.len() as u64)
    }

    fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub verdict: Verdict,
    pub difficult: bool,
    pub event_id: u64,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorState {
    /// First-time IAA submissions per ISO week (`"2021-W07"`).
    pub iaa_by_week: BTreeMap<String, u32>,
}

/// ISO-8601 week label of a UTC instant.
pub fn iso_week(t: DateTime<Utc>) -> String {
    let w = t.iso_week();
    format!("{}-W{:02}", w.year(), w.week())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    config: QueueConfig,
    corpus: Corpus,
    candidates: BTreeMap<PairKey, CandidatePair>,
    /// Every candidate key in queue order.
    queue: Vec<PairKey>,
    answers: BTreeMap<PairKey, BTreeMap<AnnotatorId, Answer>>,
    claims: BTreeMap<PairKey, BTreeMap<AnnotatorId, DateTime<Utc>>>,
    annotators: BTreeMap<AnnotatorId, AnnotatorState>,
    clusters: ClusterSet,
    no_links: BTreeSet<PairKey>,
    auto_difficult: BTreeSet<PairKey>,
    conflicts: Vec<ConflictReport>,
    tokens: BTreeMap<String, StateDelta>,
    last_seq: u64,
}

impl State {
    fn new(config: QueueConfig) -> Self {
        Self {
            config,
            corpus: Corpus::new(),
            candidates: BTreeMap::new(),
            queue: Vec::new(),
            answers: BTreeMap::new(),
            claims: BTreeMap::new(),
            annotators: BTreeMap::new(),
            clusters: ClusterSet::new(),
            no_links: BTreeSet::new(),
            auto_difficult: BTreeSet::new(),
            conflicts: Vec::new(),
            tokens: BTreeMap::new(),
            last_seq: 0,
        }
    }

    pub fn config(&self) -> &QueueConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn clusters(&self) -> &ClusterSet {
        &self.clusters
    }

    pub fn conflicts(&self) -> &[ConflictReport] {
        &self.conflicts
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn candidate(&self, key: &PairKey) -> Option<&CandidatePair> {
        self.candidates.get(key)
    }

    /// Candidates in queue order.
    pub fn queue(&self) -> impl Iterator<Item = &CandidatePair> {
        self.queue.iter().filter_map(|k| self.candidates.get(k))
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    pub fn answers(&self, key: &PairKey) -> Option<&BTreeMap<AnnotatorId, Answer>> {
        self.answers.get(key)
    }

    pub fn annotators(&self) -> impl Iterator<Item = &AnnotatorId> {
        self.annotators.keys()
    }

    pub fn is_registered(&self, a: &AnnotatorId) -> bool {
        self.annotators.contains_key(a)
    }

    pub fn iaa_completed_in_week(&self, a: &AnnotatorId, now: DateTime<Utc>) -> u32 {
        self.annotators
            .get(a)
            .and_then(|s| s.iaa_by_week.get(&iso_week(now)))
            .copied()
            .unwrap_or(0)
    }

    pub fn annotator_state(&self, a: &AnnotatorId) -> Option<&AnnotatorState> {
        self.annotators.get(a)
    }

    fn live_claimants(&self, key: &PairKey, now: DateTime<Utc>) -> impl Iterator<Item = &AnnotatorId> {
        self.claims
            .get(key)
            .into_iter()
            .flatten()
            .filter(move |(_, exp)| **exp > now)
            .map(|(a, _)| a)
    }

    pub fn has_live_claim(&self, key: &PairKey, a: &AnnotatorId, now: DateTime<Utc>) -> bool {
        self.live_claimants(key, now).any(|x| x == a)
    }

    /// Annotators holding a live claim on `key`.
    pub fn claim_holders(&self, key: &PairKey, now: DateTime<Utc>) -> Vec<AnnotatorId> {
        self.live_claimants(key, now).cloned().collect()
    }

    fn answered_by(&self, key: &PairKey, a: &AnnotatorId) -> bool {
        self.answers.get(key).is_some_and(|m| m.contains_key(a))
    }

    fn unanswered(&self, key: &PairKey) -> bool {
        self.answers.get(key).is_none_or(|m| m.is_empty())
    }

    /// Marked difficult by any annotator, or a consensus tie.
    pub fn is_difficult(&self, key: &PairKey) -> bool {
        self.auto_difficult.contains(key)
            || self
                .answers
                .get(key)
                .is_some_and(|m| m.values().any(|a| a.difficult))
    }

    pub fn validate(&self) -> ValidationReport {
        model::validate_corpus(&self.corpus, &self.clusters)
    }

    /// The next pair `annotator` should see, without claiming it.
    pub fn peek_task(&self, annotator: &AnnotatorId, now: DateTime<Utc>) -> Option<&CandidatePair> {
        let under_cap = self.iaa_completed_in_week(annotator, now) < self.config.weekly_iaa_cap;
        if under_cap {
            if let Some(p) = self
                .queue()
                .find(|p| p.iaa && !self.answered_by(&p.pair_key, annotator))
            {
                return Some(p);
            }
        }
        let open = |p: &&CandidatePair| !p.iaa && p.status != PairStatus::Resolved && self.unanswered(&p.pair_key);
        if let Some(p) = self
            .queue()
            .filter(open)
            .find(|p| self.has_live_claim(&p.pair_key, annotator, now))
        {
            return Some(p);
        }
        self.queue()
            .filter(open)
            .find(|p| self.live_claimants(&p.pair_key, now).next().is_none())
    }

    /// IAA items with every annotator's verdict and the difficult flag.
    pub fn iaa_items(&self) -> Vec<IaaItem> {
        self.queue()
            .filter(|p| p.iaa)
            .filter_map(|p| {
                let answers = self.answers.get(&p.pair_key)?;
                Some(IaaItem {
                    pair_key: p.pair_key.clone(),
                    votes: answers.iter().map(|(a, ans)| (a.clone(), ans.verdict)).collect(),
                    difficult: self.is_difficult(&p.pair_key),
                })
            })
            .collect()
    }

    pub fn agreement_report(&self) -> AgreementReport {
        agreement::agreement_report(&self.iaa_items())
    }

    /// Clusters restricted to mentions of document pairs in `split` (all
    /// pairs when `None`), as cluster-file records.
    pub fn cluster_records(&self, split: Option<Split>) -> Vec<crate::evaluation::ClusterRecord> {
        let mut out = Vec::new();
        for (cid, members) in self.clusters.iter() {
            for m in members {
                let Ok(mention) = self.corpus.mention(m) else { continue };
                let Ok(pair) = self.corpus.pair_of_doc(&mention.doc_id) else { continue };
                if split.is_some() && pair.split != split {
                    continue;
                }
                out.push(crate::evaluation::ClusterRecord {
                    doc_id: mention.doc_id.clone(),
                    start_char: mention.span.start,
                    end_char: mention.span.end,
                    cluster_id: cid.to_string(),
                });
            }
        }
        out
    }

    /// Pairs flagged difficult, for guideline review.
    pub fn difficult_records(&self) -> Vec<DifficultRecord> {
        self.queue()
            .filter(|p| self.is_difficult(&p.pair_key))
            .map(|p| {
                let flagged_by = self
                    .answers
                    .get(&p.pair_key)
                    .map(|m| m.iter().filter(|(_, a)| a.difficult).map(|(k, _)| k.clone()).collect())
                    .unwrap_or_default();
                let surface = |id: &MentionId| self.corpus.mention(id).map(|m| m.surface.clone()).unwrap_or_default();
                DifficultRecord {
                    pair_key: p.pair_key.clone(),
                    news_surface: surface(&p.news_mention),
                    sci_surface: surface(&p.sci_mention),
                    flagged_by,
                    consensus_tie: self.auto_difficult.contains(&p.pair_key),
                    gold: p.gold,
                }
            })
            .collect()
    }

    fn rerank(&mut self) {
        let all: Vec<CandidatePair> = self.candidates.values().cloned().collect();
        self.queue = rank_candidates(all, self.config.rank_mode)
            .into_iter()
            .map(|p| p.pair_key)
            .collect();
    }

    fn link_yes(&mut self, key: &PairKey, seq: u64) -> (MergeOutcome, Option<ConflictReport>) {
        let (a, b) = key.members();
        let side = |m: &MentionId| -> BTreeSet<MentionId> {
            self.clusters
                .cluster_of(m)
                .and_then(|c| self.clusters.members(c))
                .cloned()
                .unwrap_or_else(|| BTreeSet::from([m.clone()]))
        };
        let (sa, sb) = (side(a), side(b));
        let outcome = self.clusters.merge(a, b);
        let MergeOutcome::Merged { into, .. } = outcome else {
            return (outcome, None);
        };
        let contradicted: Vec<PairKey> = self
            .no_links
            .iter()
            .filter(|k| {
                let (x, y) = k.members();
                (sa.contains(x) && sb.contains(y)) || (sb.contains(x) && sa.contains(y))
            })
            .cloned()
            .collect();
        let conflict = (!contradicted.is_empty()).then(|| ConflictReport {
            pair_key: key.clone(),
            kind: ConflictKind::YesAcrossNoLink,
            cluster: into,
            contradicted,
            seq,
        });
        (outcome, conflict)
    }

    fn link_no(&mut self, key: &PairKey, seq: u64) -> Option<ConflictReport> {
        self.no_links.insert(key.clone());
        let (a, b) = key.members();
        match (self.clusters.cluster_of(a), self.clusters.cluster_of(b)) {
            (Some(x), Some(y)) if x == y => Some(ConflictReport {
                pair_key: key.clone(),
                kind: ConflictKind::NoWithinCluster,
                cluster: x,
                contradicted: vec![],
                seq,
            }),
            _ => None,
        }
    }

    fn apply(&mut self, seq: u64, event: &Event) -> Applied {
        self.last_seq = seq;
        match event {
            Event::Configured { config } => {
                self.config = config.clone();
                self.rerank();
                Applied::None
            }
            Event::PairsIngested { pairs } => {
                for p in pairs {
                    self.corpus.insert_pair(p.clone());
                }
                Applied::None
            }
            Event::MentionsAdded { mentions } => {
                for m in mentions {
                    self.corpus.insert_mention(m.clone());
                }
                Applied::None
            }
            Event::EmbeddingsLoaded { table } => {
                self.corpus.insert_embeddings(table.clone());
                Applied::None
            }
            Event::CandidatesAdded { pairs } => {
                for p in pairs {
                    self.candidates.insert(p.pair_key.clone(), p.clone());
                }
                self.rerank();
                Applied::None
            }
            Event::AnnotatorRegistered { annotator_id } => {
                self.annotators.entry(annotator_id.clone()).or_default();
                Applied::None
            }
            Event::Claimed {
                annotator_id,
                pair_key,
                at,
                expires_at,
            } => {
                for holders in self.claims.values_mut() {
                    holders.retain(|_, exp| *exp > *at);
                }
                self.claims.retain(|_, h| !h.is_empty());
                self.claims
                    .entry(pair_key.clone())
                    .or_default()
                    .insert(annotator_id.clone(), *expires_at);
                let cand = self.candidates.get_mut(pair_key).expect("claimed pair exists");
                if !cand.iaa {
                    cand.status = PairStatus::Claimed;
                }
                Applied::Candidate(cand.clone())
            }
            Event::Annotated(ev) => Applied::Delta(self.apply_annotation(seq, ev)),
            Event::PairProposed {
                annotator_id,
                mention,
                pair,
                expires_at,
                ..
            } => {
                self.corpus.insert_mention(mention.clone());
                let mut pair = pair.clone();
                pair.status = PairStatus::Claimed;
                self.candidates.insert(pair.pair_key.clone(), pair.clone());
                self.claims
                    .entry(pair.pair_key.clone())
                    .or_default()
                    .insert(annotator_id.clone(), *expires_at);
                self.rerank();
                Applied::Candidate(pair)
            }
            Event::SpanAdjusted {
                old_mention,
                new_mention,
                rekeyed,
                dropped,
                ..
            } => {
                self.corpus.insert_mention(new_mention.clone());
                self.corpus.supersede(old_mention, &new_mention.mention_id);
                for key in dropped {
                    self.candidates.remove(key);
                    self.claims.remove(key);
                }
                for (old_key, new_pair) in rekeyed {
                    self.candidates.remove(old_key);
                    if let Some(holders) = self.claims.remove(old_key) {
                        self.claims.insert(new_pair.pair_key.clone(), holders);
                    }
                    self.candidates.insert(new_pair.pair_key.clone(), new_pair.clone());
                }
                self.rerank();
                Applied::Mention(new_mention.clone())
            }
            Event::GoldDerived {
                pair_key,
                gold,
                flagged_difficult,
                ..
            } => {
                let cand = self.candidates.get_mut(pair_key).expect("gold for known pair");
                cand.gold = Some(*gold);
                cand.status = PairStatus::Resolved;
                if *flagged_difficult {
                    self.auto_difficult.insert(pair_key.clone());
                }
                let (merge, conflict) = match gold {
                    Gold::Coreferent => {
                        let (m, c) = self.link_yes(pair_key, seq);
                        (Some(m), c)
                    }
                    Gold::NotCoreferent => (None, self.link_no(pair_key, seq)),
                    Gold::Unresolved => (None, None),
                };
                if let Some(c) = &conflict {
                    self.conflicts.push(c.clone());
                }
                let (yes, no) = self.vote_counts(pair_key);
                Applied::Gold(GoldOutcome {
                    pair_key: pair_key.clone(),
                    gold: *gold,
                    yes,
                    no,
                    flagged_difficult: *flagged_difficult,
                    merge,
                    conflict,
                })
            }
        }
    }

    fn apply_annotation(&mut self, seq: u64, ev: &AnnotationEvent) -> StateDelta {
        let key = &ev.pair_key;
        let iaa = self.candidates.get(key).is_some_and(|c| c.iaa);
        self.answers.entry(key.clone()).or_default().insert(
            ev.annotator_id.clone(),
            Answer {
                verdict: ev.verdict,
                difficult: ev.difficult,
                event_id: ev.event_id,
                at: ev.timestamp,
            },
        );
        if let Some(h) = self.claims.get_mut(key) {
            h.remove(&ev.annotator_id);
            if h.is_empty() {
                self.claims.remove(key);
            }
        }
        let mut delta = StateDelta {
            event_id: ev.event_id,
            pair_key: key.clone(),
            iaa,
            resolved: false,
            merge: None,
            conflict: None,
        };
        if iaa {
            if ev.supersedes.is_none() {
                *self
                    .annotators
                    .entry(ev.annotator_id.clone())
                    .or_default()
                    .iaa_by_week
                    .entry(iso_week(ev.timestamp))
                    .or_insert(0) += 1;
            }
        } else {
            let cand = self.candidates.get_mut(key).expect("annotated pair exists");
            cand.status = PairStatus::Resolved;
            cand.gold = Some(match ev.verdict {
                Verdict::Yes => Gold::Coreferent,
                Verdict::No => Gold::NotCoreferent,
            });
            delta.resolved = true;
            match ev.verdict {
                Verdict::Yes => {
                    let (m, c) = self.link_yes(key, seq);
                    delta.merge = Some(m);
                    delta.conflict = c;
                }
                Verdict::No => delta.conflict = self.link_no(key, seq),
            }
        }
        if let Some(c) = &delta.conflict {
            self.conflicts.push(c.clone());
        }
        if let Some(t) = &ev.idempotency_token {
            self.tokens.insert(t.clone(), delta.clone());
        }
        delta
    }

    fn vote_counts(&self, key: &PairKey) -> (usize, usize) {
        let answers = self.answers.get(key);
        let count = |v: Verdict| answers.map_or(0, |m| m.values().filter(|a| a.verdict == v).count());
        (count(Verdict::Yes), count(Verdict::No))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultRecord {
    pub pair_key: PairKey,
    pub news_surface: String,
    pub sci_surface: String,
    pub flagged_by: Vec<AnnotatorId>,
    pub consensus_tie: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
}

enum Applied {
    None,
    Candidate(CandidatePair),
    Delta(StateDelta),
    Mention(Mention),
    Gold(GoldOutcome),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub new: usize,
    pub unchanged: usize,
    pub errors: Vec<RecordError>,
    /// Pairs whose metadata fails the matching rule; they are still stored.
    pub match_warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MentionLoadReport {
    pub added: usize,
    pub existing: usize,
    pub errors: Vec<RecordError>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub added: usize,
    pub iaa: usize,
    pub warnings: Vec<String>,
}

/// Outcome of a verdict submission, distinguishing idempotent replays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submitted {
    pub delta: StateDelta,
    /// True when the idempotency token had been seen and nothing changed.
    pub replayed: bool,
}

/// A mention span in a document, not yet resolved to a mention id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRef {
    pub doc_id: DocId,
    pub start_char: usize,
    pub end_char: usize,
}

pub struct Engine<L: EventSink = MemoryLog> {
    state: State,
    log: L,
}

impl Engine<MemoryLog> {
    /// Fresh engine with an in-memory log.
    pub fn in_memory(config: QueueConfig) -> Result<Self, EngineError> {
        Engine::create(config, MemoryLog::default())
    }

    pub fn events(&self) -> &[Event] {
        &self.log.events
    }
}

impl<L: EventSink> Engine<L> {
    /// Starts a new engine on an empty log, recording the configuration as
    /// the first event.
    pub fn create(config: QueueConfig, log: L) -> Result<Self, EngineError> {
        config.validate()?;
        if log.next_seq() != 1 {
            return Err(EngineError::Log("create() needs an empty log".into()));
        }
        let mut engine = Self {
            state: State::new(config.clone()),
            log,
        };
        engine.commit(Event::Configured { config })?;
        Ok(engine)
    }

    /// Rebuilds state by applying `events` (with their sequence numbers) in
    /// order, optionally on top of a snapshot.
    pub fn replay(
        snapshot: Option<State>,
        events: impl IntoIterator<Item = (u64, Event)>,
        log: L,
    ) -> Result<Self, EngineError> {
        let mut state = snapshot;
        for (seq, ev) in events {
            let st = match (&mut state, &ev) {
                (Some(s), _) => s,
                (None, Event::Configured { config }) => state.insert(State::new(config.clone())),
                (None, other) => {
                    return Err(EngineError::Replay(format!(
                        "log starts with {} instead of configured",
                        other.kind()
                    )))
                }
            };
            if seq != st.last_seq + 1 {
                return Err(EngineError::Replay(format!(
                    "sequence gap: expected {}, found {seq}",
                    st.last_seq + 1
                )));
            }
            st.apply(seq, &ev);
        }
        let state = state.ok_or_else(|| EngineError::Replay("empty log".into()))?;
        if log.next_seq() != state.last_seq + 1 {
            return Err(EngineError::Replay(format!(
                "log continues at {} but state is at {}",
                log.next_seq(),
                state.last_seq
            )));
        }
        Ok(Self { state, log })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn log(&self) -> &L {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut L {
        &mut self.log
    }

    pub fn into_parts(self) -> (State, L) {
        (self.state, self.log)
    }

    fn commit(&mut self, event: Event) -> Result<Applied, EngineError> {
        let seq = self.log.append(&event)?;
        let applied = self.state.apply(seq, &event);
        self.log.applied(seq, &self.state)?;
        Ok(applied)
    }

    /// Records a configuration change. Only pairs generated afterwards are
    /// sampled with the new settings.
    pub fn reconfigure(&mut self, config: QueueConfig) -> Result<bool, EngineError> {
        config.validate()?;
        if config == self.state.config {
            return Ok(false);
        }
        self.commit(Event::Configured { config })?;
        Ok(true)
    }

    pub fn register_annotator(&mut self, annotator: &AnnotatorId) -> Result<bool, EngineError> {
        model::check_identifier(annotator.as_str())?;
        if self.state.is_registered(annotator) {
            return Ok(false);
        }
        self.commit(Event::AnnotatorRegistered {
            annotator_id: annotator.clone(),
        })?;
        Ok(true)
    }

    /// Stores new document pairs. Identical re-ingestion is a no-op; a known
    /// pair_id with different content is reported as a conflict.
    pub fn ingest_document_pairs(
        &mut self,
        parsed: ParsedPairs,
        matching: &MatchConfig,
    ) -> Result<IngestReport, EngineError> {
        let mut report = IngestReport {
            errors: parsed.errors,
            ..Default::default()
        };
        let mut staged = Corpus::new();
        let mut fresh = Vec::new();
        for (line, pair) in parsed.pairs {
            let verdict = self
                .state
                .corpus
                .check_new_pair(&pair)
                .and_then(|is_new| if is_new { staged.check_new_pair(&pair) } else { Ok(false) });
            match verdict {
                Ok(true) => {
                    let news = DocumentMeta::from(&pair.news_doc);
                    let sci = DocumentMeta::from(&pair.sci_doc);
                    match match_documents(&news, &sci, matching) {
                        Ok((true, _)) => {}
                        Ok((false, score)) => report.match_warnings.push(format!(
                            "pair {}: metadata does not match ({score:?})",
                            pair.pair_id
                        )),
                        Err(e) => report.match_warnings.push(format!("pair {}: {e}", pair.pair_id)),
                    }
                    staged.insert_pair(pair.clone());
                    fresh.push(pair);
                }
                Ok(false) => report.unchanged += 1,
                Err(message) => report.errors.push(RecordError {
                    line,
                    message: format!("conflict: {message}"),
                }),
            }
        }
        report.new = fresh.len();
        if !fresh.is_empty() {
            self.commit(Event::PairsIngested { pairs: fresh })?;
        }
        report.errors.sort_by_key(|e| e.line);
        Ok(report)
    }

    pub fn load_mentions(&mut self, parsed: ParsedMentions) -> Result<MentionLoadReport, EngineError> {
        let mut report = MentionLoadReport {
            errors: parsed.errors,
            ..Default::default()
        };
        let mut batch: BTreeMap<MentionId, Mention> = BTreeMap::new();
        for (line, rec) in parsed.mentions {
            let built = CharSpan::new(rec.start_char, rec.end_char)
                .and_then(|span| self.state.corpus.build_mention(&rec.doc_id, span));
            match built {
                Ok(m) => {
                    let known = self
                        .state
                        .corpus
                        .mention(&m.mention_id)
                        .is_ok_and(|x| x.is_active());
                    if known || batch.contains_key(&m.mention_id) {
                        report.existing += 1;
                    } else {
                        batch.insert(m.mention_id.clone(), m);
                    }
                }
                Err(e) => report.errors.push(RecordError {
                    line,
                    message: e.to_string(),
                }),
            }
        }
        report.added = batch.len();
        if !batch.is_empty() {
            self.commit(Event::MentionsAdded {
                mentions: batch.into_values().collect(),
            })?;
        }
        report.errors.sort_by_key(|e| e.line);
        Ok(report)
    }

    /// Attaches a token table to its document pair. Returns false when the
    /// identical table was already loaded.
    pub fn load_embeddings(&mut self, table: EmbeddingTable) -> Result<bool, EngineError> {
        let pair = self
            .state
            .corpus
            .pair(&table.pair_id)
            .ok_or_else(|| EngineError::UnknownDocumentPair(table.pair_id.clone()))?;
        table.check_against(pair)?;
        if let Some(existing) = self.state.corpus.embeddings(&table.pair_id) {
            return if existing == &table {
                Ok(false)
            } else {
                Err(EngineError::EmbeddingConflict(table.pair_id.clone()))
            };
        }
        self.commit(Event::EmbeddingsLoaded { table })?;
        Ok(true)
    }

    /// Generates, scores and IAA-samples candidates for every document pair.
    pub fn generate_pairs(&mut self, exec: Execution) -> Result<GenerationReport, EngineError> {
        let ids: Vec<PairId> = self.state.corpus.pairs().map(|p| p.pair_id.clone()).collect();
        let known = &self.state.candidates;
        let exists = |k: &PairKey| known.contains_key(k);
        let mut gen = pairgen::generate_all(&self.state.corpus, &ids, &exists, exec);
        for p in &mut gen.pairs {
            p.iaa = sample_iaa(&p.pair_key, &self.state.config);
        }
        let report = GenerationReport {
            added: gen.pairs.len(),
            iaa: gen.pairs.iter().filter(|p| p.iaa).count(),
            warnings: gen.warnings,
        };
        if !gen.pairs.is_empty() {
            self.commit(Event::CandidatesAdded { pairs: gen.pairs })?;
        }
        Ok(report)
    }

    /// Serves and claims the next task for `annotator`.
    pub fn next_task(
        &mut self,
        annotator: &AnnotatorId,
        now: DateTime<Utc>,
    ) -> Result<Option<CandidatePair>, EngineError> {
        if !self.state.is_registered(annotator) {
            return Err(EngineError::UnknownAnnotator(annotator.clone()));
        }
        let Some(task) = self.state.peek_task(annotator, now) else {
            return Ok(None);
        };
        let event = Event::Claimed {
            annotator_id: annotator.clone(),
            pair_key: task.pair_key.clone(),
            at: now,
            expires_at: now + self.state.config.claim_lease(),
        };
        match self.commit(event)? {
            Applied::Candidate(c) => Ok(Some(c)),
            _ => unreachable!("claim yields a candidate"),
        }
    }

    pub fn submit_annotation(
        &mut self,
        annotator: &AnnotatorId,
        pair_key: &PairKey,
        verdict: Verdict,
        difficult: bool,
        now: DateTime<Utc>,
        idempotency_token: Option<String>,
    ) -> Result<Submitted, EngineError> {
        if let Some(delta) = idempotency_token.as_ref().and_then(|t| self.state.tokens.get(t)) {
            return Ok(Submitted {
                delta: delta.clone(),
                replayed: true,
            });
        }
        if !self.state.is_registered(annotator) {
            return Err(EngineError::UnknownAnnotator(annotator.clone()));
        }
        let cand = self
            .state
            .candidate(pair_key)
            .ok_or_else(|| EngineError::UnknownPair(pair_key.clone()))?;
        let previous = self
            .state
            .answers(pair_key)
            .and_then(|m| m.get(annotator))
            .map(|a| a.event_id);
        let stale = || EngineError::StaleClaim {
            annotator: annotator.clone(),
            pair_key: pair_key.clone(),
        };
        if cand.iaa {
            if previous.is_none() {
                let done = self.state.iaa_completed_in_week(annotator, now);
                if done >= self.state.config.weekly_iaa_cap {
                    return Err(EngineError::CapReached {
                        annotator: annotator.clone(),
                        week: iso_week(now),
                        cap: self.state.config.weekly_iaa_cap,
                    });
                }
            }
        } else if cand.status == PairStatus::Resolved
            || !self.state.has_live_claim(pair_key, annotator, now)
        {
            return Err(stale());
        }
        let event = Event::Annotated(AnnotationEvent {
            event_id: self.log.next_seq(),
            annotator_id: annotator.clone(),
            pair_key: pair_key.clone(),
            verdict,
            difficult,
            proposed_span_edit: None,
            timestamp: now,
            supersedes: previous,
            idempotency_token,
        });
        match self.commit(event)? {
            Applied::Delta(delta) => Ok(Submitted {
                delta,
                replayed: false,
            }),
            _ => unreachable!("annotation yields a delta"),
        }
    }

    /// Counter-proposal: pairs `keep` (a member of the shown pair) with a
    /// different mention in the other document, queued for this annotator.
    pub fn propose_pair(
        &mut self,
        annotator: &AnnotatorId,
        shown: &PairKey,
        keep: &MentionId,
        alternative: &SpanRef,
        now: DateTime<Utc>,
    ) -> Result<CandidatePair, EngineError> {
        if !self.state.is_registered(annotator) {
            return Err(EngineError::UnknownAnnotator(annotator.clone()));
        }
        let shown_pair = self
            .state
            .candidate(shown)
            .ok_or_else(|| EngineError::UnknownPair(shown.clone()))?;
        if !shown.contains(keep) {
            return Err(ModelError::UnknownMention(keep.clone()).into());
        }
        let corpus = &self.state.corpus;
        let kept = corpus.mention(keep)?;
        let doc_pair = corpus.pair_of_doc(&kept.doc_id)?;
        if alternative.doc_id == kept.doc_id || doc_pair.document(&alternative.doc_id).is_none() {
            return Err(ModelError::CrossDocument {
                a: keep.clone(),
                b: MentionId::from(format!("{}@{}-{}", alternative.doc_id, alternative.start_char, alternative.end_char)),
            }
            .into());
        }
        let span = CharSpan::new(alternative.start_char, alternative.end_char)?;
        let mention = match corpus.find_mention(&alternative.doc_id, span) {
            Some(m) => m.clone(),
            None => corpus.build_mention(&alternative.doc_id, span)?,
        };
        // Duplicate iff both spans overlap the corresponding spans of an
        // existing pair of the same document pair.
        for existing in self.state.candidates.values().filter(|c| c.pair_id == shown_pair.pair_id) {
            let (x, y) = existing.pair_key.members();
            let (mx, my) = (corpus.mention(x)?, corpus.mention(y)?);
            let overlaps = |m: &Mention, other: &Mention| m.doc_id == other.doc_id && m.span.intersects(&other.span);
            if (overlaps(mx, &mention) && overlaps(my, kept)) || (overlaps(my, &mention) && overlaps(mx, kept)) {
                return Err(EngineError::Duplicate {
                    existing: existing.pair_key.clone(),
                });
            }
        }
        // Scored against a corpus view where the new mention is resolved.
        let key = {
            let mut scratch = corpus.clone();
            scratch.insert_mention(mention.clone());
            model::pair_key(&scratch, keep, &mention.mention_id)?
        };
        let (news, sci) = if kept.doc_id == doc_pair.news_doc.doc_id {
            (kept, &mention)
        } else {
            (&mention, kept)
        };
        let pair = CandidatePair {
            pair_key: key,
            pair_id: doc_pair.pair_id.clone(),
            news_mention: news.mention_id.clone(),
            sci_mention: sci.mention_id.clone(),
            similarity: pairgen::score_mentions(corpus, news, sci),
            iaa: false,
            status: PairStatus::Pending,
            gold: None,
        };
        let event = Event::PairProposed {
            annotator_id: annotator.clone(),
            shown_pair_key: shown.clone(),
            mention,
            pair,
            at: now,
            expires_at: now + self.state.config.claim_lease(),
        };
        match self.commit(event)? {
            Applied::Candidate(c) => Ok(c),
            _ => unreachable!("proposal yields a candidate"),
        }
    }

    /// Moves or resizes a mention. Pending, unanswered pairs follow the new
    /// span; answered pairs keep the old version.
    pub fn adjust_span(
        &mut self,
        annotator: &AnnotatorId,
        mention_id: &MentionId,
        new_start: usize,
        new_end: usize,
        now: DateTime<Utc>,
    ) -> Result<Mention, EngineError> {
        if !self.state.is_registered(annotator) {
            return Err(EngineError::UnknownAnnotator(annotator.clone()));
        }
        let corpus = &self.state.corpus;
        let old = corpus.mention(mention_id)?;
        if !old.is_active() {
            return Err(EngineError::Superseded(mention_id.clone()));
        }
        let span = CharSpan::new(new_start, new_end)?;
        if span == old.span {
            return Ok(old.clone());
        }
        if let Some(locked) = self
            .state
            .candidates
            .values()
            .find(|c| c.iaa && c.status == PairStatus::Resolved && c.pair_key.contains(mention_id))
        {
            return Err(EngineError::LockedByIaa {
                mention: mention_id.clone(),
                pair_key: locked.pair_key.clone(),
            });
        }
        let new_mention = match corpus.find_mention(&old.doc_id, span) {
            Some(m) => {
                let mut m = m.clone();
                m.superseded_by = None;
                m
            }
            None => corpus.build_mention(&old.doc_id, span)?,
        };
        let mut scratch = corpus.clone();
        scratch.insert_mention(new_mention.clone());
        let mut rekeyed = Vec::new();
        let mut dropped = Vec::new();
        let mut taken: BTreeSet<PairKey> = BTreeSet::new();
        for cand in self.state.candidates.values() {
            if !cand.pair_key.contains(mention_id)
                || cand.status == PairStatus::Resolved
                || !self.state.unanswered(&cand.pair_key)
            {
                continue;
            }
            let other = cand.pair_key.other(mention_id).expect("member").clone();
            let key = model::pair_key(&scratch, &new_mention.mention_id, &other)?;
            if self.state.candidates.contains_key(&key) || !taken.insert(key.clone()) {
                dropped.push(cand.pair_key.clone());
                continue;
            }
            let other_m = scratch.mention(&other)?;
            let (news, sci) = if cand.news_mention == *mention_id {
                (&new_mention, other_m)
            } else {
                (other_m, &new_mention)
            };
            rekeyed.push((
                cand.pair_key.clone(),
                CandidatePair {
                    pair_key: key,
                    news_mention: news.mention_id.clone(),
                    sci_mention: sci.mention_id.clone(),
                    similarity: pairgen::score_mentions(&scratch, news, sci),
                    ..cand.clone()
                },
            ));
        }
        let event = Event::SpanAdjusted {
            annotator_id: annotator.clone(),
            old_mention: mention_id.clone(),
            new_mention,
            rekeyed,
            dropped,
            at: now,
        };
        match self.commit(event)? {
            Applied::Mention(m) => Ok(m),
            _ => unreachable!("span edit yields a mention"),
        }
    }

    /// Majority label over an IAA pair's verdicts; an exact tie is
    /// unresolved and flagged difficult.
    pub fn consensus_gold(&mut self, pair_key: &PairKey, now: DateTime<Utc>) -> Result<GoldOutcome, EngineError> {
        let cand = self
            .state
            .candidate(pair_key)
            .ok_or_else(|| EngineError::UnknownPair(pair_key.clone()))?;
        if !cand.iaa {
            return Err(EngineError::NotIaa(pair_key.clone()));
        }
        let (yes, no) = self.state.vote_counts(pair_key);
        if yes + no < 2 {
            return Err(EngineError::InsufficientVerdicts {
                pair_key: pair_key.clone(),
                found: yes + no,
            });
        }
        let gold = match yes.cmp(&no) {
            std::cmp::Ordering::Greater => Gold::Coreferent,
            std::cmp::Ordering::Less => Gold::NotCoreferent,
            std::cmp::Ordering::Equal => Gold::Unresolved,
        };
        if cand.gold == Some(gold) {
            return Ok(GoldOutcome {
                pair_key: pair_key.clone(),
                gold,
                yes,
                no,
                flagged_difficult: self.state.auto_difficult.contains(pair_key),
                merge: None,
                conflict: None,
            });
        }
        let event = Event::GoldDerived {
            pair_key: pair_key.clone(),
            gold,
            flagged_difficult: gold == Gold::Unresolved,
            at: now,
        };
        match self.commit(event)? {
            Applied::Gold(g) => Ok(g),
            _ => unreachable!("gold derivation yields an outcome"),
        }
    }
}
