use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ingestion::EmbeddingTable;
use crate::model::{
    AnnotatorId, CandidatePair, CharSpan, ClusterId, DocumentPair, Gold, Mention, MentionId,
    MergeOutcome, PairKey, Verdict,
};

use super::QueueConfig;

/// A span change proposed together with a verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanEdit {
    pub mention_id: MentionId,
    pub span: CharSpan,
}

/// One annotator's verdict on one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub event_id: u64,
    pub annotator_id: AnnotatorId,
    pub pair_key: PairKey,
    pub verdict: Verdict,
    pub difficult: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed_span_edit: Option<SpanEdit>,
    pub timestamp: DateTime<Utc>,
    /// Earlier event by the same annotator on the same pair that this one
    /// replaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_token: Option<String>,
}

/// Everything that changes engine state. Replaying the same sequence of
/// events always reproduces the same state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Configured {
        config: QueueConfig,
    },
    PairsIngested {
        pairs: Vec<DocumentPair>,
    },
    MentionsAdded {
        mentions: Vec<Mention>,
    },
    EmbeddingsLoaded {
        table: EmbeddingTable,
    },
    CandidatesAdded {
        pairs: Vec<CandidatePair>,
    },
    AnnotatorRegistered {
        annotator_id: AnnotatorId,
    },
    Claimed {
        annotator_id: AnnotatorId,
        pair_key: PairKey,
        at: DateTime<Utc>,
        expires_at: DateTime<Utc>,
    },
    Annotated(AnnotationEvent),
    PairProposed {
        annotator_id: AnnotatorId,
        shown_pair_key: PairKey,
        mention: Mention,
        pair: CandidatePair,
        at: DateTime<Utc>,
        expires_at: DateTime<Utc>,
    },
    SpanAdjusted {
        annotator_id: AnnotatorId,
        old_mention: MentionId,
        new_mention: Mention,
        /// Pending pairs replaced by re-keyed, re-scored pairs.
        rekeyed: Vec<(PairKey, CandidatePair)>,
        /// Pending pairs whose re-keyed version already existed.
        dropped: Vec<PairKey>,
        at: DateTime<Utc>,
    },
    GoldDerived {
        pair_key: PairKey,
        gold: Gold,
        flagged_difficult: bool,
        at: DateTime<Utc>,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Configured { .. } => "configured",
            Event::PairsIngested { .. } => "pairs_ingested",
            Event::MentionsAdded { .. } => "mentions_added",
            Event::EmbeddingsLoaded { .. } => "embeddings_loaded",
            Event::CandidatesAdded { .. } => "candidates_added",
            Event::AnnotatorRegistered { .. } => "annotator_registered",
            Event::Claimed { .. } => "claimed",
            Event::Annotated(_) => "annotated",
            Event::PairProposed { .. } => "pair_proposed",
            Event::SpanAdjusted { .. } => "span_adjusted",
            Event::GoldDerived { .. } => "gold_derived",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    /// A "no" verdict on two mentions already linked through other verdicts.
    NoWithinCluster,
    /// A "yes" verdict joined clusters between which a "no" verdict exists.
    YesAcrossNoLink,
}

/// A contradiction between verdicts, left for human adjudication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub pair_key: PairKey,
    pub kind: ConflictKind,
    pub cluster: ClusterId,
    /// Previously recorded "no" pairs contradicted by this merge.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contradicted: Vec<PairKey>,
    pub seq: u64,
}

/// Result of a verdict submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDelta {
    pub event_id: u64,
    pub pair_key: PairKey,
    pub iaa: bool,
    /// False when the pair is IAA-flagged and gold awaits consensus.
    pub resolved: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict: Option<ConflictReport>,
}

impl StateDelta {
    /// True when the clustering changed.
    pub fn clusters_changed(&self) -> bool {
        matches!(self.merge, Some(MergeOutcome::Merged { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldOutcome {
    pub pair_key: PairKey,
    pub gold: Gold,
    pub yes: usize,
    pub no: usize,
    pub flagged_difficult: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict: Option<ConflictReport>,
}
