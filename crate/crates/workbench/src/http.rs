//! HTTP API over a shared engine. Mutations are serialized through one mutex,
//! so claims are atomic with respect to concurrent requests.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State as AxState};
use axum::http::{header, HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cdcr_core::engine::{Engine, EngineError, EventSink, SpanRef, State};
use cdcr_core::evaluation::write_cluster_file;
use cdcr_core::model::{
    AnnotatorId, CandidatePair, DocId, Document, Mention, MentionId, ModelError, PairKey, Split, ValidationReport,
    Verdict,
};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Set on annotation responses served from the idempotency cache.
pub const REPLAYED_HEADER: &str = "idempotent-replayed";

pub struct AppState<L: EventSink> {
    engine: Arc<Mutex<Engine<L>>>,
    clock: Clock,
}

impl<L: EventSink> Clone for AppState<L> {
    fn clone(&self) -> Self {
        Self {
            engine: self.engine.clone(),
            clock: self.clock.clone(),
        }
    }
}

impl<L: EventSink> AppState<L> {
    pub fn new(engine: Engine<L>, clock: Clock) -> Self {
        Self {
            engine: Arc::new(Mutex::new(engine)),
            clock,
        }
    }

    pub fn system_clock(engine: Engine<L>) -> Self {
        Self::new(engine, Arc::new(Utc::now))
    }

    pub fn engine(&self) -> MutexGuard<'_, Engine<L>> {
        // A panicked handler cannot leave the engine half-applied: commit
        // appends before applying and apply does not fail.
        self.engine.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn shared(&self) -> Arc<Mutex<Engine<L>>> {
        self.engine.clone()
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }
}

pub fn router<L: EventSink + Send + 'static>(state: AppState<L>) -> Router {
    Router::new()
        .route("/api/task", get(get_task::<L>))
        .route("/api/annotation", post(post_annotation::<L>))
        .route("/api/pair", post(post_pair::<L>))
        .route("/api/span", post(post_span::<L>))
        .route("/api/consensus", post(post_consensus::<L>))
        .route("/api/stats/agreement", get(get_agreement::<L>))
        .route("/api/stats/corpus", get(get_corpus_stats::<L>))
        .route("/api/export/clusters", get(get_export_clusters::<L>))
        .route("/api/export/difficult", get(get_export_difficult::<L>))
        .with_state(state)
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub error: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            error,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            EngineError::StaleClaim { .. } => (S::CONFLICT, "stale_claim"),
            EngineError::CapReached { .. } => (S::CONFLICT, "cap_reached"),
            EngineError::Duplicate { .. } => (S::CONFLICT, "duplicate"),
            EngineError::LockedByIaa { .. } => (S::CONFLICT, "locked_by_iaa"),
            EngineError::Superseded(_) => (S::CONFLICT, "superseded"),
            EngineError::UnknownAnnotator(_) => (S::NOT_FOUND, "unknown_annotator"),
            EngineError::UnknownPair(_) => (S::NOT_FOUND, "unknown_pair"),
            EngineError::UnknownDocumentPair(_) => (S::NOT_FOUND, "unknown_document_pair"),
            EngineError::Model(ModelError::UnknownMention(_)) => (S::NOT_FOUND, "unknown_mention"),
            EngineError::Model(ModelError::UnknownDocument(_)) => (S::NOT_FOUND, "unknown_document"),
            EngineError::Log(_) | EngineError::Replay(_) => (S::INTERNAL_SERVER_ERROR, "storage"),
            _ => (S::UNPROCESSABLE_ENTITY, "invalid_request"),
        };
        if status == S::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "storage failure");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), "bad_body", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_query", r.body_text())
    }
}

fn bad(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionView {
    pub mention_id: MentionId,
    pub start_char: usize,
    pub end_char: usize,
    pub surface: String,
}

impl From<&Mention> for MentionView {
    fn from(m: &Mention) -> Self {
        Self {
            mention_id: m.mention_id.clone(),
            start_char: m.span.start,
            end_char: m.span.end,
            surface: m.surface.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideView {
    pub doc_id: DocId,
    pub title: String,
    pub summary_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    /// The active mention, shown in bold.
    pub mention: MentionView,
    /// Mentions in this document already clustered with either active
    /// mention, shown in green.
    pub co_cluster: Vec<MentionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub pair_key: PairKey,
    pub pair_id: cdcr_core::model::PairId,
    pub iaa: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    pub news: SideView,
    pub science: SideView,
    pub difficult: bool,
    pub claim_expires_at: DateTime<Utc>,
    pub iaa_completed_this_week: u32,
    pub weekly_iaa_cap: u32,
}

fn task_view(state: &State, annotator: &AnnotatorId, cand: &CandidatePair, now: DateTime<Utc>) -> Result<TaskView, ApiError> {
    let corpus = state.corpus();
    let actives = [&cand.news_mention, &cand.sci_mention];
    let side = |mid: &MentionId| -> Result<SideView, EngineError> {
        let m = corpus.mention(mid)?;
        let doc: &Document = corpus.document(&m.doc_id)?;
        let clusters = state.clusters();
        let mut green: Vec<MentionView> = actives
            .iter()
            .filter_map(|a| clusters.cluster_of(a))
            .filter_map(|c| clusters.members(c))
            .flatten()
            .filter(|x| !actives.contains(x))
            .filter_map(|x| corpus.mention(x).ok())
            .filter(|x| x.doc_id == m.doc_id)
            .map(MentionView::from)
            .collect();
        green.sort_by(|a, b| a.mention_id.cmp(&b.mention_id));
        green.dedup();
        Ok(SideView {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            summary_text: doc.summary_text.clone(),
            full_text: doc.full_text.clone(),
            url: doc.url.clone(),
            mention: MentionView::from(m),
            co_cluster: green,
        })
    };
    Ok(TaskView {
        pair_key: cand.pair_key.clone(),
        pair_id: cand.pair_id.clone(),
        iaa: cand.iaa,
        similarity: cand.similarity,
        news: side(&cand.news_mention)?,
        science: side(&cand.sci_mention)?,
        difficult: state.is_difficult(&cand.pair_key),
        claim_expires_at: now + state.config().claim_lease(),
        iaa_completed_this_week: state.iaa_completed_in_week(annotator, now),
        weekly_iaa_cap: state.config().weekly_iaa_cap,
    })
}

#[derive(Debug, Deserialize)]
pub struct TaskQuery {
    pub annotator: AnnotatorId,
}

async fn get_task<L: EventSink + Send + 'static>(
    AxState(app): AxState<AppState<L>>,
    query: Result<Query<TaskQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let now = app.now();
    let mut engine = app.engine();
    match engine.next_task(&q.annotator, now)? {
        None => Ok(StatusCode::NO_CONTENT.into_response()),
        Some(cand) => Ok(Json(task_view(engine.state(), &q.annotator, &cand, now)?).into_response()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub annotator: AnnotatorId,
    pub pair_key: PairKey,
    pub verdict: Verdict,
    #[serde(default)]
    pub difficult: bool,
    #[serde(default)]
    pub idempotency_token: Option<String>,
}

async fn post_annotation<L: EventSink + Send + 'static>(
    AxState(app): AxState<AppState<L>>,
    body: Result<Json<AnnotationRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let now = app.now();
    let submitted = app.engine().submit_annotation(
        &req.annotator,
        &req.pair_key,
        req.verdict,
        req.difficult,
        now,
        req.idempotency_token,
    )?;
    let replayed = if submitted.replayed { "true" } else { "false" };
    Ok((
        [(HeaderName::from_static(REPLAYED_HEADER), replayed)],
        Json(submitted.delta),
    )
        .into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRequest {
    pub annotator: AnnotatorId,
    pub shown_pair_key: PairKey,
    pub doc_id: DocId,
    pub start_char: usize,
    pub end_char: usize,
}

async fn post_pair<L: EventSink + Send + 'static>(
    AxState(app): AxState<AppState<L>>,
    body: Result<Json<PairRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let now = app.now();
    let mut engine = app.engine();
    let corpus = engine.state().corpus();
    let (a, b) = req.shown_pair_key.members();
    // The kept mention is the shown member outside the edited document.
    let keep = [a, b]
        .into_iter()
        .find(|m| corpus.mention(m).is_ok_and(|m| m.doc_id != req.doc_id))
        .cloned()
        .ok_or_else(|| bad(format!("{} is not a document of pair {}", req.doc_id, req.shown_pair_key)))?;
    let span = SpanRef {
        doc_id: req.doc_id,
        start_char: req.start_char,
        end_char: req.end_char,
    };
    let cand = engine.propose_pair(&req.annotator, &req.shown_pair_key, &keep, &span, now)?;
    Ok((StatusCode::CREATED, Json(cand)).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanRequest {
    pub annotator: AnnotatorId,
    pub mention_id: MentionId,
    pub start_char: usize,
    pub end_char: usize,
}

async fn post_span<L: EventSink + Send + 'static>(
    AxState(app): AxState<AppState<L>>,
    body: Result<Json<SpanRequest>, JsonRejection>,
) -> Result<Json<Mention>, ApiError> {
    let Json(req) = body?;
    let now = app.now();
    let m = app
        .engine()
        .adjust_span(&req.annotator, &req.mention_id, req.start_char, req.end_char, now)?;
    Ok(Json(m))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusRequest {
    pub pair_key: PairKey,
}

async fn post_consensus<L: EventSink + Send + 'static>(
    AxState(app): AxState<AppState<L>>,
    body: Result<Json<ConsensusRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let now = app.now();
    let outcome = app.engine().consensus_gold(&req.pair_key, now)?;
    Ok(Json(outcome).into_response())
}

async fn get_agreement<L: EventSink + Send + 'static>(AxState(app): AxState<AppState<L>>) -> Response {
    Json(app.engine().state().agreement_report()).into_response()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    #[serde(flatten)]
    pub validation: ValidationReport,
    pub candidates: usize,
    pub resolved: usize,
    pub iaa: usize,
    pub conflicts: usize,
    pub annotators: usize,
}

pub fn corpus_stats(state: &State) -> CorpusStats {
    let queue: Vec<_> = state.queue().collect();
    CorpusStats {
        validation: state.validate(),
        candidates: queue.len(),
        resolved: queue
            .iter()
            .filter(|p| p.status == cdcr_core::model::PairStatus::Resolved)
            .count(),
        iaa: queue.iter().filter(|p| p.iaa).count(),
        conflicts: state.conflicts().len(),
        annotators: state.annotators().count(),
    }
}

async fn get_corpus_stats<L: EventSink + Send + 'static>(AxState(app): AxState<AppState<L>>) -> Json<CorpusStats> {
    Json(corpus_stats(app.engine().state()))
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    #[serde(default)]
    pub split: Option<String>,
}

async fn get_export_clusters<L: EventSink + Send + 'static>(
    AxState(app): AxState<AppState<L>>,
    query: Result<Query<ExportQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let split = q.split.as_deref().map(str::parse::<Split>).transpose().map_err(bad)?;
    let records = app.engine().state().cluster_records(split);
    let mut body = Vec::new();
    write_cluster_file(&records, &mut body).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn get_export_difficult<L: EventSink + Send + 'static>(AxState(app): AxState<AppState<L>>) -> Response {
    Json(app.engine().state().difficult_records()).into_response()
}
