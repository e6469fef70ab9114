//! HTTP service for the extension-to-backend protocol, with append-only
//! JSONL persistence that is replayed on restart.
//!
//! Store layout:
//! - `enrollments.jsonl`: participant, assignment and study start
//! - `events/{id}.jsonl`: ingested events with sequence numbers
//! - `loads.jsonl`, `surveys.jsonl`, `scores.jsonl`, `inventory.jsonl`
//! - `caches/{id}.jsonl`: pending demotions of the current session
//! - `state/{id}.json`: scheduler and cache snapshot after each change

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, experiments_present, AnalysisOptions};
use crate::experiment::{enroll, EnrollmentState, Phase, StudyConfig};
use crate::model::{
    is_aapa, validate_batch, AapaScore, Assignment, EngagementEvent, Millis, Participant, Post, SurveyPrompt,
    SurveyResponse,
};
use crate::pipeline::{local_midnight, process_load, ParticipantState, PipelineError};
use crate::rerank::{Origin, ScoredBatch, UprankInventory};
use crate::scoring::{score_batch, ScoreCache, ScoringBackend, ScoringDiagnostics, DEFAULT_TIMEOUT_MS};
use crate::seed;
use crate::sim::study::{LoadRecord, PostSurvey, ServedPost, StudyData, SurveyRecord};
use crate::sim::SimConfig;
use crate::store::{append_jsonl, read_bundle, read_jsonl, repair_jsonl_tail, write_atomic, StoreError};
use crate::survey::{record_answer, SchedulerError};

pub const ENV_STORE: &str = "FEEDLAB_STORE";
/// Soft latency target for a rerank response.
pub const LATENCY_TARGET_MS: u64 = 3_000;

pub type Clock = Arc<dyn Fn() -> Millis + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis() as Millis)
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown participant `{0}`")]
    UnknownParticipant(String),
    #[error("study has ended for this participant")]
    StudyEnded,
    #[error("malformed batch: {0}")]
    MalformedBatch(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),
    #[error("prompt `{0}` expired")]
    PromptExpired(String),
    #[error("enrollment refused: {0}")]
    Enrollment(String),
    #[error("run `{0}` not found")]
    UnknownRun(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("analysis failed: {0}")]
    Analysis(String),
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownParticipant(_) | ServiceError::UnknownPrompt(_) | ServiceError::UnknownRun(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::StudyEnded | ServiceError::Enrollment(_) => StatusCode::CONFLICT,
            ServiceError::MalformedBatch(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::PromptExpired(_) => StatusCode::GONE,
            ServiceError::Store(_) | ServiceError::Analysis(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownParticipant(_) => "unknown_participant",
            ServiceError::StudyEnded => "study_ended",
            ServiceError::MalformedBatch(_) => "malformed_batch",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::UnknownPrompt(_) => "unknown_prompt",
            ServiceError::PromptExpired(_) => "prompt_expired",
            ServiceError::Enrollment(_) => "enrollment_refused",
            ServiceError::UnknownRun(_) => "unknown_run",
            ServiceError::Store(_) => "store_error",
            ServiceError::Analysis(_) => "analysis_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: self.code().into(), message: self.to_string() };
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollRequest {
    pub participant: Participant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EnrollmentRecord {
    participant: Participant,
    assignment: Assignment,
    study_start: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRequest {
    pub participant_id: String,
    pub load_seq: u64,
    pub session_id: String,
    pub posts: Vec<Post>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedId {
    pub post_id: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResponse {
    pub participant_id: String,
    pub load_seq: u64,
    pub day: u32,
    pub phase: Phase,
    pub posts: Vec<RankedId>,
    /// Full content of served posts that were not in the request.
    pub inserted: Vec<Post>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey: Option<SurveyPrompt>,
    pub diagnostics: ScoringDiagnostics,
    pub elapsed_ms: u64,
    pub over_latency_target: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientEvent {
    pub client_event_id: String,
    #[serde(flatten)]
    pub event: EngagementEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub participant_id: String,
    #[serde(default)]
    pub events: Vec<ClientEvent>,
    #[serde(default)]
    pub survey_responses: Vec<SurveyResponse>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoredEvent {
    seq: u64,
    client_event_id: String,
    event: EngagementEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedResponse {
    pub prompt_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventAck {
    pub accepted: usize,
    pub duplicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_seq: Option<u64>,
    pub responses_recorded: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_responses: Vec<RejectedResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResponseRequest {
    pub participant_id: String,
    #[serde(flatten)]
    pub response: SurveyResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyAck {
    pub prompt_id: String,
    pub recorded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SurveyLog {
    Issued { record: SurveyRecord },
    Answered { participant_id: String, response: SurveyResponse },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreLine {
    post_id: String,
    score: AapaScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InventoryLine {
    post: Post,
    score: AapaScore,
    participant_id: String,
    party: crate::model::Party,
    at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheLine {
    post_id: String,
    penalty_key: u64,
    session_id: String,
}

#[derive(Debug, Default)]
struct EventLog {
    ids: HashSet<String>,
}

struct Slot {
    state: tokio::sync::Mutex<ParticipantState>,
    events: tokio::sync::Mutex<EventLog>,
}

pub struct ServiceConfig {
    pub store: PathBuf,
    pub study: StudyConfig,
    pub scorer_timeout_ms: u64,
    pub clock: Clock,
}

impl ServiceConfig {
    pub fn new(store: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            store: store.into(),
            study: StudyConfig::default(),
            scorer_timeout_ms: DEFAULT_TIMEOUT_MS,
            clock: system_clock(),
        }
    }
}

pub struct AppState {
    store: PathBuf,
    study: StudyConfig,
    timeout_ms: u64,
    clock: Clock,
    backend: Arc<dyn ScoringBackend>,
    cache: ScoreCache,
    participants: RwLock<HashMap<String, Arc<Slot>>>,
    enrollment: Mutex<EnrollmentState>,
    inventory: RwLock<UprankInventory>,
    scored_ids: Mutex<HashSet<String>>,
    ingest_seq: AtomicU64,
    /// Serializes appends to the shared log files.
    shared_log: Mutex<()>,
}

fn store_err(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::BadRequest(e.to_string())
}

impl AppState {
    /// Open a store, replaying whatever it already holds.
    pub fn open(config: ServiceConfig, backend: Arc<dyn ScoringBackend>) -> Result<Arc<Self>, ServiceError> {
        std::fs::create_dir_all(&config.store)
            .map_err(|source| StoreError::Io { path: config.store.display().to_string(), source })?;
        let state = AppState {
            store: config.store,
            study: config.study,
            timeout_ms: config.scorer_timeout_ms,
            clock: config.clock,
            backend,
            cache: ScoreCache::new(),
            participants: RwLock::new(HashMap::new()),
            enrollment: Mutex::new(EnrollmentState::default()),
            inventory: RwLock::new(UprankInventory::new()),
            scored_ids: Mutex::new(HashSet::new()),
            ingest_seq: AtomicU64::new(0),
            shared_log: Mutex::new(()),
        };
        state.replay()?;
        Ok(Arc::new(state))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.store.join(rel)
    }

    fn replay(&self) -> Result<(), ServiceError> {
        for f in ["enrollments.jsonl", "loads.jsonl", "surveys.jsonl", "scores.jsonl", "inventory.jsonl"] {
            repair_jsonl_tail(&self.path(f))?;
        }
        if let Ok(dir) = std::fs::read_dir(self.path("events")) {
            for entry in dir.flatten() {
                repair_jsonl_tail(&entry.path())?;
            }
        }
        let enrollments: Vec<EnrollmentRecord> = read_jsonl(&self.path("enrollments.jsonl"))?;
        let mut max_seq = 0;
        for rec in enrollments {
            let pid = rec.participant.participant_id.clone();
            let snapshot = self.path(&format!("state/{pid}.json"));
            let state = match std::fs::read(&snapshot) {
                Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                    path: snapshot.display().to_string(),
                    line: 1,
                    message: e.to_string(),
                })?,
                Err(_) => ParticipantState::new(rec.participant.clone(), rec.assignment.clone(), rec.study_start),
            };
            let stored: Vec<StoredEvent> = read_jsonl(&self.path(&format!("events/{pid}.jsonl")))?;
            let mut log = EventLog::default();
            for s in stored {
                max_seq = max_seq.max(s.seq);
                log.ids.insert(s.client_event_id);
            }
            self.enrollment.lock().expect("enrollment lock").record(rec.assignment.clone());
            self.participants.write().expect("participants lock").insert(
                pid,
                Arc::new(Slot { state: tokio::sync::Mutex::new(state), events: tokio::sync::Mutex::new(log) }),
            );
        }
        self.ingest_seq.store(max_seq, Ordering::SeqCst);
        let mut inv = self.inventory.write().expect("inventory lock");
        for l in read_jsonl::<InventoryLine>(&self.path("inventory.jsonl"))? {
            inv.record(&l.post, l.score, &l.participant_id, l.party, l.at);
        }
        let mut ids = self.scored_ids.lock().expect("scored lock");
        for l in read_jsonl::<ScoreLine>(&self.path("scores.jsonl"))? {
            ids.insert(l.post_id);
        }
        Ok(())
    }

    fn slot(&self, pid: &str) -> Result<Arc<Slot>, ServiceError> {
        self.participants
            .read()
            .expect("participants lock")
            .get(pid)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownParticipant(pid.to_string()))
    }

    fn append_shared<T: Serialize>(&self, file: &str, records: &[T]) -> Result<(), ServiceError> {
        if records.is_empty() {
            return Ok(());
        }
        let _guard = self.shared_log.lock().expect("log lock");
        append_jsonl(&self.path(file), records)?;
        Ok(())
    }

    fn persist_state(&self, state: &ParticipantState) -> Result<(), ServiceError> {
        let pid = &state.participant.participant_id;
        let bytes = serde_json::to_vec(state).expect("state serializes");
        write_atomic(&self.path(&format!("state/{pid}.json")), &bytes)?;
        let cache: Vec<u8> = state
            .cache
            .pending()
            .iter()
            .flat_map(|d| {
                let line = CacheLine {
                    post_id: d.post.post_id.clone(),
                    penalty_key: d.penalty_key,
                    session_id: state.cache.session_id.clone(),
                };
                let mut v = serde_json::to_vec(&line).expect("cache line");
                v.push(b'\n');
                v
            })
            .collect();
        write_atomic(&self.path(&format!("caches/{pid}.jsonl")), &cache)?;
        Ok(())
    }

    pub fn enroll(&self, participant: Participant) -> Result<Assignment, ServiceError> {
        let pid = participant.participant_id.clone();
        if pid.is_empty() || pid.contains(['/', '\\', '.']) {
            return Err(ServiceError::BadRequest("participant id must be a plain name".into()));
        }
        if let Some(a) = self.enrollment.lock().expect("enrollment lock").lookup(&pid) {
            return Ok(a.clone());
        }
        let now = (self.clock)();
        let assignment = {
            let mut e = self.enrollment.lock().expect("enrollment lock");
            let mut rng = seed::rng(self.study.master_seed, &["enroll", &pid]);
            enroll(&participant, &self.study, &mut e, 0, &mut rng)
                .map_err(|err| ServiceError::Enrollment(err.to_string()))?
        };
        let study_start = local_midnight(now, participant.local_tz_offset);
        let rec = EnrollmentRecord { participant: participant.clone(), assignment: assignment.clone(), study_start };
        self.append_shared("enrollments.jsonl", &[rec])?;
        let state = ParticipantState::new(participant, assignment.clone(), study_start);
        self.persist_state(&state)?;
        self.participants.write().expect("participants lock").insert(
            pid,
            Arc::new(Slot { state: tokio::sync::Mutex::new(state), events: tokio::sync::Mutex::new(EventLog::default()) }),
        );
        Ok(assignment)
    }

    pub async fn rerank(&self, req: RerankRequest) -> Result<RerankResponse, ServiceError> {
        let started = std::time::Instant::now();
        let slot = self.slot(&req.participant_id)?;
        let mut batch = validate_batch(req.posts.clone(), &req.participant_id, req.load_seq)
            .map_err(|e| ServiceError::MalformedBatch(e.to_string()))?;
        let now = (self.clock)();
        batch.fetched_at = now;
        {
            let s = slot.state.lock().await;
            if crate::experiment::phase_of(s.study_day(now), &self.study).is_err() {
                return Err(ServiceError::StudyEnded);
            }
        }
        let scored = score_batch(&batch, self.backend.as_ref(), &self.cache, self.timeout_ms).await;
        let scores: HashMap<String, AapaScore> = scored.scores.into_iter().collect();
        let scored_batch = ScoredBatch::new(batch, scores).map_err(|e| ServiceError::MalformedBatch(e.to_string()))?;

        let mut state = slot.state.lock().await;
        let inventory = self.inventory.read().expect("inventory lock").clone();
        let outcome = process_load(&mut state, &scored_batch, &self.study, &inventory, &req.session_id, now)
            .map_err(|e| match e {
                PipelineError::StudyEnded => ServiceError::StudyEnded,
                PipelineError::Rerank(r) => ServiceError::MalformedBatch(r.to_string()),
            })?;
        self.persist_state(&state)?;
        let party = state.participant.party;
        drop(state);

        let requested: HashSet<&str> = req.posts.iter().map(|p| p.post_id.as_str()).collect();
        let mut inv_lines = Vec::new();
        let mut score_lines = Vec::new();
        {
            let mut ids = self.scored_ids.lock().expect("scored lock");
            let mut keys: Vec<&String> = outcome.scores.keys().collect();
            keys.sort();
            for id in keys {
                let s = outcome.scores[id];
                if ids.insert(id.clone()) {
                    score_lines.push(ScoreLine { post_id: id.clone(), score: s });
                }
                if is_aapa(&s) {
                    if let Some(r) = outcome.feed.posts.iter().find(|r| &r.post.post_id == id) {
                        inv_lines.push(InventoryLine {
                            post: r.post.clone(),
                            score: s,
                            participant_id: req.participant_id.clone(),
                            party,
                            at: now,
                        });
                    }
                }
            }
        }
        {
            let mut inv = self.inventory.write().expect("inventory lock");
            for l in &inv_lines {
                inv.record(&l.post, l.score, &l.participant_id, l.party, l.at);
            }
        }
        let load = LoadRecord {
            participant_id: req.participant_id.clone(),
            load_seq: req.load_seq,
            session_id: req.session_id.clone(),
            day: outcome.day,
            at: now,
            served: outcome
                .feed
                .posts
                .iter()
                .map(|r| ServedPost { post_id: r.post.post_id.clone(), origin: r.origin, is_ad: r.post.is_ad })
                .collect(),
            demoted: outcome.feed.demoted.iter().map(|d| d.post.post_id.clone()).collect(),
            survey_slot: outcome.feed.survey_slot,
        };
        self.append_shared("scores.jsonl", &score_lines)?;
        self.append_shared("inventory.jsonl", &inv_lines)?;
        self.append_shared("loads.jsonl", &[load])?;
        if let Some(p) = &outcome.prompt {
            let record = SurveyRecord {
                participant_id: req.participant_id.clone(),
                prompt_id: p.prompt_id.clone(),
                kind: p.kind,
                day: outcome.day,
                load_seq: req.load_seq,
                feed_position: p.feed_position,
                issued_at: p.issued_at,
                response: None,
            };
            self.append_shared("surveys.jsonl", &[SurveyLog::Issued { record }])?;
        }
        let elapsed_ms = started.elapsed().as_millis() as u64;
        if elapsed_ms > LATENCY_TARGET_MS {
            tracing::warn!(participant = %req.participant_id, elapsed_ms, "rerank over latency target");
        }
        Ok(RerankResponse {
            participant_id: req.participant_id,
            load_seq: req.load_seq,
            day: outcome.day,
            phase: outcome.phase,
            inserted: outcome
                .feed
                .posts
                .iter()
                .filter(|r| !requested.contains(r.post.post_id.as_str()))
                .map(|r| r.post.clone())
                .collect(),
            posts: outcome.feed.posts.iter().map(|r| RankedId { post_id: r.post.post_id.clone(), origin: r.origin }).collect(),
            survey: outcome.prompt,
            diagnostics: scored.diagnostics,
            elapsed_ms,
            over_latency_target: elapsed_ms > LATENCY_TARGET_MS,
        })
    }

    pub async fn ingest(&self, env: EventEnvelope) -> Result<EventAck, ServiceError> {
        let slot = self.slot(&env.participant_id)?;
        if let Some(bad) = env.events.iter().find(|e| e.event.participant_id != env.participant_id) {
            return Err(ServiceError::BadRequest(format!("event `{}` belongs to another participant", bad.client_event_id)));
        }
        let mut ack = EventAck { accepted: 0, duplicates: 0, last_seq: None, responses_recorded: 0, rejected_responses: Vec::new() };
        {
            let mut log = slot.events.lock().await;
            let mut fresh = Vec::new();
            let mut batch_ids = HashSet::new();
            for e in env.events {
                if log.ids.contains(&e.client_event_id) || !batch_ids.insert(e.client_event_id.clone()) {
                    ack.duplicates += 1;
                    continue;
                }
                let seq = self.ingest_seq.fetch_add(1, Ordering::SeqCst) + 1;
                fresh.push(StoredEvent { seq, client_event_id: e.client_event_id, event: e.event });
            }
            append_jsonl(&self.path(&format!("events/{}.jsonl", env.participant_id)), &fresh)?;
            ack.accepted = fresh.len();
            ack.last_seq = fresh.last().map(|s| s.seq);
            log.ids.extend(fresh.into_iter().map(|s| s.client_event_id));
        }
        for r in env.survey_responses {
            let prompt_id = r.prompt_id.clone();
            match self.answer(&env.participant_id, r).await {
                Ok(_) => ack.responses_recorded += 1,
                Err(e) => ack.rejected_responses.push(RejectedResponse { prompt_id, error: e.code().into() }),
            }
        }
        Ok(ack)
    }

    pub async fn answer(&self, participant_id: &str, response: SurveyResponse) -> Result<SurveyAck, ServiceError> {
        let slot = self.slot(participant_id)?;
        let mut state = slot.state.lock().await;
        let now = (self.clock)();
        record_answer(&mut state.scheduler, &response, now).map_err(|e| match e {
            SchedulerError::UnknownPrompt(p) => ServiceError::UnknownPrompt(p),
            SchedulerError::PromptExpired(p) => ServiceError::PromptExpired(p),
            SchedulerError::InvalidResponse(m) => ServiceError::BadRequest(m.to_string()),
        })?;
        self.persist_state(&state)?;
        let prompt_id = response.prompt_id.clone();
        self.append_shared(
            "surveys.jsonl",
            &[SurveyLog::Answered { participant_id: participant_id.to_string(), response }],
        )?;
        Ok(SurveyAck { prompt_id, recorded: true })
    }

    pub fn assignment(&self, participant_id: &str) -> Result<Assignment, ServiceError> {
        self.enrollment
            .lock()
            .expect("enrollment lock")
            .lookup(participant_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownParticipant(participant_id.to_string()))
    }

    /// Report for a finished run stored under `runs/{run}`, computing and
    /// caching the analysis tables on first request.
    pub fn report(&self, run: &str) -> Result<serde_json::Value, ServiceError> {
        if run.is_empty() || run.contains(['/', '\\']) || run.starts_with('.') {
            return Err(ServiceError::UnknownRun(run.to_string()));
        }
        let dir = self.path("runs").join(run);
        if !dir.join(crate::store::MANIFEST).exists() {
            return Err(ServiceError::UnknownRun(run.to_string()));
        }
        report_for_bundle(&dir, run)
    }
}

/// Summary JSON plus CSV tables of a bundle's analysis, cached in
/// `{bundle}/analysis`.
pub fn report_for_bundle(dir: &Path, run: &str) -> Result<serde_json::Value, ServiceError> {
    let out = dir.join("analysis");
    if !out.exists() {
        let data = read_bundle(dir)?;
        for e in experiments_present(&data) {
            let report = analyze(&data, &AnalysisOptions::new(e)).map_err(|e| ServiceError::Analysis(e.to_string()))?;
            report.write_tables(&out).map_err(|e| ServiceError::Analysis(e.to_string()))?;
        }
        std::fs::create_dir_all(&out).map_err(|source| StoreError::Io { path: out.display().to_string(), source })?;
    }
    let mut names: Vec<PathBuf> = std::fs::read_dir(&out)
        .map_err(|source| StoreError::Io { path: out.display().to_string(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    names.sort();
    let mut tables = BTreeMap::new();
    let mut summary = BTreeMap::new();
    for p in names {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let text = std::fs::read_to_string(&p).map_err(|source| StoreError::Io { path: p.display().to_string(), source })?;
        if let Some(exp) = name.strip_suffix("_summary.json") {
            summary.insert(exp.to_string(), serde_json::from_str::<serde_json::Value>(&text).map_err(store_err)?);
        } else if name.ends_with(".csv") {
            tables.insert(name, text);
        }
    }
    Ok(serde_json::json!({ "run": run, "summary": summary, "tables": tables }))
}

/// Rebuild analysis-ready data from a service store.
pub fn export_store(store: &Path, study: &StudyConfig) -> Result<StudyData, ServiceError> {
    let mut config = SimConfig { study: study.clone(), master_seed: study.master_seed, ..SimConfig::default() };
    config.n_participants = 0;
    let mut data = StudyData::empty(config);
    let enrollments: Vec<EnrollmentRecord> = read_jsonl(&store.join("enrollments.jsonl"))?;
    for rec in enrollments {
        let pid = rec.participant.participant_id.clone();
        let mut stored: Vec<StoredEvent> = read_jsonl(&store.join(format!("events/{pid}.jsonl")))?;
        stored.sort_by_key(|s| s.seq);
        data.events.extend(stored.into_iter().map(|s| s.event));
        data.study_starts.insert(pid, rec.study_start);
        data.participants.push(rec.participant);
        data.assignments.push(rec.assignment);
    }
    data.config.n_participants = data.participants.len();
    let mut surveys: Vec<SurveyRecord> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for line in read_jsonl::<SurveyLog>(&store.join("surveys.jsonl"))? {
        match line {
            SurveyLog::Issued { record } => {
                index.insert((record.participant_id.clone(), record.prompt_id.clone()), surveys.len());
                surveys.push(record);
            }
            SurveyLog::Answered { participant_id, response } => {
                if let Some(i) = index.get(&(participant_id, response.prompt_id.clone())) {
                    surveys[*i].response = Some(response);
                }
            }
        }
    }
    data.surveys = surveys;
    data.loads = read_jsonl(&store.join("loads.jsonl"))?;
    data.scores = read_jsonl::<ScoreLine>(&store.join("scores.jsonl"))?.into_iter().map(|l| (l.post_id, l.score)).collect();
    let post_path = store.join(crate::store::POST_SURVEY);
    if post_path.exists() {
        let mut r = csv::Reader::from_path(&post_path).map_err(store_err)?;
        for row in r.deserialize::<PostSurvey>() {
            data.post_surveys.push(row.map_err(store_err)?);
        }
    }
    Ok(data)
}

async fn enroll_handler(State(s): State<Arc<AppState>>, Json(req): Json<EnrollRequest>) -> Result<Json<Assignment>, ServiceError> {
    s.enroll(req.participant).map(Json)
}

async fn rerank_handler(State(s): State<Arc<AppState>>, Json(req): Json<RerankRequest>) -> Result<Json<RerankResponse>, ServiceError> {
    s.rerank(req).await.map(Json)
}

async fn events_handler(State(s): State<Arc<AppState>>, Json(env): Json<EventEnvelope>) -> Result<Json<EventAck>, ServiceError> {
    s.ingest(env).await.map(Json)
}

async fn survey_handler(
    State(s): State<Arc<AppState>>,
    Json(req): Json<SurveyResponseRequest>,
) -> Result<Json<SurveyAck>, ServiceError> {
    s.answer(&req.participant_id, req.response).await.map(Json)
}

async fn assignment_handler(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Assignment>, ServiceError> {
    s.assignment(&id).map(Json)
}

async fn report_handler(State(s): State<Arc<AppState>>, UrlPath(run): UrlPath<String>) -> Result<Json<serde_json::Value>, ServiceError> {
    let state = s.clone();
    tokio::task::spawn_blocking(move || state.report(&run))
        .await
        .map_err(|e| ServiceError::Analysis(e.to_string()))?
        .map(Json)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/enroll", post(enroll_handler))
        .route("/v1/rerank", post(rerank_handler))
        .route("/v1/events", post(events_handler))
        .route("/v1/survey-response", post(survey_handler))
        .route("/v1/assignment/{id}", get(assignment_handler))
        .route("/v1/report/{run}", get(report_handler))
        .with_state(state)
}

pub async fn serve(addr: &str, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}
