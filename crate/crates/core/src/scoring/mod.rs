//! Two-stage content scoring: a political pre-filter, then eight factor
//! prompts per chunk of at most ten political texts, dispatched
//! concurrently with a per-request deadline and a content-hash cache.

pub mod lexicon;
pub mod prompt;
pub mod remote;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use async_trait::async_trait;
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{assemble_scoring_text, AapaScore, Factor, FeedBatch, Post};
pub use lexicon::LexiconOracle;
pub use prompt::{FactorPrompt, MAX_CHUNK};
pub use remote::RemoteInferenceClient;

/// Per-request deadline used by the field deployment.
pub const DEFAULT_TIMEOUT_MS: u64 = 8_000;

/// Minimum political share of a screening feed.
pub const SCREENING_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend rejected request: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ScoringError {
    #[error("no non-ad posts to classify")]
    EmptyBatch,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCapabilities {
    pub max_concurrent_requests: usize,
    pub expected_latency_ms: u64,
}

/// A political classifier plus an eight-factor prompt endpoint.
///
/// Implementations must not serialize a request behind an unrelated slow
/// request; `score_posts` relies on that to bound latency by the deadline.
#[async_trait]
pub trait ScoringBackend: Send + Sync {
    fn capabilities(&self) -> BackendCapabilities;

    async fn classify_political(&self, text: &str) -> Result<bool, BackendError>;

    /// Returns the raw model output for one factor prompt.
    async fn complete_factor(&self, prompt: &FactorPrompt) -> Result<String, BackendError>;
}

#[async_trait]
impl<B: ScoringBackend + ?Sized> ScoringBackend for Arc<B> {
    fn capabilities(&self) -> BackendCapabilities {
        (**self).capabilities()
    }
    async fn classify_political(&self, text: &str) -> Result<bool, BackendError> {
        (**self).classify_political(text).await
    }
    async fn complete_factor(&self, prompt: &FactorPrompt) -> Result<String, BackendError> {
        (**self).complete_factor(prompt).await
    }
}

/// Stable 64-bit content hash (first eight bytes of SHA-256). Collisions
/// are accepted at this scale.
pub fn content_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: RwLock<HashMap<u64, AapaScore>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, hash: u64) -> Option<AapaScore> {
        let found = self.entries.read().expect("cache lock").get(&hash).copied();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn insert(&self, hash: u64, score: AapaScore) {
        self.entries.write().expect("cache lock").insert(hash, score);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ScoringEvent {
    Timeout { factor: Factor, chunk: usize },
    BackendError { factor: Factor, chunk: usize, message: String },
    DegradedParse { factor: Factor, chunk: usize, ids: Vec<String> },
    PoliticalUnavailable { id: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringDiagnostics {
    /// Factor prompts sent to the backend.
    pub backend_requests: usize,
    /// Political pre-filter calls.
    pub political_requests: usize,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub timeouts: usize,
    pub backend_errors: usize,
    pub degraded_parses: usize,
    pub events: Vec<ScoringEvent>,
}

impl ScoringDiagnostics {
    pub fn merge(&mut self, other: ScoringDiagnostics) {
        self.backend_requests += other.backend_requests;
        self.political_requests += other.political_requests;
        self.cache_hits += other.cache_hits;
        self.cache_misses += other.cache_misses;
        self.timeouts += other.timeouts;
        self.backend_errors += other.backend_errors;
        self.degraded_parses += other.degraded_parses;
        self.events.extend(other.events);
    }
}

/// One assembled text to score, keyed by post id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringItem {
    pub id: String,
    pub text: String,
}

impl ScoringItem {
    pub fn from_post(post: &Post) -> Self {
        ScoringItem { id: post.post_id.clone(), text: assemble_scoring_text(post) }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScoreOutcome {
    pub scores: BTreeMap<String, AapaScore>,
    pub diagnostics: ScoringDiagnostics,
}

pub async fn is_political<B: ScoringBackend + ?Sized>(
    text: &str,
    backend: &B,
) -> Result<bool, BackendError> {
    if text.trim().is_empty() {
        return Ok(false);
    }
    backend.classify_political(text).await
}

/// Share of non-ad posts classified political.
pub async fn political_fraction<B: ScoringBackend + ?Sized>(
    posts: &[Post],
    backend: &B,
) -> Result<f64, ScoringError> {
    let texts: Vec<String> =
        posts.iter().filter(|p| !p.is_ad).map(assemble_scoring_text).collect();
    if texts.is_empty() {
        return Err(ScoringError::EmptyBatch);
    }
    let verdicts = join_all(texts.iter().map(|t| is_political(t, backend))).await;
    let mut political = 0usize;
    for v in verdicts {
        if v? {
            political += 1;
        }
    }
    Ok(political as f64 / texts.len() as f64)
}

pub fn qualifies(fraction: f64) -> bool {
    // Compare in basis points so 9/180 is not lost to rounding.
    (fraction * 10_000.0).round() >= SCREENING_THRESHOLD * 10_000.0
}

/// Order-preserving partition into chunks of at most `max_chunk`.
pub fn chunk_messages<T: Clone>(items: &[T], max_chunk: usize) -> Vec<Vec<T>> {
    assert!(max_chunk > 0, "chunk size must be positive");
    items.chunks(max_chunk).map(<[T]>::to_vec).collect()
}

/// Scores assembled texts. Never fails: backend timeouts, errors and
/// malformed answers set the affected factors to false and are recorded in
/// the diagnostics. Fully-answered scores are cached by content hash.
pub async fn score_posts<B: ScoringBackend + ?Sized>(
    items: &[ScoringItem],
    backend: &B,
    cache: &ScoreCache,
    timeout_ms: u64,
) -> ScoreOutcome {
    let mut out = ScoreOutcome::default();
    let deadline = Duration::from_millis(timeout_ms);

    // Cache lookup, deduplicating identical texts within the call.
    let mut pending: BTreeMap<u64, (String, Vec<String>)> = BTreeMap::new();
    let mut pending_order: Vec<u64> = Vec::new();
    for item in items {
        let h = content_hash(&item.text);
        if let Some((_, ids)) = pending.get_mut(&h) {
            ids.push(item.id.clone());
            continue;
        }
        match cache.get(h) {
            Some(score) => {
                out.diagnostics.cache_hits += 1;
                out.scores.insert(item.id.clone(), score);
            }
            None => {
                out.diagnostics.cache_misses += 1;
                pending.insert(h, (item.text.clone(), vec![item.id.clone()]));
                pending_order.push(h);
            }
        }
    }
    if pending_order.is_empty() {
        return out;
    }

    // Political pre-filter.
    let verdicts = join_all(pending_order.iter().map(|h| {
        let text = &pending[h].0;
        async move { is_political(text, backend).await }
    }))
    .await;
    out.diagnostics.political_requests += pending_order.len();

    let mut resolved: HashMap<u64, (AapaScore, bool)> = HashMap::new();
    let mut political: Vec<u64> = Vec::new();
    for (h, verdict) in pending_order.iter().zip(verdicts) {
        match verdict {
            Ok(true) => political.push(*h),
            Ok(false) => {
                resolved.insert(*h, (AapaScore::non_political(), true));
            }
            Err(e) => {
                tracing::warn!(error = %e, "political classifier unavailable");
                out.diagnostics.backend_errors += 1;
                out.diagnostics.events.push(ScoringEvent::PoliticalUnavailable {
                    id: pending[h].1[0].clone(),
                    message: e.to_string(),
                });
                resolved.insert(*h, (AapaScore::non_political(), false));
            }
        }
    }

    // Eight prompts per chunk, all in flight together.
    let chunks = chunk_messages(&political, MAX_CHUNK);
    let mut requests = Vec::with_capacity(chunks.len() * 8);
    for (ci, chunk) in chunks.iter().enumerate() {
        let messages: Vec<(String, String)> =
            chunk.iter().map(|h| (format!("{h:016x}"), pending[h].0.clone())).collect();
        for factor in Factor::ALL {
            let prompt = FactorPrompt::new(factor, messages.clone()).expect("chunk is 1..=10");
            requests.push((ci, prompt));
        }
    }
    out.diagnostics.backend_requests += requests.len();
    let responses = join_all(requests.iter().map(|(_, prompt)| {
        tokio::time::timeout(deadline, backend.complete_factor(prompt))
    }))
    .await;

    let mut flags: HashMap<u64, ([bool; 8], bool)> =
        political.iter().map(|h| (*h, ([false; 8], true))).collect();
    for ((ci, prompt), response) in requests.iter().zip(responses) {
        let factor = prompt.factor;
        let chunk = &chunks[*ci];
        let raw = match response {
            Ok(Ok(raw)) => raw,
            Ok(Err(e)) => {
                tracing::warn!(%factor, chunk = ci, error = %e, "factor request failed");
                out.diagnostics.backend_errors += 1;
                out.diagnostics.events.push(ScoringEvent::BackendError {
                    factor,
                    chunk: *ci,
                    message: e.to_string(),
                });
                chunk.iter().for_each(|h| flags.get_mut(h).expect("chunk member").1 = false);
                continue;
            }
            Err(_) => {
                tracing::warn!(%factor, chunk = ci, timeout_ms, "factor request timed out");
                out.diagnostics.timeouts += 1;
                out.diagnostics.events.push(ScoringEvent::Timeout { factor, chunk: *ci });
                chunk.iter().for_each(|h| flags.get_mut(h).expect("chunk member").1 = false);
                continue;
            }
        };
        let parsed = prompt::parse_factor_response(&raw, prompt.ids());
        if parsed.is_degraded() {
            out.diagnostics.degraded_parses += 1;
            out.diagnostics.events.push(ScoringEvent::DegradedParse {
                factor,
                chunk: *ci,
                ids: parsed.degraded.clone(),
            });
        }
        for h in chunk {
            let key = format!("{h:016x}");
            let entry = flags.get_mut(h).expect("chunk member");
            entry.0[factor.index()] = parsed.answers.get(&key).copied().unwrap_or(false);
            if parsed.degraded.contains(&key) {
                entry.1 = false;
            }
        }
    }
    for (h, (f, complete)) in flags {
        resolved.insert(h, (AapaScore::political(f), complete));
    }

    for h in &pending_order {
        let (score, complete) = resolved[h];
        if complete {
            cache.insert(*h, score);
        }
        for id in &pending[h].1 {
            out.scores.insert(id.clone(), score);
        }
    }
    out
}

/// Scores the non-ad posts of a batch.
pub async fn score_batch<B: ScoringBackend + ?Sized>(
    batch: &FeedBatch,
    backend: &B,
    cache: &ScoreCache,
    timeout_ms: u64,
) -> ScoreOutcome {
    let items: Vec<ScoringItem> =
        batch.posts.iter().filter(|p| !p.is_ad).map(ScoringItem::from_post).collect();
    score_posts(&items, backend, cache, timeout_ms).await
}

/// Backend wrapper that counts requests and can inject per-factor delays
/// or failures. Used by diagnostics endpoints and tests.
pub struct InstrumentedBackend<B> {
    inner: B,
    factor_requests: AtomicUsize,
    political_requests: AtomicUsize,
    delays: Mutex<HashMap<Factor, Duration>>,
    failures: Mutex<HashMap<Factor, BackendError>>,
    garbage: Mutex<Option<String>>,
}

impl<B: ScoringBackend> InstrumentedBackend<B> {
    pub fn new(inner: B) -> Self {
        InstrumentedBackend {
            inner,
            factor_requests: AtomicUsize::new(0),
            political_requests: AtomicUsize::new(0),
            delays: Mutex::new(HashMap::new()),
            failures: Mutex::new(HashMap::new()),
            garbage: Mutex::new(None),
        }
    }

    pub fn delay_factor(&self, factor: Factor, delay: Duration) {
        self.delays.lock().expect("lock").insert(factor, delay);
    }

    pub fn delay_all(&self, delay: Duration) {
        let mut d = self.delays.lock().expect("lock");
        for f in Factor::ALL {
            d.insert(f, delay);
        }
    }

    pub fn fail_factor(&self, factor: Factor, err: BackendError) {
        self.failures.lock().expect("lock").insert(factor, err);
    }

    /// Replace every factor response with `raw`.
    pub fn respond_with(&self, raw: impl Into<String>) {
        *self.garbage.lock().expect("lock") = Some(raw.into());
    }

    pub fn clear_faults(&self) {
        self.delays.lock().expect("lock").clear();
        self.failures.lock().expect("lock").clear();
        *self.garbage.lock().expect("lock") = None;
    }

    pub fn factor_requests(&self) -> usize {
        self.factor_requests.load(Ordering::SeqCst)
    }

    pub fn political_requests(&self) -> usize {
        self.political_requests.load(Ordering::SeqCst)
    }

    pub fn reset_counts(&self) {
        self.factor_requests.store(0, Ordering::SeqCst);
        self.political_requests.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

#[async_trait]
impl<B: ScoringBackend> ScoringBackend for InstrumentedBackend<B> {
    fn capabilities(&self) -> BackendCapabilities {
        self.inner.capabilities()
    }

    async fn classify_political(&self, text: &str) -> Result<bool, BackendError> {
        self.political_requests.fetch_add(1, Ordering::SeqCst);
        self.inner.classify_political(text).await
    }

    async fn complete_factor(&self, prompt: &FactorPrompt) -> Result<String, BackendError> {
        self.factor_requests.fetch_add(1, Ordering::SeqCst);
        let delay = self.delays.lock().expect("lock").get(&prompt.factor).copied();
        if let Some(d) = delay {
            tokio::time::sleep(d).await;
        }
        if let Some(e) = self.failures.lock().expect("lock").get(&prompt.factor).cloned() {
            return Err(e);
        }
        if let Some(raw) = self.garbage.lock().expect("lock").clone() {
            return Ok(raw);
        }
        self.inner.complete_factor(prompt).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn political_items(n: usize) -> Vec<ScoringItem> {
        (0..n)
            .map(|i| ScoringItem {
                id: format!("p{i}"),
                text: format!("Congress vote number {i}: never compromise, i despise them"),
            })
            .collect()
    }

    #[test]
    fn chunk_sizes() {
        let v: Vec<usize> = (0..23).collect();
        let sizes: Vec<usize> = chunk_messages(&v, 10).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![10, 10, 3]);
        assert_eq!(chunk_messages(&v[..10], 10).len(), 1);
        assert!(chunk_messages::<usize>(&[], 10).is_empty());
        let flat: Vec<usize> = chunk_messages(&v, 10).concat();
        assert_eq!(flat, v);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(content_hash("hello"), 0x2cf24dba5fb0a30e);
    }

    #[test]
    fn screening_threshold() {
        assert!(qualifies(9.0 / 180.0));
        assert!(!qualifies(8.0 / 180.0));
        assert!(!qualifies(0.0));
        assert!(qualifies(1.0));
    }

    #[tokio::test]
    async fn political_fraction_excludes_ads() {
        let oracle = LexiconOracle::bundled();
        let mut posts = vec![Post::ad("ad", "Vote for our new soda")];
        posts.push(Post::new("a", "The senate passed it"));
        posts.push(Post::new("b", "My cat sleeps"));
        let f = political_fraction(&posts, &oracle).await.unwrap();
        assert_eq!(f, 0.5);
        let ads = vec![Post::ad("ad", "x")];
        assert_eq!(political_fraction(&ads, &oracle).await, Err(ScoringError::EmptyBatch));
    }

    #[tokio::test]
    async fn ten_political_posts_cost_eight_requests_then_zero() {
        let backend = InstrumentedBackend::new(LexiconOracle::bundled());
        let cache = ScoreCache::new();
        let items = political_items(10);
        let first = score_posts(&items, &backend, &cache, DEFAULT_TIMEOUT_MS).await;
        assert_eq!(backend.factor_requests(), 8);
        assert_eq!(first.diagnostics.backend_requests, 8);
        assert!(first.scores.values().all(|s| s.count == 2));

        backend.reset_counts();
        let second = score_posts(&items, &backend, &cache, DEFAULT_TIMEOUT_MS).await;
        assert_eq!(backend.factor_requests(), 0);
        assert_eq!(backend.political_requests(), 0);
        assert_eq!(second.diagnostics.cache_hits, 10);
        assert_eq!(first.scores, second.scores);
    }

    #[tokio::test(start_paused = true)]
    async fn stalled_factor_degrades_to_false() {
        let backend = InstrumentedBackend::new(LexiconOracle::bundled());
        backend.delay_factor(Factor::PartisanViolence, Duration::from_millis(9_000));
        let cache = ScoreCache::new();
        let items = vec![ScoringItem {
            id: "a".into(),
            text: "The senate vote: take up arms, never compromise".into(),
        }];
        let out = score_posts(&items, &backend, &cache, DEFAULT_TIMEOUT_MS).await;
        let s = out.scores["a"];
        assert!(!s.has(Factor::PartisanViolence));
        assert!(s.has(Factor::OppositionToBipartisanship));
        assert_eq!(out.diagnostics.timeouts, 1);
        assert!(out
            .diagnostics
            .events
            .contains(&ScoringEvent::Timeout { factor: Factor::PartisanViolence, chunk: 0 }));
        // Degraded scores are not cached.
        assert!(cache.is_empty());
    }

    #[tokio::test]
    async fn non_political_posts_skip_factor_prompts() {
        let backend = InstrumentedBackend::new(LexiconOracle::bundled());
        let cache = ScoreCache::new();
        let items = vec![ScoringItem { id: "c".into(), text: "My cat sleeps 16 hours a day".into() }];
        let out = score_posts(&items, &backend, &cache, DEFAULT_TIMEOUT_MS).await;
        assert_eq!(out.scores["c"], AapaScore::non_political());
        assert_eq!(backend.factor_requests(), 0);
    }

    #[tokio::test]
    async fn garbage_responses_are_logged() {
        let backend = InstrumentedBackend::new(LexiconOracle::bundled());
        backend.respond_with("overloaded");
        let cache = ScoreCache::new();
        let out = score_posts(&political_items(3), &backend, &cache, DEFAULT_TIMEOUT_MS).await;
        assert_eq!(out.diagnostics.degraded_parses, 8);
        assert!(out.scores.values().all(|s| s.is_political && s.count == 0));
    }

    #[tokio::test]
    async fn duplicate_texts_share_one_slot() {
        let backend = InstrumentedBackend::new(LexiconOracle::bundled());
        let cache = ScoreCache::new();
        let mut items = political_items(1);
        items.push(ScoringItem { id: "dup".into(), text: items[0].text.clone() });
        let out = score_posts(&items, &backend, &cache, DEFAULT_TIMEOUT_MS).await;
        assert_eq!(out.scores.len(), 2);
        assert_eq!(out.scores["dup"], out.scores["p0"]);
        assert_eq!(backend.factor_requests(), 8);
    }
}
