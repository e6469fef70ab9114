//! C ABI for feedlab.
//!
//! Every fallible call returns a [`FeedlabStatus`] and writes results
//! through out-pointers. Strings handed to the caller are heap-allocated
//! and must be released with [`feedlab_string_free`]; handles are released
//! with their own `_free` function. Structured values cross the boundary as
//! JSON in the same shapes the HTTP service uses. After a failure,
//! [`feedlab_last_error`] returns the message for the calling thread.
//!
//! Handles are not synchronized: use one from a single thread at a time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use feedlab::analysis::{analyze, AnalysisOptions};
use feedlab::model::{assemble_scoring_text, AapaScore, Arm, Experiment, FeedBatch, Post, SurveyResponse};
use feedlab::rerank::{rerank_increased, rerank_reduced, DemotionCache, ScoredBatch};
use feedlab::scoring::{qualifies, LexiconOracle};
use feedlab::seed;
use feedlab::sim::{run_study, SimConfig};
use feedlab::stats::{mann_whitney_u, power_simulation, sharpened_fdr, PowerConfig};
use feedlab::store::{read_bundle, write_bundle};
use feedlab::survey::{maybe_issue, record_answer, SchedulerState};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const FEEDLAB_ARM_CONTROL: i32 = 0;
pub const FEEDLAB_ARM_TREATMENT: i32 = 1;
pub const FEEDLAB_EXPERIMENT_REDUCE: i32 = 0;
pub const FEEDLAB_EXPERIMENT_INCREASE: i32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidArgument = 4,
    Io = 5,
    Stats = 6,
    Panic = 7,
}

/// Lexicon scorer.
pub struct FeedlabOracle {
    oracle: LexiconOracle,
}

/// Reduced Exposure state for one browsing session: posts demoted from
/// earlier loads waiting to re-enter the feed.
pub struct FeedlabSession {
    cache: DemotionCache,
}

/// In-feed survey scheduler for one participant.
pub struct FeedlabScheduler {
    state: SchedulerState,
}

struct Failure {
    status: FeedlabStatus,
    message: String,
}

impl Failure {
    fn new(status: FeedlabStatus, message: impl Into<String>) -> Self {
        Failure { status, message: message.into() }
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Outcome) -> FeedlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FeedlabStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            FeedlabStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(FeedlabStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(FeedlabStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn read_json<T: DeserializeOwned>(p: *const c_char, what: &str) -> Result<T, Failure> {
    serde_json::from_str(read_str(p, what)?)
        .map_err(|e| Failure::new(FeedlabStatus::InvalidJson, format!("{what}: {e}")))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, n))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

unsafe fn write_json<T: Serialize>(out: *mut *mut c_char, value: &T) -> Outcome {
    non_null(out, "out")?;
    let s = serde_json::to_string(value)
        .map_err(|e| Failure::new(FeedlabStatus::InvalidJson, e.to_string()))?;
    *out = into_c_string(s);
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> Outcome {
    non_null(out, "out")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    non_null(p, what)?;
    Ok(&mut *p)
}

fn arm(v: i32) -> Result<Arm, Failure> {
    match v {
        FEEDLAB_ARM_CONTROL => Ok(Arm::Control),
        FEEDLAB_ARM_TREATMENT => Ok(Arm::Treatment),
        _ => Err(Failure::new(FeedlabStatus::InvalidArgument, format!("unknown arm {v}"))),
    }
}

fn experiment(v: i32) -> Result<Experiment, Failure> {
    match v {
        FEEDLAB_EXPERIMENT_REDUCE => Ok(Experiment::Reduce),
        FEEDLAB_EXPERIMENT_INCREASE => Ok(Experiment::Increase),
        _ => Err(Failure::new(FeedlabStatus::InvalidArgument, format!("unknown experiment {v}"))),
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::new(FeedlabStatus::InvalidArgument, e.to_string())
}

fn stats(e: impl std::fmt::Display) -> Failure {
    Failure::new(FeedlabStatus::Stats, e.to_string())
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::new(FeedlabStatus::Io, e.to_string())
}

/// Library version, a static string the caller must not free.
#[no_mangle]
pub extern "C" fn feedlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Free with
/// `feedlab_string_free`.
#[no_mangle]
pub extern "C" fn feedlab_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Release a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn feedlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Oracle with the bundled lexicon.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn feedlab_oracle_new(out: *mut *mut FeedlabOracle) -> FeedlabStatus {
    guard(|| put_handle(out, FeedlabOracle { oracle: LexiconOracle::bundled() }))
}

/// Oracle from a lexicon in TOML.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn feedlab_oracle_from_toml(toml: *const c_char, out: *mut *mut FeedlabOracle) -> FeedlabStatus {
    guard(|| {
        let oracle = LexiconOracle::from_toml(read_str(toml, "toml")?).map_err(invalid)?;
        put_handle(out, FeedlabOracle { oracle })
    })
}

/// # Safety
/// `oracle` must come from `feedlab_oracle_new*` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn feedlab_oracle_free(oracle: *mut FeedlabOracle) {
    if !oracle.is_null() {
        drop(Box::from_raw(oracle));
    }
}

/// Score one text. Writes an `AapaScore` object.
///
/// # Safety
/// Pointers must be valid; `text` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn feedlab_oracle_score(
    oracle: *mut FeedlabOracle,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> FeedlabStatus {
    guard(|| {
        let o = handle(oracle, "oracle")?;
        write_json(out_json, &o.oracle.score(read_str(text, "text")?))
    })
}

/// Score the non-ad posts of a JSON array of posts. Writes an object from
/// post id to `AapaScore`.
///
/// # Safety
/// Pointers must be valid; `posts_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn feedlab_oracle_score_posts(
    oracle: *mut FeedlabOracle,
    posts_json: *const c_char,
    out_json: *mut *mut c_char,
) -> FeedlabStatus {
    guard(|| {
        let o = handle(oracle, "oracle")?;
        let posts: Vec<Post> = read_json(posts_json, "posts")?;
        let scores: std::collections::BTreeMap<&str, AapaScore> = posts
            .iter()
            .filter(|p| !p.is_ad)
            .map(|p| (p.post_id.as_str(), o.oracle.score(&assemble_scoring_text(p))))
            .collect();
        write_json(out_json, &scores)
    })
}

/// Eligibility screen over a JSON array of posts.
///
/// # Safety
/// Pointers must be valid; `posts_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn feedlab_oracle_screen(
    oracle: *mut FeedlabOracle,
    posts_json: *const c_char,
    out_fraction: *mut f64,
    out_qualified: *mut bool,
) -> FeedlabStatus {
    guard(|| {
        let o = handle(oracle, "oracle")?;
        non_null(out_fraction, "out_fraction")?;
        non_null(out_qualified, "out_qualified")?;
        let posts: Vec<Post> = read_json(posts_json, "posts")?;
        let texts: Vec<String> = posts.iter().filter(|p| !p.is_ad).map(assemble_scoring_text).collect();
        if texts.is_empty() {
            return Err(invalid("no non-ad posts to screen"));
        }
        let political = texts.iter().filter(|t| o.oracle.is_political(t)).count();
        let f = political as f64 / texts.len() as f64;
        *out_fraction = f;
        *out_qualified = qualifies(f);
        Ok(())
    })
}

/// # Safety
/// `session_id` NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn feedlab_session_new(session_id: *const c_char, out: *mut *mut FeedlabSession) -> FeedlabStatus {
    guard(|| put_handle(out, FeedlabSession { cache: DemotionCache::new(read_str(session_id, "session_id")?) }))
}

/// # Safety
/// `session` must come from `feedlab_session_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn feedlab_session_free(session: *mut FeedlabSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Reduced Exposure for one load of the session. `batch_json` is a feed
/// batch, `scores_json` maps every non-ad post id to its score. Writes the
/// served feed with posts demoted earlier spliced in at their keys.
///
/// # Safety
/// Pointers must be valid; JSON arguments NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn feedlab_session_rerank_reduced(
    session: *mut FeedlabSession,
    batch_json: *const c_char,
    scores_json: *const c_char,
    arm_code: i32,
    seed_value: u64,
    survey_sampled: bool,
    out_json: *mut *mut c_char,
) -> FeedlabStatus {
    guard(|| {
        let s = handle(session, "session")?;
        let batch: FeedBatch = read_json(batch_json, "batch")?;
        let scores = read_json(scores_json, "scores")?;
        let arm = arm(arm_code)?;
        let scored = ScoredBatch::new(batch, scores).map_err(invalid)?;
        let mut feed = rerank_reduced(&scored, arm, &mut seed::rng(seed_value, &[]), survey_sampled).map_err(invalid)?;
        if arm == Arm::Treatment {
            s.cache.absorb(&feed.demoted);
            s.cache.reemit_into(&mut feed.posts);
            s.cache.advance(feed.posts.len());
        }
        write_json(out_json, &feed)
    })
}

/// Demoted posts still waiting to re-enter the session.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn feedlab_session_pending(session: *mut FeedlabSession, out_count: *mut usize) -> FeedlabStatus {
    guard(|| {
        let s = handle(session, "session")?;
        non_null(out_count, "out_count")?;
        *out_count = s.cache.pending().len();
        Ok(())
    })
}

/// Increased Exposure for one load. `candidate_json` is a post or NULL.
///
/// # Safety
/// Pointers must be valid; JSON arguments NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn feedlab_rerank_increased(
    batch_json: *const c_char,
    candidate_json: *const c_char,
    arm_code: i32,
    seed_value: u64,
    survey_sampled: bool,
    out_json: *mut *mut c_char,
) -> FeedlabStatus {
    guard(|| {
        let batch: FeedBatch = read_json(batch_json, "batch")?;
        let candidate: Option<Post> =
            if candidate_json.is_null() { None } else { Some(read_json(candidate_json, "candidate")?) };
        let feed = rerank_increased(&batch, arm(arm_code)?, candidate.as_ref(), &mut seed::rng(seed_value, &[]), survey_sampled);
        write_json(out_json, &feed)
    })
}

/// # Safety
/// `participant_id` NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn feedlab_scheduler_new(
    participant_id: *const c_char,
    local_tz_offset_minutes: i32,
    p0: f64,
    out: *mut *mut FeedlabScheduler,
) -> FeedlabStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&p0) {
            return Err(invalid(format!("p0 {p0} is outside [0, 1]")));
        }
        let state = SchedulerState::with_p0(read_str(participant_id, "participant_id")?, local_tz_offset_minutes, p0);
        put_handle(out, FeedlabScheduler { state })
    })
}

/// # Safety
/// `scheduler` must come from `feedlab_scheduler_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn feedlab_scheduler_free(scheduler: *mut FeedlabScheduler) {
    if !scheduler.is_null() {
        drop(Box::from_raw(scheduler));
    }
}

/// Prompt probability in effect at `now_ms`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn feedlab_scheduler_probability(
    scheduler: *mut FeedlabScheduler,
    now_ms: i64,
    out_probability: *mut f64,
) -> FeedlabStatus {
    guard(|| {
        let s = handle(scheduler, "scheduler")?;
        non_null(out_probability, "out_probability")?;
        *out_probability = s.state.probability_at(now_ms);
        Ok(())
    })
}

/// Decide whether an intervention event carries a survey. Writes a prompt
/// object, or NULL when none is issued.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn feedlab_scheduler_maybe_issue(
    scheduler: *mut FeedlabScheduler,
    now_ms: i64,
    seed_value: u64,
    out_json: *mut *mut c_char,
) -> FeedlabStatus {
    guard(|| {
        let s = handle(scheduler, "scheduler")?;
        non_null(out_json, "out_json")?;
        match maybe_issue(&mut s.state, now_ms, &mut seed::rng(seed_value, &[])) {
            Some(p) => write_json(out_json, &p),
            None => {
                *out_json = ptr::null_mut();
                Ok(())
            }
        }
    })
}

/// Record an answer given as a survey response object.
///
/// # Safety
/// Pointers must be valid; `response_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn feedlab_scheduler_record_answer(
    scheduler: *mut FeedlabScheduler,
    response_json: *const c_char,
    now_ms: i64,
) -> FeedlabStatus {
    guard(|| {
        let s = handle(scheduler, "scheduler")?;
        let response: SurveyResponse = read_json(response_json, "response")?;
        record_answer(&mut s.state, &response, now_ms).map(|_| ()).map_err(invalid)
    })
}

/// Sharpened q-values for `n` p-values, written to `out_q` (length `n`).
///
/// # Safety
/// `p` and `out_q` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn feedlab_sharpened_fdr(p: *const f64, n: usize, out_q: *mut f64) -> FeedlabStatus {
    guard(|| {
        let p = slice(p, n, "p")?;
        let q = sharpened_fdr(p).map_err(stats)?;
        if n > 0 {
            non_null(out_q, "out_q")?;
            std::slice::from_raw_parts_mut(out_q, n).copy_from_slice(&q);
        }
        Ok(())
    })
}

/// Two-sided Mann-Whitney U test.
///
/// # Safety
/// `x` and `y` must point to `nx` and `ny` doubles; outputs valid.
#[no_mangle]
pub unsafe extern "C" fn feedlab_mann_whitney(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    out_u: *mut f64,
    out_p: *mut f64,
) -> FeedlabStatus {
    guard(|| {
        non_null(out_u, "out_u")?;
        non_null(out_p, "out_p")?;
        let r = mann_whitney_u(slice(x, nx, "x")?, slice(y, ny, "y")?).map_err(stats)?;
        *out_u = r.u;
        *out_p = r.p_value;
        Ok(())
    })
}

/// Power simulation from a power config object. Writes the estimate.
///
/// # Safety
/// Pointers must be valid; `config_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn feedlab_power(config_json: *const c_char, out_json: *mut *mut c_char) -> FeedlabStatus {
    guard(|| {
        let config: PowerConfig = read_json(config_json, "config")?;
        write_json(out_json, &power_simulation(&config).map_err(stats)?)
    })
}

/// Run a synthetic study and write its bundle to `out_dir`. `config_toml`
/// may be NULL for defaults. Writes the bundle manifest.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn feedlab_simulate(
    config_toml: *const c_char,
    out_dir: *const c_char,
    out_json: *mut *mut c_char,
) -> FeedlabStatus {
    guard(|| {
        let config = if config_toml.is_null() {
            SimConfig::default()
        } else {
            SimConfig::from_toml(read_str(config_toml, "config_toml")?).map_err(invalid)?
        };
        let dir = read_str(out_dir, "out_dir")?;
        let data = run_study(&config).map_err(invalid)?;
        write_json(out_json, &write_bundle(&data, Path::new(dir)).map_err(io)?)
    })
}

/// Analyze one experiment of a bundle. `ri_draws` of 0 keeps the default.
/// Writes the full report.
///
/// # Safety
/// Pointers must be valid; `bundle_dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn feedlab_analyze(
    bundle_dir: *const c_char,
    experiment_code: i32,
    ri_draws: usize,
    out_json: *mut *mut c_char,
) -> FeedlabStatus {
    guard(|| {
        let mut opts = AnalysisOptions::new(experiment(experiment_code)?);
        if ri_draws > 0 {
            opts.ri_draws = ri_draws;
        }
        let data = read_bundle(Path::new(read_str(bundle_dir, "bundle_dir")?)).map_err(io)?;
        write_json(out_json, &analyze(&data, &opts).map_err(stats)?)
    })
}
