use std::ffi::{c_char, CStr, CString};
use std::ptr;

use feedlab_ffi::*;
use serde_json::{json, Value};

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Take ownership of a returned string.
unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    feedlab_string_free(p);
    s
}

unsafe fn last_error() -> String {
    take(feedlab_last_error())
}

fn aapa_text() -> String {
    "The senate vote on the budget bill. They are disgusting traitors. Those people are pure evil. \
     Jail them all. They want to destroy America."
        .into()
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(feedlab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn oracle_scores_and_screens() {
    unsafe {
        let mut o = ptr::null_mut();
        assert_eq!(feedlab_oracle_new(&mut o), FeedlabStatus::Ok);
        let mut out = ptr::null_mut();
        let text = cstr("Just baked sourdough bread this morning");
        assert_eq!(feedlab_oracle_score(o, text.as_ptr(), &mut out), FeedlabStatus::Ok);
        let v: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["is_political"], false);
        assert_eq!(v["count"], 0);

        let posts = json!([
            { "post_id": "a", "author_id": "x", "text": "Just baked sourdough bread this morning" },
            { "post_id": "b", "author_id": "x", "text": "Buy now", "is_ad": true },
        ]);
        let posts = cstr(&posts.to_string());
        assert_eq!(feedlab_oracle_score_posts(o, posts.as_ptr(), &mut out), FeedlabStatus::Ok);
        let v: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v.as_object().unwrap().keys().collect::<Vec<_>>(), vec!["a"]);

        let (mut f, mut q) = (f64::NAN, true);
        assert_eq!(feedlab_oracle_screen(o, posts.as_ptr(), &mut f, &mut q), FeedlabStatus::Ok);
        assert_eq!((f, q), (0.0, false));
        feedlab_oracle_free(o);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut o = ptr::null_mut();
        assert_eq!(feedlab_oracle_new(&mut o), FeedlabStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(feedlab_oracle_score(o, ptr::null(), &mut out), FeedlabStatus::NullPointer);
        assert!(last_error().contains("text"));

        let bad = cstr("[{");
        let (mut f, mut q) = (0.0, false);
        assert_eq!(feedlab_oracle_screen(o, bad.as_ptr(), &mut f, &mut q), FeedlabStatus::InvalidJson);

        let invalid = [0xffu8, 0];
        assert_eq!(feedlab_oracle_score(o, invalid.as_ptr().cast(), &mut out), FeedlabStatus::InvalidUtf8);
        feedlab_oracle_free(o);

        let batch = cstr(&json!({ "participant_id": "u", "load_seq": 0, "posts": [], "fetched_at": 0 }).to_string());
        assert_eq!(feedlab_rerank_increased(batch.as_ptr(), ptr::null(), 7, 0, false, &mut out), FeedlabStatus::InvalidArgument);
        assert!(last_error().contains("arm"));

        let p = [0.5, 1.5];
        let mut q = [0.0; 2];
        assert_eq!(feedlab_sharpened_fdr(p.as_ptr(), 2, q.as_mut_ptr()), FeedlabStatus::Stats);
        // Null handles free silently.
        feedlab_oracle_free(ptr::null_mut());
        feedlab_session_free(ptr::null_mut());
        feedlab_scheduler_free(ptr::null_mut());
        feedlab_string_free(ptr::null_mut());
    }
}

fn batch_json(prefix: &str, n: usize, aapa_at: &[usize]) -> (String, String) {
    let posts: Vec<Value> = (0..n)
        .map(|i| {
            let text = if aapa_at.contains(&i) { aapa_text() } else { format!("Weekend hiking photos {i}") };
            json!({ "post_id": format!("{prefix}{i}"), "author_id": "x", "text": text })
        })
        .collect();
    let batch = json!({ "participant_id": "u", "load_seq": 0, "posts": posts, "fetched_at": 0 });
    let scores: serde_json::Map<String, Value> = (0..n)
        .map(|i| {
            let count = if aapa_at.contains(&i) { 5 } else { 0 };
            let factors: Vec<bool> = (0..8).map(|f| f < count).collect();
            (format!("{prefix}{i}"), json!({ "factors": factors, "count": count, "is_political": count > 0 }))
        })
        .collect();
    (batch.to_string(), Value::Object(scores).to_string())
}

#[test]
fn session_demotes_then_reemits() {
    unsafe {
        let mut s = ptr::null_mut();
        let id = cstr("s1");
        assert_eq!(feedlab_session_new(id.as_ptr(), &mut s), FeedlabStatus::Ok);
        let (b, sc) = batch_json("a", 10, &[0]);
        let (b, sc) = (cstr(&b), cstr(&sc));
        let mut out = ptr::null_mut();
        assert_eq!(
            feedlab_session_rerank_reduced(s, b.as_ptr(), sc.as_ptr(), FEEDLAB_ARM_TREATMENT, 1, true, &mut out),
            FeedlabStatus::Ok
        );
        let feed: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(feed["posts"].as_array().unwrap().len(), 9);
        assert_eq!(feed["survey_slot"], 2);
        assert_eq!(feed["demoted"][0]["penalty_key"], 51);
        let mut pending = 0;
        assert_eq!(feedlab_session_pending(s, &mut pending), FeedlabStatus::Ok);
        assert_eq!(pending, 1);

        // Key 51 is the second slot of the fifth follow-up load: 9 + 4 x 10 served before it.
        let mut seen_at = None;
        for load in 1..=6 {
            let (b, sc) = batch_json(&format!("n{load}-"), 10, &[]);
            let (b, sc) = (cstr(&b), cstr(&sc));
            assert_eq!(
                feedlab_session_rerank_reduced(s, b.as_ptr(), sc.as_ptr(), FEEDLAB_ARM_TREATMENT, 1, false, &mut out),
                FeedlabStatus::Ok
            );
            let feed: Value = serde_json::from_str(&take(out)).unwrap();
            if let Some(i) = feed["posts"].as_array().unwrap().iter().position(|p| p["origin"] == "Reemitted") {
                seen_at = Some((load, i));
            }
        }
        assert_eq!(seen_at, Some((5, 1)));
        assert_eq!(feedlab_session_pending(s, &mut pending), FeedlabStatus::Ok);
        assert_eq!(pending, 0);
        feedlab_session_free(s);
    }
}

#[test]
fn increased_control_is_unchanged() {
    unsafe {
        let (b, _) = batch_json("a", 5, &[]);
        let b = cstr(&b);
        let cand = cstr(&json!({ "post_id": "c", "author_id": "x", "text": aapa_text() }).to_string());
        let mut out = ptr::null_mut();
        assert_eq!(feedlab_rerank_increased(b.as_ptr(), cand.as_ptr(), FEEDLAB_ARM_CONTROL, 3, true, &mut out), FeedlabStatus::Ok);
        let c: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(feedlab_rerank_increased(b.as_ptr(), cand.as_ptr(), FEEDLAB_ARM_TREATMENT, 3, true, &mut out), FeedlabStatus::Ok);
        let t: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(c["posts"].as_array().unwrap().len(), 5);
        assert_eq!(t["posts"].as_array().unwrap().len(), 6);
        assert_eq!(c["survey_slot"], t["survey_slot"]);
    }
}

#[test]
fn scheduler_halves_after_answers() {
    unsafe {
        let mut s = ptr::null_mut();
        let pid = cstr("u");
        assert_eq!(feedlab_scheduler_new(pid.as_ptr(), 0, 1.0, &mut s), FeedlabStatus::Ok);
        let now = 1_700_000_000_000i64;
        let mut out = ptr::null_mut();
        assert_eq!(feedlab_scheduler_maybe_issue(s, now, 9, &mut out), FeedlabStatus::Ok);
        let prompt: Value = serde_json::from_str(&take(out)).unwrap();
        let values = if prompt["kind"]["type"] == "Thermometer" { json!([40]) } else { json!([10, 20]) };
        let response = cstr(&json!({ "prompt_id": prompt["prompt_id"], "values": values, "answered_at": now }).to_string());
        assert_eq!(feedlab_scheduler_record_answer(s, response.as_ptr(), now), FeedlabStatus::Ok);
        let mut p = 0.0;
        assert_eq!(feedlab_scheduler_probability(s, now, &mut p), FeedlabStatus::Ok);
        assert_eq!(p, 0.5);
        // Answering twice is rejected.
        assert_eq!(feedlab_scheduler_record_answer(s, response.as_ptr(), now), FeedlabStatus::InvalidArgument);
        let mut bad = ptr::null_mut();
        assert_eq!(feedlab_scheduler_new(pid.as_ptr(), 0, 2.0, &mut bad), FeedlabStatus::InvalidArgument);
        feedlab_scheduler_free(s);
    }
}

#[test]
fn stats_entry_points() {
    unsafe {
        let p = [0.01];
        let mut q = [0.0];
        assert_eq!(feedlab_sharpened_fdr(p.as_ptr(), 1, q.as_mut_ptr()), FeedlabStatus::Ok);
        assert!((q[0] - 0.01).abs() <= 1e-4);
        assert_eq!(feedlab_sharpened_fdr(ptr::null(), 0, ptr::null_mut()), FeedlabStatus::Ok);

        let (x, y) = ([1.0, 2.0], [3.0, 4.0]);
        let (mut u, mut pv) = (f64::NAN, f64::NAN);
        assert_eq!(feedlab_mann_whitney(x.as_ptr(), 2, y.as_ptr(), 2, &mut u, &mut pv), FeedlabStatus::Ok);
        assert_eq!((u, pv), (0.0, 1.0 / 3.0));
        assert_eq!(feedlab_mann_whitney(x.as_ptr(), 2, y.as_ptr(), 0, &mut u, &mut pv), FeedlabStatus::Stats);

        let config = json!({
            "effect": 0.0, "n": 40, "sigma_u": 6.0, "sigma_e": 10.0, "obs_per_participant": 1,
            "n_sims": 100, "alpha": 0.05, "seed": 1, "model": "Ols"
        });
        let config = cstr(&config.to_string());
        let mut out = ptr::null_mut();
        assert_eq!(feedlab_power(config.as_ptr(), &mut out), FeedlabStatus::Ok);
        let est: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(est["n_sims"], 100);
    }
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("b");
    unsafe {
        let toml = cstr("n_participants = 40\nmaster_seed = 3\n[study]\nquota_reduce = 20\nquota_increase = 20\n[feed]\npool_size = 400\n");
        let out_dir = cstr(bundle.to_str().unwrap());
        let mut out = ptr::null_mut();
        assert_eq!(feedlab_simulate(toml.as_ptr(), out_dir.as_ptr(), &mut out), FeedlabStatus::Ok, "{}", last_error());
        let manifest: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(manifest["n_participants"], 40);
        assert_eq!(feedlab_analyze(out_dir.as_ptr(), FEEDLAB_EXPERIMENT_REDUCE, 100, &mut out), FeedlabStatus::Ok, "{}", last_error());
        let report: Value = serde_json::from_str(&take(out)).unwrap();
        assert!(report.is_object());
        let missing = cstr(dir.path().join("none").to_str().unwrap());
        assert_eq!(feedlab_analyze(missing.as_ptr(), FEEDLAB_EXPERIMENT_REDUCE, 0, &mut out), FeedlabStatus::Io);
    }
}
