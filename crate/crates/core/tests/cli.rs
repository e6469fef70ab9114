use std::path::Path;
use std::process::{Command, Output};

fn feedlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feedlab"))
        .args(args)
        .env_remove("SCORER_URL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn screen_reports_qualification() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/screening_feed.jsonl");
    let o = feedlab(&["screen", "--posts", fixture.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "qualified: true (0.050)");
}

#[test]
fn simulate_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("run");
    let b = bundle.to_str().unwrap();
    let o = feedlab(&["simulate", "--participants", "30", "--seed", "5", "--out", b]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(manifest["n_participants"], 30);
    assert_eq!(manifest["master_seed"], 5);

    let o = feedlab(&["analyze", "--bundle", b, "--experiment", "reduce", "--ri-draws", "100"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for table in ["coefficients", "outcomes", "exposure", "engagement", "randomization", "factors", "cooccurrence"] {
        let p = bundle.join(format!("analysis/reduce_{table}.csv"));
        let mut r = csv::Reader::from_path(&p).unwrap();
        let width = r.headers().unwrap().len();
        assert!(r.records().all(|rec| rec.unwrap().len() == width), "{table}");
    }
    assert!(bundle.join("analysis/reduce_summary.json").exists());

    let o = feedlab(&["report", "--bundle", b, "--format", "md"]);
    assert!(o.status.success());
    let md = stdout(&o);
    assert!(md.contains("## reduce experiment") && md.contains("## increase experiment"));
}

#[test]
fn power_prints_estimate() {
    let o = feedlab(&["power", "--effect", "0", "--n", "40", "--sims", "100", "--model", "ols"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["n_sims"], 100);
    assert!(v["power"].as_f64().unwrap() < 0.2);
}

#[test]
fn errors_are_json_on_stderr() {
    let o = feedlab(&["analyze", "--bundle", "/definitely/not/here"]);
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["error"].as_str().unwrap().contains("manifest.json"));
    let o = feedlab(&["power", "--effect", "1", "--n", "2", "--sims", "100"]);
    assert!(!o.status.success());
    assert!(serde_json::from_slice::<serde_json::Value>(&o.stderr).is_ok());
}
