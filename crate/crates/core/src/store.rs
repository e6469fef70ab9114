//! Append-only JSONL persistence and simulation bundles.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{AapaScore, Assignment, EngagementEvent, Participant};
use crate::sim::study::{LoadRecord, PostSurvey, StudyData, SurveyRecord};
use crate::sim::SimConfig;

pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const PARTICIPANTS: &str = "participants.jsonl";
pub const ASSIGNMENTS: &str = "assignments.jsonl";
pub const EVENTS: &str = "events.jsonl";
pub const SURVEYS: &str = "surveys.jsonl";
pub const LOADS: &str = "loads.jsonl";
pub const SCORES: &str = "scores.jsonl";
pub const POST_SURVEY: &str = "post_survey.csv";
pub const STUDY_STARTS: &str = "study_starts.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt record in {path} line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("bundle manifest mismatch: {0}")]
    Manifest(String),
    #[error(transparent)]
    Config(#[from] crate::sim::SimError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

/// Append records, one JSON document per line, and flush.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("records serialize");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    w.get_ref().sync_data().map_err(io_err(path))
}

/// Read every record. A final line without its newline is a write cut
/// short by a crash and is dropped; any other bad line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(io_err(path))?;
        if read == 0 {
            break;
        }
        n += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line.trim_end()) {
            Ok(r) => out.push(r),
            Err(_) if !complete => {
                tracing::warn!(path = %path.display(), line = n, "dropping truncated trailing record");
                break;
            }
            Err(e) => {
                return Err(StoreError::Corrupt { path: path.display().to_string(), line: n, message: e.to_string() })
            }
        }
    }
    Ok(out)
}

/// Cut a trailing partial record left by an interrupted append so later
/// appends start on a fresh line. Returns the number of bytes removed.
pub fn repair_jsonl_tail(path: &Path) -> Result<u64, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(io_err(path)(e)),
    };
    if bytes.last().is_none_or(|b| *b == b'\n') {
        return Ok(0);
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    let file = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    file.set_len(keep as u64).map_err(io_err(path))?;
    file.sync_data().map_err(io_err(path))?;
    tracing::warn!(path = %path.display(), removed = bytes.len() - keep, "truncated partial trailing record");
    Ok((bytes.len() - keep) as u64)
}

/// Replace a file atomically via a sibling temp file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_data().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub master_seed: u64,
    pub config_sha256: String,
    pub n_participants: usize,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreRecord {
    post_id: String,
    #[serde(flatten)]
    score: AapaScore,
}

fn jsonl_bytes<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

fn post_survey_csv(rows: &[PostSurvey]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("csv row");
    }
    w.into_inner().expect("in-memory csv")
}

/// Write a run as a bundle directory. Output bytes depend only on `data`.
pub fn write_bundle(data: &StudyData, dir: &Path) -> Result<BundleManifest, StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let config = data.config.to_toml().into_bytes();
    let scores: Vec<ScoreRecord> =
        data.scores.iter().map(|(id, s)| ScoreRecord { post_id: id.clone(), score: *s }).collect();
    let files: Vec<(&str, Vec<u8>)> = vec![
        (CONFIG, config.clone()),
        (GROUND_TRUTH, serde_json::to_vec_pretty(&data.config.truth).expect("truth serializes")),
        (PARTICIPANTS, jsonl_bytes(&data.participants)),
        (ASSIGNMENTS, jsonl_bytes(&data.assignments)),
        (EVENTS, jsonl_bytes(&data.events)),
        (SURVEYS, jsonl_bytes(&data.surveys)),
        (LOADS, jsonl_bytes(&data.loads)),
        (SCORES, jsonl_bytes(&scores)),
        (POST_SURVEY, post_survey_csv(&data.post_surveys)),
        (STUDY_STARTS, serde_json::to_vec_pretty(&data.study_starts).expect("starts serialize")),
    ];
    let mut manifest = BundleManifest {
        version: BUNDLE_VERSION,
        master_seed: data.config.master_seed,
        config_sha256: sha256_hex(&config),
        n_participants: data.participants.len(),
        files: BTreeMap::new(),
    };
    for (name, bytes) in &files {
        write_atomic(&dir.join(name), bytes)?;
        manifest.files.insert(name.to_string(), sha256_hex(bytes));
    }
    let m = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST), &m)?;
    Ok(manifest)
}

fn read_file(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(io_err(path))
}

/// Load a bundle, checking the config hash against the manifest.
pub fn read_bundle(dir: &Path) -> Result<StudyData, StoreError> {
    let manifest: BundleManifest = serde_json::from_slice(&read_file(&dir.join(MANIFEST))?)
        .map_err(|e| StoreError::Manifest(e.to_string()))?;
    if manifest.version != BUNDLE_VERSION {
        return Err(StoreError::Manifest(format!("unsupported version {}", manifest.version)));
    }
    let config_bytes = read_file(&dir.join(CONFIG))?;
    if sha256_hex(&config_bytes) != manifest.config_sha256 {
        return Err(StoreError::Manifest("config hash differs from manifest".into()));
    }
    let config = SimConfig::from_toml(&String::from_utf8_lossy(&config_bytes))?;
    let participants: Vec<Participant> = read_jsonl(&dir.join(PARTICIPANTS))?;
    let assignments: Vec<Assignment> = read_jsonl(&dir.join(ASSIGNMENTS))?;
    let events: Vec<EngagementEvent> = read_jsonl(&dir.join(EVENTS))?;
    let surveys: Vec<SurveyRecord> = read_jsonl(&dir.join(SURVEYS))?;
    let loads: Vec<LoadRecord> = read_jsonl(&dir.join(LOADS))?;
    let scores: Vec<ScoreRecord> = read_jsonl(&dir.join(SCORES))?;
    let post_path = dir.join(POST_SURVEY);
    let mut post_surveys = Vec::new();
    if post_path.exists() {
        let mut r = csv::Reader::from_path(&post_path)
            .map_err(|e| StoreError::Corrupt { path: post_path.display().to_string(), line: 0, message: e.to_string() })?;
        for (i, row) in r.deserialize().enumerate() {
            post_surveys.push(row.map_err(|e: csv::Error| StoreError::Corrupt {
                path: post_path.display().to_string(),
                line: i + 2,
                message: e.to_string(),
            })?);
        }
    }
    let starts_path = dir.join(STUDY_STARTS);
    let study_starts = if starts_path.exists() {
        serde_json::from_slice(&read_file(&starts_path)?).map_err(|e| StoreError::Corrupt {
            path: starts_path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })?
    } else {
        BTreeMap::new()
    };
    Ok(StudyData {
        config,
        study_starts,
        participants,
        assignments,
        events,
        surveys,
        loads,
        scores: scores.into_iter().map(|r| (r.post_id, r.score)).collect(),
        post_surveys,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::run_study;

    #[test]
    fn jsonl_round_trip_and_truncated_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        append_jsonl(&p, &[1u32, 2, 3]).unwrap();
        append_jsonl(&p, &[4u32]).unwrap();
        assert_eq!(read_jsonl::<u32>(&p).unwrap(), vec![1, 2, 3, 4]);
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"{\"trunc").unwrap();
        assert_eq!(read_jsonl::<u32>(&p).unwrap(), vec![1, 2, 3, 4]);
        assert!(read_jsonl::<u32>(&dir.path().join("missing.jsonl")).unwrap().is_empty());
    }

    #[test]
    fn repair_drops_partial_tail_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        assert_eq!(repair_jsonl_tail(&p).unwrap(), 0);
        append_jsonl(&p, &[1u32, 2]).unwrap();
        assert_eq!(repair_jsonl_tail(&p).unwrap(), 0);
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"{\"tr").unwrap();
        assert_eq!(repair_jsonl_tail(&p).unwrap(), 4);
        append_jsonl(&p, &[3u32]).unwrap();
        assert_eq!(read_jsonl::<u32>(&p).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "1\nnope\n3\n").unwrap();
        assert!(matches!(read_jsonl::<u32>(&p), Err(StoreError::Corrupt { line: 2, .. })));
    }

    #[test]
    fn bundle_round_trip_is_lossless() {
        let mut c = SimConfig::default().with_participants(12);
        c.feed.pool_size = 300;
        let data = run_study(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m1 = write_bundle(&data, dir.path()).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back, data);
        let dir2 = tempfile::tempdir().unwrap();
        assert_eq!(write_bundle(&back, dir2.path()).unwrap(), m1);
    }

    #[test]
    fn tampered_config_rejected() {
        let data = run_study(&SimConfig::default().with_participants(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&data, dir.path()).unwrap();
        fs::write(dir.path().join(CONFIG), "master_seed = 1\n").unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(StoreError::Manifest(_))));
    }
}
