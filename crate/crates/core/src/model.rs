//! Core vocabulary: posts, feed batches, AAPA scores, participants,
//! assignments, in-feed surveys and engagement events.

use std::collections::HashSet;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;
use thiserror::Error;

/// Epoch milliseconds.
pub type Millis = i64;

pub const MINUTE_MS: Millis = 60_000;
pub const HOUR_MS: Millis = 3_600_000;
pub const DAY_MS: Millis = 86_400_000;

/// Minimum on-screen time for a view to count.
pub const MIN_VIEW_MS: u32 = 1_000;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("feed batch is empty")]
    EmptyBatch,
    #[error("duplicate post id `{0}` in batch")]
    DuplicatePostId(String),
    #[error("survey response carries {got} values, prompt kind expects {expected}")]
    ValueCountMismatch { expected: usize, got: usize },
    #[error("survey value {0} outside [0, 100]")]
    ValueOutOfRange(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkPreview {
    pub title: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub author_id: String,
    pub text: String,
    #[serde(default)]
    pub is_ad: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_preview: Option<LinkPreview>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quoted_text: Option<String>,
    #[serde(default)]
    pub created_at: Millis,
}

impl Post {
    pub fn new(post_id: impl Into<String>, text: impl Into<String>) -> Self {
        Post {
            post_id: post_id.into(),
            author_id: String::new(),
            text: text.into(),
            is_ad: false,
            link_preview: None,
            quoted_text: None,
            created_at: 0,
        }
    }

    pub fn ad(post_id: impl Into<String>, text: impl Into<String>) -> Self {
        Post { is_ad: true, ..Post::new(post_id, text) }
    }
}

/// One working set delivered per feed load. Positions are 1-based and
/// follow the order of `posts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedBatch {
    pub participant_id: String,
    pub load_seq: u64,
    pub posts: Vec<Post>,
    #[serde(default)]
    pub fetched_at: Millis,
}

impl FeedBatch {
    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    /// Iterate `(position, post)` with 1-based positions.
    pub fn positioned(&self) -> impl Iterator<Item = (usize, &Post)> {
        self.posts.iter().enumerate().map(|(i, p)| (i + 1, p))
    }
}

/// The eight antidemocratic-attitude and partisan-animosity factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    PartisanAnimosity,
    UndemocraticPractices,
    PartisanViolence,
    UndemocraticCandidates,
    OppositionToBipartisanship,
    SocialDistrust,
    SocialDistance,
    BiasedEvaluation,
}

impl Factor {
    pub const ALL: [Factor; 8] = [
        Factor::PartisanAnimosity,
        Factor::UndemocraticPractices,
        Factor::PartisanViolence,
        Factor::UndemocraticCandidates,
        Factor::OppositionToBipartisanship,
        Factor::SocialDistrust,
        Factor::SocialDistance,
        Factor::BiasedEvaluation,
    ];

    /// Zero-based index (v1 is 0).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Factor> {
        Factor::ALL.get(i).copied()
    }

    /// Short label `v1`..`v8`.
    pub fn label(self) -> &'static str {
        ["v1", "v2", "v3", "v4", "v5", "v6", "v7", "v8"][self.index()]
    }

    pub fn name(self) -> &'static str {
        match self {
            Factor::PartisanAnimosity => "partisan animosity",
            Factor::UndemocraticPractices => "support for undemocratic practices",
            Factor::PartisanViolence => "support for partisan violence",
            Factor::UndemocraticCandidates => "support for undemocratic candidates",
            Factor::OppositionToBipartisanship => "opposition to bipartisanship",
            Factor::SocialDistrust => "social distrust",
            Factor::SocialDistance => "social distance",
            Factor::BiasedEvaluation => "biased evaluation of politicized facts",
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Number of factors a post must express to count as AAPA.
pub const AAPA_THRESHOLD: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AapaScore {
    pub factors: [bool; 8],
    pub count: u8,
    pub is_political: bool,
}

impl AapaScore {
    pub fn non_political() -> Self {
        AapaScore::default()
    }

    /// Builds a political score; `count` is derived from the factor flags.
    pub fn political(factors: [bool; 8]) -> Self {
        let count = factors.iter().filter(|f| **f).count() as u8;
        AapaScore { factors, count, is_political: true }
    }

    pub fn from_bits(bits: u8, is_political: bool) -> Self {
        if !is_political {
            return AapaScore::non_political();
        }
        let mut factors = [false; 8];
        for (i, f) in factors.iter_mut().enumerate() {
            *f = bits & (1 << i) != 0;
        }
        AapaScore::political(factors)
    }

    pub fn bits(&self) -> u8 {
        self.factors
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, f)| if *f { acc | (1 << i) } else { acc })
    }

    pub fn has(&self, factor: Factor) -> bool {
        self.factors[factor.index()]
    }

    pub fn is_aapa(&self) -> bool {
        is_aapa(self)
    }

    /// `count == #true factors` and non-political scores carry no factors.
    pub fn is_consistent(&self) -> bool {
        let n = self.factors.iter().filter(|f| **f).count() as u8;
        n == self.count && (self.is_political || n == 0)
    }
}

/// A post is AAPA when it expresses at least four of the eight factors.
pub fn is_aapa(score: &AapaScore) -> bool {
    score.count >= AAPA_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Democrat,
    Republican,
}

impl Party {
    pub fn outparty_label(self) -> &'static str {
        match self {
            Party::Democrat => "Republicans",
            Party::Republican => "Democrats",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Platform {
    BovitzLike,
    CloudResearchLike,
}

impl Platform {
    /// Regression indicator: 1 for the CloudResearch-like platform.
    pub fn indicator(self) -> f64 {
        match self {
            Platform::BovitzLike => 0.0,
            Platform::CloudResearchLike => 1.0,
        }
    }
}

/// Pre-survey question ids used throughout the pipeline.
pub mod questions {
    pub const THERMOMETER: &str = "outparty_thermometer";
    pub const ANGRY: &str = "angry";
    pub const SAD: &str = "sad";
    pub const EXCITED: &str = "excited";
    pub const CALM: &str = "calm";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: String,
    pub party: Party,
    pub platform: Platform,
    /// Question id to numeric answer. Kept ordered for reproducible output.
    pub pre_survey: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    pub local_tz_offset: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    Reduce,
    Increase,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Reduce => "reduce",
            Experiment::Increase => "increase",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reduce" => Ok(Experiment::Reduce),
            "increase" => Ok(Experiment::Increase),
            other => Err(format!("unknown experiment `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Treatment,
    Control,
}

impl Arm {
    pub fn is_treatment(self) -> bool {
        matches!(self, Arm::Treatment)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub participant_id: String,
    pub experiment: Experiment,
    pub arm: Arm,
    pub enrolled_at: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PositiveEmotion {
    Excited,
    Calm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NegativeEmotion {
    Angry,
    Sad,
}

impl PositiveEmotion {
    pub fn question(self) -> &'static str {
        match self {
            PositiveEmotion::Excited => questions::EXCITED,
            PositiveEmotion::Calm => questions::CALM,
        }
    }
}

impl NegativeEmotion {
    pub fn question(self) -> &'static str {
        match self {
            NegativeEmotion::Angry => questions::ANGRY,
            NegativeEmotion::Sad => questions::SAD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum PromptKind {
    Thermometer,
    EmotionPair { positive: PositiveEmotion, negative: NegativeEmotion },
}

/// Lockout class of a prompt kind; emotion pairs share one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KindClass {
    Thermometer,
    Emotion,
}

impl PromptKind {
    pub fn class(&self) -> KindClass {
        match self {
            PromptKind::Thermometer => KindClass::Thermometer,
            PromptKind::EmotionPair { .. } => KindClass::Emotion,
        }
    }

    pub fn value_count(&self) -> usize {
        match self {
            PromptKind::Thermometer => 1,
            PromptKind::EmotionPair { .. } => 2,
        }
    }

    /// Question ids answered by the values of a response, in order.
    pub fn questions(&self) -> Vec<&'static str> {
        match self {
            PromptKind::Thermometer => vec![questions::THERMOMETER],
            PromptKind::EmotionPair { positive, negative } => {
                vec![positive.question(), negative.question()]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyPrompt {
    pub prompt_id: String,
    pub kind: PromptKind,
    pub feed_position: usize,
    pub issued_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub prompt_id: String,
    pub values: Vec<i64>,
    pub answered_at: Millis,
}

impl SurveyResponse {
    pub fn validate_for(&self, kind: &PromptKind) -> Result<(), ModelError> {
        if self.values.len() != kind.value_count() {
            return Err(ModelError::ValueCountMismatch {
                expected: kind.value_count(),
                got: self.values.len(),
            });
        }
        match self.values.iter().find(|v| !(0..=100).contains(*v)) {
            Some(v) => Err(ModelError::ValueOutOfRange(*v)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    View,
    Favorite,
    Repost,
    Reply,
    NewPost,
    FeedLoad,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementEvent {
    pub participant_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_id: Option<String>,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_ms: Option<u32>,
    pub at: Millis,
}

impl EngagementEvent {
    /// A view that stayed on screen long enough to count.
    pub fn is_qualifying_view(&self) -> bool {
        self.kind == EventKind::View && self.visible_ms.is_some_and(|ms| ms >= MIN_VIEW_MS)
    }
}

static URL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"https?://\S+").unwrap());
static SPACE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[ \t]{2,}").unwrap());

/// Text sent to the scorer for one post. Links are replaced by their
/// preview, quotes are appended after the link segment.
pub fn assemble_scoring_text(post: &Post) -> String {
    let mut out = post.text.clone();
    if let Some(link) = &post.link_preview {
        out = URL_RE.replace_all(&out, "").into_owned();
        out = SPACE_RE.replace_all(&out, " ").into_owned();
        push_segment(
            &mut out,
            &format!("Attached article's description: {} {}", link.title, link.description),
        );
    }
    if let Some(quote) = &post.quoted_text {
        push_segment(&mut out, &format!("Quoting: {quote}"));
    }
    out
}

fn push_segment(out: &mut String, segment: &str) {
    if !out.is_empty() && !out.ends_with(' ') {
        out.push(' ');
    }
    out.push_str(segment);
}

pub fn validate_batch(
    raw: Vec<Post>,
    participant_id: &str,
    load_seq: u64,
) -> Result<FeedBatch, ModelError> {
    if raw.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut seen = HashSet::with_capacity(raw.len());
    for p in &raw {
        if p.post_id.is_empty() || !seen.insert(p.post_id.as_str()) {
            return Err(ModelError::DuplicatePostId(p.post_id.clone()));
        }
    }
    Ok(FeedBatch {
        participant_id: participant_id.to_string(),
        load_seq,
        posts: raw,
        fetched_at: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_text_is_identity() {
        assert_eq!(assemble_scoring_text(&Post::new("a", "hello")), "hello");
    }

    #[test]
    fn link_preview_replaces_url() {
        let mut p = Post::new("a", "see this https://x.co/a");
        p.link_preview = Some(LinkPreview {
            title: "Tax bill".into(),
            description: "Senate vote".into(),
        });
        let t = assemble_scoring_text(&p);
        assert_eq!(t, "see this Attached article's description: Tax bill Senate vote");
        assert!(!t.contains("https://x.co/a"));
    }

    #[test]
    fn quote_is_appended() {
        let mut p = Post::new("a", "wow");
        p.quoted_text = Some("they lied".into());
        assert_eq!(assemble_scoring_text(&p), "wow Quoting: they lied");
    }

    #[test]
    fn link_segment_precedes_quote() {
        let mut p = Post::new("a", "look http://a.b/c");
        p.link_preview = Some(LinkPreview { title: "T".into(), description: "D".into() });
        p.quoted_text = Some("q".into());
        assert_eq!(
            assemble_scoring_text(&p),
            "look Attached article's description: T D Quoting: q"
        );
    }

    #[test]
    fn empty_text_gets_prefixed_segments() {
        let mut p = Post::new("a", "");
        p.quoted_text = Some("x".into());
        assert_eq!(assemble_scoring_text(&p), "Quoting: x");
    }

    #[test]
    fn batch_positions_and_errors() {
        let posts: Vec<Post> = (0..35).map(|i| Post::new(format!("p{i}"), "t")).collect();
        let b = validate_batch(posts, "u", 1).unwrap();
        let pos: Vec<usize> = b.positioned().map(|(i, _)| i).collect();
        assert_eq!(pos, (1..=35).collect::<Vec<_>>());

        let one = validate_batch(vec![Post::new("x", "t")], "u", 1).unwrap();
        assert_eq!(one.len(), 1);

        let dup = vec![Post::new("x", "a"), Post::new("x", "b")];
        assert_eq!(
            validate_batch(dup, "u", 1),
            Err(ModelError::DuplicatePostId("x".into()))
        );
        assert_eq!(validate_batch(vec![], "u", 1), Err(ModelError::EmptyBatch));
    }

    #[test]
    fn score_bits_roundtrip_and_threshold() {
        for bits in 0u16..256 {
            let s = AapaScore::from_bits(bits as u8, true);
            assert_eq!(s.bits(), bits as u8);
            assert!(s.is_consistent());
            assert_eq!(s.is_aapa(), (bits as u8).count_ones() >= 4);
        }
        assert_eq!(AapaScore::from_bits(0xff, false), AapaScore::non_political());
    }

    #[test]
    fn survey_response_validation() {
        let r = SurveyResponse { prompt_id: "p".into(), values: vec![101], answered_at: 0 };
        assert_eq!(r.validate_for(&PromptKind::Thermometer), Err(ModelError::ValueOutOfRange(101)));
        let r = SurveyResponse { prompt_id: "p".into(), values: vec![1], answered_at: 0 };
        let pair = PromptKind::EmotionPair {
            positive: PositiveEmotion::Calm,
            negative: NegativeEmotion::Sad,
        };
        assert!(matches!(r.validate_for(&pair), Err(ModelError::ValueCountMismatch { .. })));
    }

    #[test]
    fn jsonl_field_names_are_snake_case() {
        let e = EngagementEvent {
            participant_id: "u".into(),
            post_id: Some("p".into()),
            kind: EventKind::View,
            visible_ms: Some(1200),
            at: 5,
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"participant_id":"u","post_id":"p","kind":"View","visible_ms":1200,"at":5}"#
        );
        assert!(e.is_qualifying_view());
    }
}
