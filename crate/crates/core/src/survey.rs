//! In-feed survey scheduling.
//!
//! Each intervention event issues a prompt with the participant's current
//! daily probability. Answering halves that probability and locks the
//! answered kind for ten minutes. Probabilities reset at local midnight.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    KindClass, Millis, NegativeEmotion, Party, PositiveEmotion, PromptKind, SurveyPrompt,
    SurveyResponse, DAY_MS, HOUR_MS, MINUTE_MS,
};

pub const DEFAULT_P0: f64 = 0.5;
pub const LOCKOUT_MS: Millis = 10 * MINUTE_MS;
pub const DEFAULT_PROMPT_TTL_MS: Millis = HOUR_MS;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedulerError {
    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),
    #[error("prompt `{0}` expired")]
    PromptExpired(String),
    #[error(transparent)]
    InvalidResponse(#[from] crate::model::ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutstandingPrompt {
    pub kind: PromptKind,
    pub issued_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub participant_id: String,
    pub local_tz_offset: i32,
    pub p0: f64,
    pub day_key: i64,
    pub current_probability: f64,
    pub answered_today: u32,
    pub last_thermometer_at: Option<Millis>,
    pub last_emotion_at: Option<Millis>,
    pub prompt_ttl_ms: Millis,
    pub issued: u64,
    pub outstanding: BTreeMap<String, OutstandingPrompt>,
}

impl SchedulerState {
    pub fn new(participant_id: impl Into<String>, local_tz_offset: i32) -> Self {
        Self::with_p0(participant_id, local_tz_offset, DEFAULT_P0)
    }

    pub fn with_p0(participant_id: impl Into<String>, local_tz_offset: i32, p0: f64) -> Self {
        SchedulerState {
            participant_id: participant_id.into(),
            local_tz_offset,
            p0,
            day_key: i64::MIN,
            current_probability: p0,
            answered_today: 0,
            last_thermometer_at: None,
            last_emotion_at: None,
            prompt_ttl_ms: DEFAULT_PROMPT_TTL_MS,
            issued: 0,
            outstanding: BTreeMap::new(),
        }
    }

    pub fn local_day(&self, now: Millis) -> i64 {
        (now + self.local_tz_offset as i64 * MINUTE_MS).div_euclid(DAY_MS)
    }

    fn roll_day(&mut self, now: Millis) {
        let day = self.local_day(now);
        if day != self.day_key {
            self.day_key = day;
            self.current_probability = self.p0;
            self.answered_today = 0;
        }
    }

    /// Probability in effect at `now` (after any midnight reset).
    pub fn probability_at(&mut self, now: Millis) -> f64 {
        self.roll_day(now);
        self.current_probability
    }

    pub fn is_locked(&self, class: KindClass, now: Millis) -> bool {
        let last = match class {
            KindClass::Thermometer => self.last_thermometer_at,
            KindClass::Emotion => self.last_emotion_at,
        };
        last.is_some_and(|t| now - t < LOCKOUT_MS)
    }

    fn expire(&mut self, now: Millis) {
        let ttl = self.prompt_ttl_ms;
        self.outstanding.retain(|_, p| now - p.issued_at <= ttl);
    }
}

/// Decide whether this intervention event carries a survey. The caller
/// fills in `feed_position` once the slot is known.
pub fn maybe_issue<R: Rng + ?Sized>(
    state: &mut SchedulerState,
    now: Millis,
    rng: &mut R,
) -> Option<SurveyPrompt> {
    state.roll_day(now);
    let issue = rng.random_bool(state.current_probability.clamp(0.0, 1.0));
    let thermometer_first = rng.random_bool(0.5);
    if !issue {
        return None;
    }
    let preferred = if thermometer_first { KindClass::Thermometer } else { KindClass::Emotion };
    let other = match preferred {
        KindClass::Thermometer => KindClass::Emotion,
        KindClass::Emotion => KindClass::Thermometer,
    };
    let class = if !state.is_locked(preferred, now) {
        preferred
    } else if !state.is_locked(other, now) {
        other
    } else {
        return None;
    };
    let kind = match class {
        KindClass::Thermometer => PromptKind::Thermometer,
        KindClass::Emotion => PromptKind::EmotionPair {
            positive: if rng.random_bool(0.5) { PositiveEmotion::Excited } else { PositiveEmotion::Calm },
            negative: if rng.random_bool(0.5) { NegativeEmotion::Angry } else { NegativeEmotion::Sad },
        },
    };
    state.expire(now);
    state.issued += 1;
    let prompt_id = format!("{}-s{}", state.participant_id, state.issued);
    state.outstanding.insert(prompt_id.clone(), OutstandingPrompt { kind, issued_at: now });
    Some(SurveyPrompt { prompt_id, kind, feed_position: 0, issued_at: now })
}

/// Apply an answer: halve today's probability and lock the answered kind.
/// Returns the prompt kind answered.
pub fn record_answer(
    state: &mut SchedulerState,
    response: &SurveyResponse,
    now: Millis,
) -> Result<PromptKind, SchedulerError> {
    let Some(out) = state.outstanding.get(&response.prompt_id) else {
        return Err(SchedulerError::UnknownPrompt(response.prompt_id.clone()));
    };
    if now - out.issued_at > state.prompt_ttl_ms {
        state.outstanding.remove(&response.prompt_id);
        return Err(SchedulerError::PromptExpired(response.prompt_id.clone()));
    }
    response.validate_for(&out.kind)?;
    let kind = out.kind;
    state.outstanding.remove(&response.prompt_id);
    state.roll_day(now);
    state.current_probability /= 2.0;
    state.answered_today += 1;
    match kind.class() {
        KindClass::Thermometer => state.last_thermometer_at = Some(now),
        KindClass::Emotion => state.last_emotion_at = Some(now),
    }
    Ok(kind)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderAnchor {
    pub value: u8,
    pub label: String,
}

/// What the client renders for a prompt. Sliders start empty and the
/// numeric value is never shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRender {
    pub questions: Vec<String>,
    pub anchors: Vec<SliderAnchor>,
    pub show_value: bool,
    pub initial_value: Option<u8>,
}

pub fn render_prompt(kind: &PromptKind, party: Party) -> PromptRender {
    let (questions, anchors) = match kind {
        PromptKind::Thermometer => (
            vec![format!("At the moment, how do you feel about {}?", party.outparty_label())],
            vec![
                SliderAnchor { value: 0, label: "Very cold or unfavorable feeling".into() },
                SliderAnchor { value: 50, label: "No feeling at all".into() },
                SliderAnchor { value: 100, label: "Very warm or favorable feeling".into() },
            ],
        ),
        PromptKind::EmotionPair { positive, negative } => (
            vec![
                format!("How much do you feel {}?", kind_word_positive(*positive)),
                format!("How much do you feel {}?", kind_word_negative(*negative)),
            ],
            vec![
                SliderAnchor { value: 0, label: "None at all".into() },
                SliderAnchor { value: 25, label: "A little".into() },
                SliderAnchor { value: 50, label: "Moderately".into() },
                SliderAnchor { value: 75, label: "A lot".into() },
                SliderAnchor { value: 100, label: "Extremely".into() },
            ],
        ),
    };
    PromptRender { questions, anchors, show_value: false, initial_value: None }
}

fn kind_word_positive(e: PositiveEmotion) -> &'static str {
    match e {
        PositiveEmotion::Excited => "excited",
        PositiveEmotion::Calm => "calm",
    }
}

fn kind_word_negative(e: NegativeEmotion) -> &'static str {
    match e {
        NegativeEmotion::Angry => "angry",
        NegativeEmotion::Sad => "sad",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answer(state: &mut SchedulerState, p: &SurveyPrompt, now: Millis) -> Result<PromptKind, SchedulerError> {
        let values = vec![50; p.kind.value_count()];
        record_answer(state, &SurveyResponse { prompt_id: p.prompt_id.clone(), values, answered_at: now }, now)
    }

    /// All-zero draws: `random_bool` is true for any p > 0.
    struct Zeros;

    impl rand::RngCore for Zeros {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    fn always_yes() -> Zeros {
        Zeros
    }

    #[test]
    fn fresh_day_issues_thermometer_when_forced() {
        let mut s = SchedulerState::new("u", 0);
        let p = maybe_issue(&mut s, 10 * HOUR_MS, &mut always_yes()).unwrap();
        assert_eq!(p.kind, PromptKind::Thermometer);
    }

    #[test]
    fn locked_kind_is_substituted() {
        let mut s = SchedulerState::new("u", 0);
        let t0 = 10 * HOUR_MS;
        let p = maybe_issue(&mut s, t0, &mut always_yes()).unwrap();
        answer(&mut s, &p, t0).unwrap();
        let q = maybe_issue(&mut s, t0 + 4 * MINUTE_MS, &mut always_yes()).unwrap();
        assert!(matches!(q.kind, PromptKind::EmotionPair { .. }));
    }

    #[test]
    fn both_locked_means_no_prompt() {
        let mut s = SchedulerState::new("u", 0);
        let t0 = 10 * HOUR_MS;
        s.roll_day(t0);
        s.last_thermometer_at = Some(t0 - 2 * MINUTE_MS);
        s.last_emotion_at = Some(t0 - 2 * MINUTE_MS);
        assert!(maybe_issue(&mut s, t0, &mut always_yes()).is_none());
        assert!(maybe_issue(&mut s, t0 + 9 * MINUTE_MS, &mut always_yes()).is_some());
    }

    #[test]
    fn answers_halve_probability() {
        let mut s = SchedulerState::new("u", 0);
        let t0 = 10 * HOUR_MS;
        let p = maybe_issue(&mut s, t0, &mut always_yes()).unwrap();
        answer(&mut s, &p, t0).unwrap();
        assert_eq!(s.probability_at(t0), 0.25);
        let q = maybe_issue(&mut s, t0 + 20 * MINUTE_MS, &mut always_yes()).unwrap();
        answer(&mut s, &q, t0 + 20 * MINUTE_MS).unwrap();
        assert_eq!(s.probability_at(t0 + 20 * MINUTE_MS), 0.125);
    }

    #[test]
    fn midnight_reset_uses_local_time() {
        // UTC-5: local midnight is 05:00 UTC.
        let mut s = SchedulerState::new("u", -300);
        let before = DAY_MS + 5 * HOUR_MS - MINUTE_MS;
        let p = maybe_issue(&mut s, before, &mut always_yes()).unwrap();
        answer(&mut s, &p, before).unwrap();
        assert_eq!(s.probability_at(before), 0.25);
        assert_eq!(s.probability_at(before + 2 * MINUTE_MS), 0.5);
    }

    #[test]
    fn unknown_and_expired_prompts() {
        let mut s = SchedulerState::new("u", 0);
        let r = SurveyResponse { prompt_id: "nope".into(), values: vec![1], answered_at: 0 };
        assert_eq!(record_answer(&mut s, &r, 0), Err(SchedulerError::UnknownPrompt("nope".into())));
        let p = maybe_issue(&mut s, 0, &mut always_yes()).unwrap();
        assert!(matches!(
            answer(&mut s, &p, DEFAULT_PROMPT_TTL_MS + 1),
            Err(SchedulerError::PromptExpired(_))
        ));
        assert_eq!(s.probability_at(DEFAULT_PROMPT_TTL_MS + 1), 0.5);
    }

    #[test]
    fn ignored_prompts_change_nothing() {
        let mut s = SchedulerState::new("u", 0);
        maybe_issue(&mut s, 0, &mut always_yes()).unwrap();
        assert_eq!(s.probability_at(1), 0.5);
        assert!(!s.is_locked(KindClass::Thermometer, 1));
    }

    #[test]
    fn render_labels() {
        let r = render_prompt(&PromptKind::Thermometer, Party::Democrat);
        assert_eq!(r.questions[0], "At the moment, how do you feel about Republicans?");
        assert_eq!(r.anchors[1].label, "No feeling at all");
        assert!(!r.show_value && r.initial_value.is_none());
        let e = render_prompt(
            &PromptKind::EmotionPair { positive: PositiveEmotion::Calm, negative: NegativeEmotion::Angry },
            Party::Republican,
        );
        assert_eq!(e.anchors.len(), 5);
        assert_eq!(e.questions.len(), 2);
    }
}
