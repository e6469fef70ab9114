//! Per-participant load handling shared by the service and the simulator:
//! phase lookup, the assigned intervention, demotion-cache bookkeeping and
//! survey issuance.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::experiment::{phase_of, Phase, StudyConfig};
use crate::model::{AapaScore, Arm, Assignment, Experiment, Millis, Participant, SurveyPrompt, DAY_MS};
use crate::rerank::{
    rerank_increased, rerank_reduced, select_uprank_candidate, DemotionCache, RerankError,
    RerankedFeed, ScoredBatch, UprankInventory,
};
use crate::seed;
use crate::survey::{maybe_issue, SchedulerState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("study window has ended for this participant")]
    StudyEnded,
    #[error(transparent)]
    Rerank(#[from] RerankError),
}

/// Everything the platform keeps per enrolled participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantState {
    pub participant: Participant,
    pub assignment: Assignment,
    /// UTC instant of local midnight starting study day 1.
    pub study_start: Millis,
    pub scheduler: SchedulerState,
    pub cache: DemotionCache,
    /// Scores of posts waiting in the demotion cache.
    pub demoted_scores: HashMap<String, AapaScore>,
    pub seen: HashSet<String>,
}

impl ParticipantState {
    pub fn new(participant: Participant, assignment: Assignment, study_start: Millis) -> Self {
        let scheduler = SchedulerState::new(&participant.participant_id, participant.local_tz_offset);
        ParticipantState {
            participant,
            assignment,
            study_start,
            scheduler,
            cache: DemotionCache::default(),
            demoted_scores: HashMap::new(),
            seen: HashSet::new(),
        }
    }

    /// 1-based study day at `now`; 0 before the start.
    pub fn study_day(&self, now: Millis) -> u32 {
        if now < self.study_start {
            return 0;
        }
        ((now - self.study_start) / DAY_MS + 1) as u32
    }
}

/// Local midnight (as a UTC instant) of the day containing `now`.
pub fn local_midnight(now: Millis, tz_offset_min: i32) -> Millis {
    let offset = tz_offset_min as i64 * crate::model::MINUTE_MS;
    (now + offset).div_euclid(DAY_MS) * DAY_MS - offset
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOutcome {
    pub day: u32,
    pub phase: Phase,
    pub feed: RerankedFeed,
    pub prompt: Option<SurveyPrompt>,
    /// Scores of every served non-ad post.
    pub scores: HashMap<String, AapaScore>,
}

/// Serve one feed load for a participant.
pub fn process_load(
    state: &mut ParticipantState,
    scored: &ScoredBatch,
    config: &StudyConfig,
    inventory: &UprankInventory,
    session_id: &str,
    now: Millis,
) -> Result<LoadOutcome, PipelineError> {
    let day = state.study_day(now);
    let phase = phase_of(day, config).map_err(|_| PipelineError::StudyEnded)?;
    let arm = match phase {
        Phase::Baseline => Arm::Control,
        Phase::Intervention => state.assignment.arm,
    };
    if state.cache.session_id != session_id {
        state.cache.reset(session_id);
        state.demoted_scores.clear();
    }

    let pid = state.participant.participant_id.clone();
    let load_seq = scored.batch.load_seq;
    let mut rng = seed::load_rng(config.master_seed, &pid, load_seq);
    let mut survey_rng = seed::rng(config.master_seed, &["survey", &pid, &load_seq.to_string()]);
    let mut scores: HashMap<String, AapaScore> = scored.scores.clone();

    let (mut feed, mut prompt) = match state.assignment.experiment {
        Experiment::Reduce => {
            let prompt = if scored.has_aapa() { maybe_issue(&mut state.scheduler, now, &mut survey_rng) } else { None };
            let mut feed = rerank_reduced(scored, arm, &mut rng, prompt.is_some())?;
            if arm == Arm::Treatment {
                for d in &feed.demoted {
                    if let Some(s) = scored.scores.get(&d.post.post_id) {
                        state.demoted_scores.insert(d.post.post_id.clone(), *s);
                    }
                }
                // This load's demotions may already fall due within it.
                state.cache.absorb(&feed.demoted);
                for id in state.cache.reemit_into(&mut feed.posts) {
                    if let Some(s) = state.demoted_scores.remove(&id) {
                        scores.insert(id, s);
                    }
                }
                state.cache.advance(feed.posts.len());
            }
            (feed, prompt)
        }
        Experiment::Increase => {
            let candidate = if arm == Arm::Treatment {
                let mut c_rng = seed::rng(config.master_seed, &["uprank", &pid, &load_seq.to_string()]);
                select_uprank_candidate(inventory, &pid, state.participant.party, &state.seen, now, &mut c_rng)
            } else {
                None
            };
            let prompt = if scored.batch.is_empty() { None } else { maybe_issue(&mut state.scheduler, now, &mut survey_rng) };
            let feed = rerank_increased(&scored.batch, arm, candidate.as_ref().map(|c| &c.post), &mut rng, prompt.is_some());
            if let Some(c) = &candidate {
                scores.insert(c.post.post_id.clone(), c.score);
            }
            (feed, prompt)
        }
    };

    if let Some(p) = prompt.as_mut() {
        p.feed_position = feed.rendered_survey_slot().unwrap_or(feed.posts.len() + 1);
    }
    if prompt.is_none() {
        feed.survey_slot = None;
    }
    state.seen.extend(feed.posts.iter().map(|r| r.post.post_id.clone()));
    let served: HashSet<&str> = feed.posts.iter().map(|r| r.post.post_id.as_str()).collect();
    scores.retain(|id, _| served.contains(id.as_str()));
    Ok(LoadOutcome { day, phase, feed, prompt, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeedBatch, Party, Platform, Post};
    use crate::rerank::Origin;

    fn participant() -> Participant {
        Participant {
            participant_id: "u".into(),
            party: Party::Democrat,
            platform: Platform::BovitzLike,
            pre_survey: Default::default(),
            local_tz_offset: 0,
        }
    }

    fn state(experiment: Experiment, arm: Arm) -> ParticipantState {
        let a = Assignment { participant_id: "u".into(), experiment, arm, enrolled_at: 0 };
        ParticipantState::new(participant(), a, 0)
    }

    /// Posts 2 and 4 are AAPA.
    fn batch(load_seq: u64) -> ScoredBatch {
        let posts: Vec<Post> = (1..=6).map(|i| Post::new(format!("l{load_seq}-{i}"), "t")).collect();
        let scores = posts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = if i == 1 || i == 3 { AapaScore::from_bits(0b1111, true) } else { AapaScore::non_political() };
                (p.post_id.clone(), s)
            })
            .collect();
        ScoredBatch::new(FeedBatch { participant_id: "u".into(), load_seq, posts, fetched_at: 0 }, scores).unwrap()
    }

    #[test]
    fn baseline_days_are_untouched() {
        let mut s = state(Experiment::Reduce, Arm::Treatment);
        let cfg = StudyConfig::default();
        let out = process_load(&mut s, &batch(0), &cfg, &UprankInventory::new(), "s", DAY_MS + 5).unwrap();
        assert_eq!(out.phase, Phase::Baseline);
        assert_eq!(out.feed.post_ids(), batch(0).batch.posts.iter().map(|p| p.post_id.as_str()).collect::<Vec<_>>());
        assert!(out.feed.demoted.is_empty());
    }

    #[test]
    fn treatment_demotes_then_reemits_within_session() {
        let mut s = state(Experiment::Reduce, Arm::Treatment);
        let cfg = StudyConfig::default();
        let inv = UprankInventory::new();
        let now = 4 * DAY_MS;
        let first = process_load(&mut s, &batch(0), &cfg, &inv, "s", now).unwrap();
        assert!(!first.feed.demoted.is_empty());
        assert!(first.scores.keys().all(|id| first.feed.post_ids().contains(&id.as_str())));
        let mut reemitted = 0;
        for seq in 1..40 {
            let out = process_load(&mut s, &batch(seq), &cfg, &inv, "s", now + seq as Millis).unwrap();
            for r in out.feed.posts.iter().filter(|r| r.origin == Origin::Reemitted) {
                assert!(out.scores.contains_key(&r.post.post_id));
                reemitted += 1;
            }
        }
        assert!(reemitted > 0);
        process_load(&mut s, &batch(99), &cfg, &inv, "other", now + 100).unwrap();
        assert_eq!(s.cache.session_id, "other");
        assert!(s.demoted_scores.keys().all(|id| id.starts_with("l99-")));
    }

    #[test]
    fn study_end_is_an_error() {
        let mut s = state(Experiment::Increase, Arm::Control);
        let cfg = StudyConfig::default();
        let r = process_load(&mut s, &batch(0), &cfg, &UprankInventory::new(), "s", 10 * DAY_MS + 1);
        assert_eq!(r.unwrap_err(), PipelineError::StudyEnded);
    }

    #[test]
    fn local_midnight_respects_offset() {
        assert_eq!(local_midnight(DAY_MS + 5, 0), DAY_MS);
        // 02:00 UTC is still the previous day at UTC-5.
        let two_am = DAY_MS + 2 * crate::model::HOUR_MS;
        assert_eq!(local_midnight(two_am, -300), 5 * crate::model::HOUR_MS);
    }
}
