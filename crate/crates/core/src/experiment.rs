//! Enrollment, study phases, session segmentation, and per-participant
//! engagement and exposure metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    is_aapa, AapaScore, Arm, Assignment, EngagementEvent, EventKind, Experiment, Millis,
    Participant, HOUR_MS,
};

pub const SESSION_GAP_MS: Millis = HOUR_MS;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExperimentError {
    #[error("both experiment quotas are full")]
    QuotasFull,
    #[error("day {0} is outside the study window")]
    OutOfStudyWindow(u32),
    #[error("participant has no qualifying views")]
    NoViews,
    #[error("viewed post `{0}` has no score")]
    MissingScore(String),
    #[error("invalid study config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub quota_reduce: u32,
    pub quota_increase: u32,
    pub baseline_days: u32,
    pub total_days: u32,
    pub min_feed_loads: u32,
    pub master_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            quota_reduce: 600,
            quota_increase: 500,
            baseline_days: 3,
            total_days: 10,
            min_feed_loads: 10,
            master_seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.baseline_days >= self.total_days {
            return Err(ExperimentError::InvalidConfig(
                "baseline_days must be below total_days".into(),
            ));
        }
        Ok(())
    }

    pub fn quota(&self, e: Experiment) -> u32 {
        match e {
            Experiment::Reduce => self.quota_reduce,
            Experiment::Increase => self.quota_increase,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Baseline,
    Intervention,
}

/// Days are 1-based.
pub fn phase_of(day: u32, config: &StudyConfig) -> Result<Phase, ExperimentError> {
    if day == 0 || day > config.total_days {
        return Err(ExperimentError::OutOfStudyWindow(day));
    }
    Ok(if day <= config.baseline_days { Phase::Baseline } else { Phase::Intervention })
}

/// Single assignment authority: counts per experiment plus every issued
/// assignment, in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentState {
    pub assigned: BTreeMap<Experiment, u32>,
    pub assignments: Vec<Assignment>,
}

impl EnrollmentState {
    pub fn count(&self, e: Experiment) -> u32 {
        self.assigned.get(&e).copied().unwrap_or(0)
    }

    pub fn lookup(&self, participant_id: &str) -> Option<&Assignment> {
        self.assignments.iter().find(|a| a.participant_id == participant_id)
    }

    /// Restore an assignment made earlier, e.g. when replaying a store.
    pub fn record(&mut self, a: Assignment) {
        if self.lookup(&a.participant_id).is_none() {
            *self.assigned.entry(a.experiment).or_insert(0) += 1;
            self.assignments.push(a);
        }
    }
}

/// Bernoulli allocation across experiments with open quota (weighted by
/// remaining quota), then a fair coin for the arm.
pub fn enroll<R: Rng + ?Sized>(
    participant: &Participant,
    config: &StudyConfig,
    state: &mut EnrollmentState,
    enrolled_at: u32,
    rng: &mut R,
) -> Result<Assignment, ExperimentError> {
    if let Some(existing) = state.lookup(&participant.participant_id) {
        return Ok(existing.clone());
    }
    let remaining = |e: Experiment| config.quota(e).saturating_sub(state.count(e)) as f64;
    let (r, i) = (remaining(Experiment::Reduce), remaining(Experiment::Increase));
    if r + i == 0.0 {
        return Err(ExperimentError::QuotasFull);
    }
    let experiment_draw: f64 = rng.random();
    let experiment = if experiment_draw < r / (r + i) { Experiment::Reduce } else { Experiment::Increase };
    let arm = if rng.random_bool(0.5) { Arm::Treatment } else { Arm::Control };
    let a = Assignment {
        participant_id: participant.participant_id.clone(),
        experiment,
        arm,
        enrolled_at,
    };
    *state.assigned.entry(experiment).or_insert(0) += 1;
    state.assignments.push(a.clone());
    Ok(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub participant_id: String,
    pub events: Vec<EngagementEvent>,
    pub start: Millis,
    pub end: Millis,
}

/// Split a participant's events into sessions at every gap of at least one
/// hour between consecutive view events. Non-view events belong to the
/// session of the latest view at or before them.
pub fn segment_sessions(events: &[EngagementEvent]) -> Vec<Session> {
    if events.is_empty() {
        return Vec::new();
    }
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|e| e.at);

    let mut starts: Vec<Millis> = Vec::new();
    let mut last_view: Option<Millis> = None;
    for e in sorted.iter().filter(|e| e.kind == EventKind::View) {
        if last_view.is_none_or(|t| e.at - t >= SESSION_GAP_MS) {
            starts.push(e.at);
        }
        last_view = Some(e.at);
    }

    let n = starts.len().max(1);
    let mut buckets: Vec<Vec<EngagementEvent>> = vec![Vec::new(); n];
    for e in sorted {
        let idx = starts.partition_point(|s| *s <= e.at).saturating_sub(1);
        buckets[idx].push(e);
    }
    buckets
        .into_iter()
        .filter(|b| !b.is_empty())
        .map(|b| Session {
            participant_id: b[0].participant_id.clone(),
            start: b[0].at,
            end: b[b.len() - 1].at,
            events: b,
        })
        .collect()
}

/// Sessions per day over the study window, zero-activity days included.
pub fn return_rate(events: &[EngagementEvent], study_days: u32) -> f64 {
    if study_days == 0 {
        return 0.0;
    }
    segment_sessions(events).len() as f64 / study_days as f64
}

/// Session counts per day index, `day_of` mapping a timestamp to `0..days`.
pub fn daily_sessions<F: Fn(Millis) -> Option<usize>>(
    events: &[EngagementEvent],
    days: usize,
    day_of: F,
) -> Vec<u32> {
    let mut counts = vec![0u32; days];
    for s in segment_sessions(events) {
        if let Some(d) = day_of(s.start).filter(|d| *d < days) {
            counts[d] += 1;
        }
    }
    counts
}

/// Total span of all sessions, in milliseconds.
pub fn time_spent(events: &[EngagementEvent]) -> Millis {
    segment_sessions(events).iter().map(|s| s.end - s.start).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementRates {
    pub views: usize,
    pub repost_rate: f64,
    pub favorite_rate: f64,
    pub reply_rate: f64,
}

/// Actions divided by qualifying (≥1 s) views.
pub fn engagement_rates(events: &[EngagementEvent]) -> Result<EngagementRates, ExperimentError> {
    let views = events.iter().filter(|e| e.is_qualifying_view()).count();
    if views == 0 {
        return Err(ExperimentError::NoViews);
    }
    let count = |k: EventKind| events.iter().filter(|e| e.kind == k).count() as f64;
    let v = views as f64;
    Ok(EngagementRates {
        views,
        repost_rate: count(EventKind::Repost) / v,
        favorite_rate: count(EventKind::Favorite) / v,
        reply_rate: count(EventKind::Reply) / v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyExposure {
    pub day: u32,
    pub views: usize,
    pub political_fraction: f64,
    /// `None` when no political post was viewed.
    pub aapa_fraction_of_political: Option<f64>,
    /// Mean factor count over political views.
    pub mean_aapa_score: Option<f64>,
}

/// Per-day exposure from qualifying views of scored posts. Views of posts
/// missing from `scores` are an error; ads must be filtered by the caller.
pub fn exposure_metrics<F: Fn(Millis) -> u32>(
    views: &[EngagementEvent],
    scores: &HashMap<String, AapaScore>,
    day_of: F,
) -> Result<Vec<DailyExposure>, ExperimentError> {
    #[derive(Default)]
    struct Acc {
        views: usize,
        political: usize,
        aapa: usize,
        score_sum: u64,
    }
    let mut by_day: BTreeMap<u32, Acc> = BTreeMap::new();
    for v in views.iter().filter(|e| e.is_qualifying_view()) {
        let Some(pid) = &v.post_id else { continue };
        let s = scores.get(pid).ok_or_else(|| ExperimentError::MissingScore(pid.clone()))?;
        let acc = by_day.entry(day_of(v.at)).or_default();
        acc.views += 1;
        if s.is_political {
            acc.political += 1;
            acc.score_sum += s.count as u64;
            if is_aapa(s) {
                acc.aapa += 1;
            }
        }
    }
    Ok(by_day
        .into_iter()
        .map(|(day, a)| DailyExposure {
            day,
            views: a.views,
            political_fraction: a.political as f64 / a.views as f64,
            aapa_fraction_of_political: (a.political > 0).then(|| a.aapa as f64 / a.political as f64),
            mean_aapa_score: (a.political > 0).then(|| a.score_sum as f64 / a.political as f64),
        })
        .collect())
}

/// Participants with at least `min_feed_loads` feed loads.
pub fn completion_filter<'a, I>(
    participants: I,
    events: &[EngagementEvent],
    config: &StudyConfig,
) -> BTreeSet<String>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut loads: HashMap<&str, u32> = HashMap::new();
    for e in events.iter().filter(|e| e.kind == EventKind::FeedLoad) {
        *loads.entry(e.participant_id.as_str()).or_default() += 1;
    }
    participants
        .into_iter()
        .filter(|p| loads.get(p).copied().unwrap_or(0) >= config.min_feed_loads)
        .map(String::from)
        .collect()
}

/// One row of a long-format metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub participant_id: String,
    pub day: u32,
    pub metric: String,
    pub value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Party, Platform};
    use crate::seed;

    fn view(at: Millis) -> EngagementEvent {
        EngagementEvent {
            participant_id: "u".into(),
            post_id: Some(format!("p{at}")),
            kind: EventKind::View,
            visible_ms: Some(1500),
            at,
        }
    }

    fn ev(kind: EventKind, at: Millis) -> EngagementEvent {
        EngagementEvent { participant_id: "u".into(), post_id: None, kind, visible_ms: None, at }
    }

    fn participant(i: usize) -> Participant {
        Participant {
            participant_id: format!("u{i}"),
            party: Party::Democrat,
            platform: Platform::BovitzLike,
            pre_survey: Default::default(),
            local_tz_offset: 0,
        }
    }

    #[test]
    fn phases() {
        let c = StudyConfig::default();
        assert_eq!(phase_of(2, &c), Ok(Phase::Baseline));
        assert_eq!(phase_of(3, &c), Ok(Phase::Baseline));
        assert_eq!(phase_of(4, &c), Ok(Phase::Intervention));
        assert_eq!(phase_of(11, &c), Err(ExperimentError::OutOfStudyWindow(11)));
        assert_eq!(phase_of(0, &c), Err(ExperimentError::OutOfStudyWindow(0)));
    }

    #[test]
    fn config_validation() {
        let bad = StudyConfig { baseline_days: 10, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(StudyConfig::default().validate().is_ok());
    }

    #[test]
    fn enrollment_respects_quotas() {
        let config = StudyConfig { quota_reduce: 0, quota_increase: 3, ..Default::default() };
        let mut st = EnrollmentState::default();
        for i in 0..3 {
            let mut rng = seed::rng(1, &["enroll", &i.to_string()]);
            let a = enroll(&participant(i), &config, &mut st, 1, &mut rng).unwrap();
            assert_eq!(a.experiment, Experiment::Increase);
        }
        let mut rng = seed::rng(1, &["enroll", "3"]);
        assert_eq!(enroll(&participant(3), &config, &mut st, 1, &mut rng), Err(ExperimentError::QuotasFull));
        // Re-enrolling returns the same immutable assignment.
        let again = enroll(&participant(0), &config, &mut st, 5, &mut rng).unwrap();
        assert_eq!(&again, st.lookup("u0").unwrap());
    }

    #[test]
    fn enrollment_is_roughly_fair() {
        let config = StudyConfig { quota_reduce: 5000, quota_increase: 5000, ..Default::default() };
        let mut st = EnrollmentState::default();
        let mut treated = 0;
        for i in 0..2000 {
            let mut rng = seed::rng(2, &["enroll", &i.to_string()]);
            if enroll(&participant(i), &config, &mut st, 1, &mut rng).unwrap().arm == Arm::Treatment {
                treated += 1;
            }
        }
        // 2000 fair coins: mean 1000, sd ~22.
        assert!((900..1100).contains(&treated));
        let r = st.count(Experiment::Reduce);
        assert!((900..1100).contains(&r));
    }

    #[test]
    fn sessions_split_at_an_hour() {
        let t = |h: i64, m: i64| h * HOUR_MS + m * 60_000;
        let s = segment_sessions(&[view(t(10, 0)), view(t(10, 30)), view(t(12, 0))]);
        assert_eq!(s.len(), 2);
        assert_eq!(segment_sessions(&[view(5)]).len(), 1);
        assert!(segment_sessions(&[]).is_empty());
        // Exactly one hour apart splits.
        assert_eq!(segment_sessions(&[view(0), view(HOUR_MS)]).len(), 2);
        assert_eq!(segment_sessions(&[view(0), view(HOUR_MS - 1)]).len(), 1);
    }

    #[test]
    fn clicks_inherit_session() {
        let evs = vec![view(0), ev(EventKind::Favorite, 10), ev(EventKind::FeedLoad, -5), view(2 * HOUR_MS), ev(EventKind::Reply, HOUR_MS + 5)];
        let s = segment_sessions(&evs);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].events.len(), 4);
        assert_eq!(s[1].events.len(), 1);
        assert_eq!(s.iter().map(|s| s.events.len()).sum::<usize>(), evs.len());
    }

    #[test]
    fn return_rates() {
        let ten: Vec<_> = (0..10).map(|d| view(d * 24 * HOUR_MS)).collect();
        assert_eq!(return_rate(&ten, 10), 1.0);
        assert_eq!(return_rate(&[], 10), 0.0);
        let day1 = vec![view(0), view(2 * HOUR_MS), view(4 * HOUR_MS)];
        assert!((return_rate(&day1, 10) - 0.3).abs() < 1e-12);
        let per_day = daily_sessions(&day1, 10, |t| Some((t / (24 * HOUR_MS)) as usize));
        assert_eq!(per_day[0], 3);
        assert_eq!(per_day[1..].iter().sum::<u32>(), 0);
    }

    #[test]
    fn rates() {
        let mut evs: Vec<_> = (0..200).map(view).collect();
        evs.extend((0..10).map(|i| ev(EventKind::Favorite, i)));
        let r = engagement_rates(&evs).unwrap();
        assert_eq!(r.favorite_rate, 0.05);
        assert_eq!(r.repost_rate, 0.0);
        assert_eq!(engagement_rates(&[ev(EventKind::Favorite, 0)]), Err(ExperimentError::NoViews));
        let mut short = view(0);
        short.visible_ms = Some(500);
        assert_eq!(engagement_rates(&[short]), Err(ExperimentError::NoViews));
    }

    #[test]
    fn exposure_fractions() {
        let mut scores = HashMap::new();
        let mut views = Vec::new();
        for i in 0..100 {
            let s = if i < 10 {
                AapaScore::from_bits(0x0f, true)
            } else if i < 32 {
                AapaScore::from_bits(0x01, true)
            } else {
                AapaScore::non_political()
            };
            scores.insert(format!("p{i}"), s);
            views.push(view(i));
        }
        let m = exposure_metrics(&views, &scores, |_| 1).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].political_fraction, 0.32);
        assert_eq!(m[0].aapa_fraction_of_political, Some(0.3125));
        assert_eq!(m[0].mean_aapa_score, Some((10.0 * 4.0 + 22.0) / 32.0));

        let none = exposure_metrics(&views[40..], &scores, |_| 1).unwrap();
        assert_eq!(none[0].aapa_fraction_of_political, None);

        let all8: HashMap<_, _> = (0..3).map(|i| (format!("p{i}"), AapaScore::from_bits(0xff, true))).collect();
        let m8 = exposure_metrics(&views[..3], &all8, |_| 1).unwrap();
        assert_eq!(m8[0].mean_aapa_score, Some(8.0));

        assert_eq!(
            exposure_metrics(&views[..1], &HashMap::new(), |_| 1),
            Err(ExperimentError::MissingScore("p0".into()))
        );
    }

    #[test]
    fn completion_boundary() {
        let mut evs = Vec::new();
        for (who, n) in [("a", 9), ("b", 10), ("c", 0)] {
            for i in 0..n {
                evs.push(EngagementEvent { participant_id: who.into(), post_id: None, kind: EventKind::FeedLoad, visible_ms: None, at: i });
            }
        }
        let done = completion_filter(["a", "b", "c"], &evs, &StudyConfig::default());
        assert_eq!(done.into_iter().collect::<Vec<_>>(), vec!["b".to_string()]);
    }
}
