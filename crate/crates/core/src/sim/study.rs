//! Full study orchestration: enrollment, ten simulated days per
//! participant through the shared load pipeline, and the post-survey.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::behavior::{plan_day, simulate_behavior};
use super::feed::PostPool;
use super::population::{generate_population, SimParticipant};
use super::response::{simulate_post_thermometer, simulate_response, ResponseContext};
use super::{SimConfig, SimError};
use crate::experiment::{enroll, EnrollmentState, Phase, StudyConfig};
use crate::model::{
    is_aapa, AapaScore, Assignment, EngagementEvent, Experiment, Millis, Participant, Party, PromptKind,
    SurveyResponse, DAY_MS, HOUR_MS,
};
use crate::pipeline::{local_midnight, process_load, ParticipantState};
use crate::rerank::{Origin, UprankInventory};
use crate::scoring::lexicon::LexiconOracle;
use crate::seed;
use crate::survey::record_answer;

const LOAD_GAP_MS: Millis = 500;

/// One issued prompt and its answer, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub participant_id: String,
    pub prompt_id: String,
    pub kind: PromptKind,
    pub day: u32,
    pub load_seq: u64,
    pub feed_position: usize,
    pub issued_at: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<SurveyResponse>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServedPost {
    pub post_id: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_ad: bool,
}

/// What one feed load served.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadRecord {
    pub participant_id: String,
    pub load_seq: u64,
    pub session_id: String,
    pub day: u32,
    pub at: Millis,
    pub served: Vec<ServedPost>,
    pub demoted: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey_slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostSurvey {
    pub participant_id: String,
    pub thermometer: f64,
}

/// Everything a run produces. Ground truth travels in `config.truth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyData {
    pub config: SimConfig,
    pub participants: Vec<Participant>,
    pub assignments: Vec<Assignment>,
    pub events: Vec<EngagementEvent>,
    pub surveys: Vec<SurveyRecord>,
    pub loads: Vec<LoadRecord>,
    /// Scores of every served non-ad post.
    pub scores: BTreeMap<String, AapaScore>,
    pub post_surveys: Vec<PostSurvey>,
    /// Per-participant start of day 1 when participants did not all start
    /// together; otherwise derived from `config.start_ms`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub study_starts: BTreeMap<String, Millis>,
}

impl StudyData {
    pub fn empty(config: SimConfig) -> Self {
        StudyData {
            config,
            participants: Vec::new(),
            assignments: Vec::new(),
            events: Vec::new(),
            surveys: Vec::new(),
            loads: Vec::new(),
            scores: BTreeMap::new(),
            post_surveys: Vec::new(),
            study_starts: BTreeMap::new(),
        }
    }

    /// Study configuration with the run's master seed.
    pub fn study_config(&self) -> StudyConfig {
        StudyConfig { master_seed: self.config.master_seed, ..self.config.study.clone() }
    }

    /// UTC instant of local midnight starting day 1 for a participant.
    pub fn study_start(&self, participant: &Participant) -> Millis {
        if let Some(s) = self.study_starts.get(&participant.participant_id) {
            return *s;
        }
        study_start(self.config.start_ms, participant.local_tz_offset)
    }
}

fn study_start(start_ms: Millis, tz_offset: i32) -> Millis {
    local_midnight(start_ms + 12 * HOUR_MS, tz_offset)
}

struct SimState {
    who: SimParticipant,
    state: ParticipantState,
    next_load: u64,
    /// Qualifying views of political posts during intervention days, per factor.
    factor_views: [u64; 8],
    political_views: u64,
}

#[derive(Default)]
struct DayOutput {
    events: Vec<EngagementEvent>,
    surveys: Vec<SurveyRecord>,
    loads: Vec<LoadRecord>,
    scores: Vec<(String, AapaScore)>,
    recommended: UprankInventory,
}

fn simulate_day(
    sim: &mut SimState,
    day: u32,
    pools: &BTreeMap<Party, PostPool>,
    inventory: &UprankInventory,
    study: &StudyConfig,
    config: &SimConfig,
) -> DayOutput {
    let mut out = DayOutput::default();
    if sim.who.attrition_day.is_some_and(|last| day > last) {
        return out;
    }
    let pid = sim.who.participant.participant_id.clone();
    let party = sim.who.participant.party;
    let master = config.master_seed;
    let day_tag = day.to_string();
    let mut feed_rng = seed::rng(master, &["feed", &pid, &day_tag]);
    let mut beh_rng = seed::rng(master, &["behavior", &pid, &day_tag]);
    let mut resp_rng = seed::rng(master, &["response", &pid, &day_tag]);
    let midnight = sim.state.study_start + (day as Millis - 1) * DAY_MS;
    let pool = &pools[&party];
    let assignment = sim.state.assignment.clone();
    let mut aapa_today = 0u32;

    for (si, plan) in plan_day(midnight, &config.behavior, &mut beh_rng).into_iter().enumerate() {
        let session_id = format!("{pid}-d{day}-s{si}");
        let mut remaining = plan.depth;
        let mut now = plan.start;
        while remaining > 0 && now < plan.deadline {
            let load_seq = sim.next_load;
            sim.next_load += 1;
            let batch = pool.sample_batch(&pid, load_seq, now, &sim.state.seen, &config.feed, &mut feed_rng);
            let outcome = process_load(&mut sim.state, &batch, study, inventory, &session_id, now)
                .expect("simulated loads stay inside the study window");
            for (id, s) in &outcome.scores {
                out.scores.push((id.clone(), *s));
                if is_aapa(s) {
                    if let Some(r) = outcome.feed.posts.iter().find(|r| &r.post.post_id == id) {
                        out.recommended.record(&r.post, *s, &pid, party, now);
                    }
                }
            }
            let beh = simulate_behavior(
                &pid,
                &outcome.feed,
                &outcome.scores,
                now,
                remaining,
                plan.deadline,
                &config.behavior,
                &mut beh_rng,
            );
            let intervention = outcome.phase == Phase::Intervention;
            let mut exposure_before_prompt = aapa_today;
            for e in beh.events.iter().filter(|e| e.is_qualifying_view()) {
                let Some(s) = e.post_id.as_ref().and_then(|id| outcome.scores.get(id)) else { continue };
                if is_aapa(s) {
                    aapa_today += 1;
                    if beh.prompt_reached_at.is_some_and(|t| e.at < t) {
                        exposure_before_prompt += 1;
                    }
                }
                if intervention && s.is_political {
                    sim.political_views += 1;
                    for (n, on) in s.factors.iter().enumerate() {
                        sim.factor_views[n] += *on as u64;
                    }
                }
            }
            if let Some(prompt) = &outcome.prompt {
                let mut record = SurveyRecord {
                    participant_id: pid.clone(),
                    prompt_id: prompt.prompt_id.clone(),
                    kind: prompt.kind,
                    day: outcome.day,
                    load_seq,
                    feed_position: prompt.feed_position,
                    issued_at: prompt.issued_at,
                    response: None,
                };
                if let Some(reached) = beh.prompt_reached_at {
                    if resp_rng.random_bool(config.behavior.answer_prob) {
                        let answered_at = reached + resp_rng.random_range(3_000..20_000);
                        let ctx = ResponseContext {
                            experiment: assignment.experiment,
                            treated: assignment.arm.is_treatment(),
                            intervention,
                            aapa_views_today: exposure_before_prompt,
                        };
                        let response =
                            simulate_response(prompt, &sim.who.latent, &ctx, config, answered_at, &mut resp_rng);
                        record_answer(&mut sim.state.scheduler, &response, answered_at)
                            .expect("answer to a fresh prompt");
                        record.response = Some(response);
                    }
                }
                out.surveys.push(record);
            }
            out.loads.push(LoadRecord {
                participant_id: pid.clone(),
                load_seq,
                session_id: session_id.clone(),
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
            });
            out.events.extend(beh.events);
            if beh.viewed == 0 {
                break;
            }
            remaining = remaining.saturating_sub(beh.viewed);
            now = beh.end + LOAD_GAP_MS;
        }
    }
    out
}

/// Run a whole simulated study.
pub fn run_study(config: &SimConfig) -> Result<StudyData, SimError> {
    config.validate()?;
    let mut data = StudyData::empty(config.clone());
    let study = data.study_config();
    let population = generate_population(config, &mut seed::rng(config.master_seed, &["population"]));

    let mut enrollment = EnrollmentState::default();
    let mut enroll_rng = seed::rng(config.master_seed, &["enroll"]);
    let mut sims = Vec::with_capacity(population.len());
    for who in population {
        let assignment = enroll(&who.participant, &study, &mut enrollment, 0, &mut enroll_rng)
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let start = study_start(config.start_ms, who.participant.local_tz_offset);
        let state = ParticipantState::new(who.participant.clone(), assignment.clone(), start);
        data.participants.push(who.participant.clone());
        data.assignments.push(assignment);
        sims.push(SimState { who, state, next_load: 0, factor_views: [0; 8], political_views: 0 });
    }
    if sims.is_empty() {
        return Ok(data);
    }

    let oracle = LexiconOracle::bundled();
    let mut inventory = UprankInventory::new();
    for day in 1..=study.total_days {
        let pools: BTreeMap<Party, PostPool> = [Party::Democrat, Party::Republican]
            .into_par_iter()
            .map(|party| {
                let label = format!("d{day}-{}", if party == Party::Democrat { "dem" } else { "rep" });
                let mut rng = seed::rng(config.master_seed, &["pool", &label]);
                let day_start = config.start_ms + (day as Millis - 1) * DAY_MS;
                (party, PostPool::build(&label, day_start, &config.feed, &oracle, &mut rng))
            })
            .collect();
        let snapshot = &inventory;
        let outputs: Vec<DayOutput> =
            sims.par_iter_mut().map(|s| simulate_day(s, day, &pools, snapshot, &study, config)).collect();
        let mut additions = UprankInventory::new();
        for o in outputs {
            data.events.extend(o.events);
            data.surveys.extend(o.surveys);
            data.loads.extend(o.loads);
            data.scores.extend(o.scores);
            additions.extend(&o.recommended);
        }
        inventory.extend(&additions);
        let day_end = config.start_ms + day as Millis * DAY_MS;
        inventory.prune_before(day_end - 2 * DAY_MS);
    }

    let fractions = |s: &SimState| -> [f64; 8] {
        let mut f = [0.0; 8];
        if s.political_views > 0 {
            for (n, v) in s.factor_views.iter().enumerate() {
                f[n] = *v as f64 / s.political_views as f64;
            }
        }
        f
    };
    for s in &sims {
        if s.who.attrition_day.is_some() {
            continue;
        }
        let pid = &s.who.participant.participant_id;
        let mut rng = seed::rng(config.master_seed, &["post-survey", pid]);
        let a = &s.state.assignment;
        let thermometer =
            simulate_post_thermometer(&s.who.latent, a.experiment, a.arm.is_treatment(), &fractions(s), config, &mut rng);
        data.post_surveys.push(PostSurvey { participant_id: pid.clone(), thermometer });
    }
    Ok(data)
}

/// Mean per-participant AAPA share of qualifying non-ad views during the
/// intervention days, keyed by experiment and arm. Participants without
/// such views are skipped.
pub fn intervention_aapa_share(data: &StudyData) -> BTreeMap<(Experiment, bool), f64> {
    let study = data.study_config();
    let assignments: HashMap<&str, &Assignment> =
        data.assignments.iter().map(|a| (a.participant_id.as_str(), a)).collect();
    let starts: HashMap<&str, Millis> =
        data.participants.iter().map(|p| (p.participant_id.as_str(), data.study_start(p))).collect();
    let mut per: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for e in data.events.iter().filter(|e| e.is_qualifying_view()) {
        let Some(s) = e.post_id.as_ref().and_then(|id| data.scores.get(id)) else { continue };
        let day = ((e.at - starts[e.participant_id.as_str()]) / DAY_MS + 1) as u32;
        if day <= study.baseline_days || day > study.total_days {
            continue;
        }
        let acc = per.entry(e.participant_id.as_str()).or_default();
        acc.1 += 1;
        acc.0 += is_aapa(s) as u64;
    }
    let mut sums: BTreeMap<(Experiment, bool), (f64, usize)> = BTreeMap::new();
    for (pid, (aapa, total)) in per {
        if total == 0 {
            continue;
        }
        let a = assignments[pid];
        let acc = sums.entry((a.experiment, a.arm.is_treatment())).or_default();
        acc.0 += aapa as f64 / total as f64;
        acc.1 += 1;
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
