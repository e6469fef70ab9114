//! Turns a study's logs into effect estimates, exposure and engagement
//! summaries, randomization checks and adjusted p-values.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::experiment::{completion_filter, engagement_rates, segment_sessions, StudyConfig};
use crate::model::{is_aapa, questions, AapaScore, Assignment, EngagementEvent, Experiment, Factor, Millis, DAY_MS};
use crate::sim::study::StudyData;
use crate::stats::{
    adjust_hte, adjust_outcome_tiers, factor_contribution, factor_cooccurrence, hte, impute_baseline, lmm_ate,
    mann_whitney_u, ols_ate, ri_attrition_pattern, ri_attrition_rate, ri_covariate_balance, write_coefficient_table,
    Bernoulli, Covariate, Cooccurrence, GroupObs, RegressionResult, StatsError, Tier, INTERACTION, TREATMENT,
};
use crate::store::write_atomic;

pub const INFEED_THERMOMETER: &str = "infeed_thermometer";
pub const POST_THERMOMETER: &str = "post_thermometer";
pub const EMOTIONS: [&str; 4] = [questions::ANGRY, questions::SAD, questions::EXCITED, questions::CALM];
const ENGAGEMENT: [&str; 5] = ["repost_rate", "favorite_rate", "reply_rate", "sessions_per_day", "minutes_per_day"];

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("no participants enrolled in the {0} experiment")]
    NoParticipants(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub experiment: Experiment,
    pub ri_draws: usize,
    pub seed: u64,
}

impl AnalysisOptions {
    pub fn new(experiment: Experiment) -> Self {
        AnalysisOptions { experiment, ri_draws: crate::stats::DEFAULT_RI_DRAWS, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub outcome: String,
    pub tier: Tier,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureRow {
    pub arm: String,
    pub participants: usize,
    pub qualifying_views: u64,
    pub political_share: f64,
    pub aapa_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementRow {
    pub metric: String,
    pub control_mean: f64,
    pub treatment_mean: f64,
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationRow {
    pub test: String,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub n_draws: usize,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub factor: String,
    pub estimate: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub experiment: Experiment,
    pub enrolled: usize,
    pub completed: usize,
    pub models: BTreeMap<String, RegressionResult>,
    pub outcomes: Vec<OutcomeRow>,
    pub exposure: Vec<ExposureRow>,
    /// Treatment AAPA share relative to Control, minus one.
    pub exposure_relative_change: Option<f64>,
    pub engagement: Vec<EngagementRow>,
    pub randomization: Vec<RandomizationRow>,
    pub factors: Vec<FactorRow>,
    pub cooccurrence: Option<Cooccurrence>,
    /// Models that could not be fitted, with the reason.
    pub skipped: BTreeMap<String, String>,
}

/// Per-participant facts the models are built from.
#[derive(Debug, Clone)]
struct Unit<'a> {
    assignment: &'a Assignment,
    treated: bool,
    platform: f64,
    democrat: f64,
    pre: BTreeMap<String, f64>,
    completed: bool,
    /// Question to (day, value) of answered in-feed prompts.
    answers: BTreeMap<&'static str, Vec<(u32, f64)>>,
    events: Vec<&'a EngagementEvent>,
    start: Millis,
}

/// Participants of one experiment, in enrollment order.
struct Cohort<'a> {
    units: Vec<Unit<'a>>,
    study: StudyConfig,
    post: HashMap<&'a str, f64>,
    scores: &'a BTreeMap<String, AapaScore>,
}

impl<'a> Cohort<'a> {
    fn build(data: &'a StudyData, experiment: Experiment) -> Self {
        let study = data.study_config();
        let by_id: HashMap<&str, &Assignment> =
            data.assignments.iter().map(|a| (a.participant_id.as_str(), a)).collect();
        let completed = completion_filter(data.participants.iter().map(|p| p.participant_id.as_str()), &data.events, &study);
        let mut events: HashMap<&str, Vec<&EngagementEvent>> = HashMap::new();
        for e in &data.events {
            events.entry(e.participant_id.as_str()).or_default().push(e);
        }
        let mut answers: HashMap<&str, BTreeMap<&'static str, Vec<(u32, f64)>>> = HashMap::new();
        for s in &data.surveys {
            let Some(r) = &s.response else { continue };
            let entry = answers.entry(s.participant_id.as_str()).or_default();
            for (q, v) in s.kind.questions().into_iter().zip(&r.values) {
                entry.entry(q).or_default().push((s.day, *v as f64));
            }
        }
        let units = data
            .participants
            .iter()
            .filter_map(|p| {
                let a = *by_id.get(p.participant_id.as_str())?;
                (a.experiment == experiment).then(|| Unit {
                    assignment: a,
                    treated: a.arm.is_treatment(),
                    platform: p.platform.indicator(),
                    democrat: if p.party == crate::model::Party::Democrat { 1.0 } else { 0.0 },
                    pre: p.pre_survey.clone(),
                    completed: completed.contains(&p.participant_id),
                    answers: answers.remove(p.participant_id.as_str()).unwrap_or_default(),
                    events: events.remove(p.participant_id.as_str()).unwrap_or_default(),
                    start: data.study_start(p),
                })
            })
            .collect();
        let post = data.post_surveys.iter().map(|p| (p.participant_id.as_str(), p.thermometer)).collect();
        Cohort { units, study, post, scores: &data.scores }
    }

    fn day(&self, u: &Unit, at: Millis) -> u32 {
        if at < u.start {
            0
        } else {
            ((at - u.start) / DAY_MS + 1) as u32
        }
    }

    fn in_intervention(&self, day: u32) -> bool {
        day > self.study.baseline_days && day <= self.study.total_days
    }

    fn intervention_events(&self, u: &Unit<'a>) -> Vec<EngagementEvent> {
        u.events.iter().filter(|e| self.in_intervention(self.day(u, e.at))).map(|e| (*e).clone()).collect()
    }

    fn analyzed(&self) -> impl Iterator<Item = &Unit<'a>> {
        self.units.iter().filter(|u| u.completed)
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Mixed model of one in-feed question over the intervention days with
/// the participant's baseline-period mean (imputed from the pre-survey
/// when missing) and platform as covariates.
fn infeed_model(cohort: &Cohort, question: &str) -> Result<RegressionResult, StatsError> {
    let units: Vec<&Unit> = cohort.analyzed().collect();
    let baseline = |u: &Unit| -> Option<f64> {
        let vals: Vec<f64> = u
            .answers
            .get(question)
            .map(|v| v.iter().filter(|(d, _)| *d <= cohort.study.baseline_days).map(|(_, x)| *x).collect())
            .unwrap_or_default();
        mean(&vals)
    };
    let reference: Vec<(f64, f64)> =
        units.iter().filter_map(|u| Some((*u.pre.get(question)?, baseline(u)?))).collect();
    let mut groups = Vec::new();
    for u in &units {
        let responses: Vec<f64> = u
            .answers
            .get(question)
            .map(|v| v.iter().filter(|(d, _)| cohort.in_intervention(*d)).map(|(_, x)| *x).collect())
            .unwrap_or_default();
        if responses.is_empty() {
            continue;
        }
        let base = match baseline(u) {
            Some(b) => b,
            None => match u.pre.get(question) {
                Some(pre) => impute_baseline(*pre, &reference)?,
                None => continue,
            },
        };
        groups.push(GroupObs {
            treatment: if u.treated { 1.0 } else { 0.0 },
            covariates: vec![base, u.platform],
            responses,
        });
    }
    match lmm_ate(&groups, &["baseline", "platform"]) {
        Err(StatsError::NonConvergence(r)) => {
            tracing::warn!(question, "random-intercept variance at its upper bound");
            Ok(*r)
        }
        other => other,
    }
}

/// In-feed treatment effect on one question for the given experiment.
pub fn infeed_effect(data: &StudyData, experiment: Experiment, question: &str) -> Result<RegressionResult, StatsError> {
    infeed_model(&Cohort::build(data, experiment), question)
}

fn post_model(cohort: &Cohort) -> Result<(RegressionResult, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>), StatsError> {
    let (mut y, mut t, mut pre, mut platform, mut dem) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for u in cohort.analyzed() {
        let (Some(post), Some(p)) =
            (cohort.post.get(u.assignment.participant_id.as_str()), u.pre.get(questions::THERMOMETER))
        else {
            continue;
        };
        y.push(*post);
        t.push(if u.treated { 1.0 } else { 0.0 });
        pre.push(*p);
        platform.push(u.platform);
        dem.push(u.democrat);
    }
    let r = ols_ate(
        &y,
        &t,
        &[Covariate { name: "pre_thermometer", values: &pre }, Covariate { name: "platform", values: &platform }],
    )?;
    Ok((r, y, t, pre, platform, dem))
}

/// Post-experiment thermometer effect adjusted for the pre-survey value.
pub fn post_effect(data: &StudyData, experiment: Experiment) -> Result<RegressionResult, StatsError> {
    post_model(&Cohort::build(data, experiment)).map(|r| r.0)
}

fn exposure(cohort: &Cohort) -> (Vec<ExposureRow>, Option<f64>) {
    let mut rows = Vec::new();
    let mut shares = [None, None];
    for (i, (label, treated)) in [("control", false), ("treatment", true)].into_iter().enumerate() {
        let (mut participants, mut views, mut political_sum, mut aapa_sum) = (0usize, 0u64, 0.0, 0.0);
        for u in cohort.analyzed().filter(|u| u.treated == treated) {
            let (mut v, mut pol, mut aapa) = (0u64, 0u64, 0u64);
            for e in u.events.iter().filter(|e| e.is_qualifying_view() && cohort.in_intervention(cohort.day(u, e.at))) {
                let Some(s) = e.post_id.as_ref().and_then(|id| cohort.scores.get(id)) else { continue };
                v += 1;
                pol += s.is_political as u64;
                aapa += is_aapa(s) as u64;
            }
            if v == 0 {
                continue;
            }
            participants += 1;
            views += v;
            political_sum += pol as f64 / v as f64;
            aapa_sum += aapa as f64 / v as f64;
        }
        let n = participants.max(1) as f64;
        if participants > 0 {
            shares[i] = Some(aapa_sum / n);
        }
        rows.push(ExposureRow {
            arm: label.into(),
            participants,
            qualifying_views: views,
            political_share: political_sum / n,
            aapa_share: aapa_sum / n,
        });
    }
    let change = match shares {
        [Some(c), Some(t)] if c > 0.0 => Some(t / c - 1.0),
        _ => None,
    };
    (rows, change)
}

fn engagement(cohort: &Cohort) -> BTreeMap<&'static str, (Vec<f64>, Vec<f64>)> {
    let days = (cohort.study.total_days - cohort.study.baseline_days) as f64;
    let mut out: BTreeMap<&'static str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for u in cohort.analyzed() {
        let events = cohort.intervention_events(u);
        let Ok(rates) = engagement_rates(&events) else { continue };
        let sessions = segment_sessions(&events);
        let minutes: f64 = sessions.iter().map(|s| (s.end - s.start) as f64 / 60_000.0).sum();
        let values = [rates.repost_rate, rates.favorite_rate, rates.reply_rate, sessions.len() as f64 / days, minutes / days];
        for (metric, v) in ENGAGEMENT.iter().zip(values) {
            let slot = out.entry(metric).or_default();
            if u.treated {
                slot.1.push(v);
            } else {
                slot.0.push(v);
            }
        }
    }
    out
}

fn ri_row(test: &str, r: Result<crate::stats::RITestResult, StatsError>) -> RandomizationRow {
    match r {
        Ok(r) => RandomizationRow { test: test.into(), statistic: r.statistic, p_value: Some(r.p_value), n_draws: r.n_draws, note: None },
        Err(e) => RandomizationRow { test: test.into(), statistic: None, p_value: None, n_draws: 0, note: Some(e.to_string()) },
    }
}

fn randomization(cohort: &Cohort, draws: usize, seed: u64) -> Vec<RandomizationRow> {
    let units = &cohort.units;
    let treat: Vec<bool> = units.iter().map(|u| u.treated).collect();
    let pre = |q: &str| -> Vec<f64> { units.iter().map(|u| u.pre.get(q).copied().unwrap_or(f64::NAN)).collect() };
    let mut covs: Vec<Vec<f64>> = [questions::THERMOMETER].iter().chain(EMOTIONS.iter()).map(|q| pre(q)).collect();
    covs.push(units.iter().map(|u| u.platform).collect());
    covs.push(units.iter().map(|u| u.democrat).collect());
    covs.retain(|c| c.iter().all(|x| x.is_finite()));
    let attrition: Vec<bool> = units
        .iter()
        .map(|u| !u.completed || !cohort.post.contains_key(u.assignment.participant_id.as_str()))
        .collect();
    let rnd = Bernoulli::default();
    vec![
        ri_row("covariate_balance", ri_covariate_balance(&covs, &treat, &rnd, draws, seed)),
        ri_row("attrition_rate", ri_attrition_rate(&attrition, &treat, &rnd, draws, seed)),
        ri_row("attrition_pattern", ri_attrition_pattern(&covs, &treat, &attrition, &rnd, draws, seed)),
    ]
}

fn factors(cohort: &Cohort) -> Vec<FactorRow> {
    let (mut post, mut pre, mut fractions) = (Vec::new(), Vec::new(), Vec::new());
    for u in cohort.analyzed() {
        let (Some(y), Some(p)) = (cohort.post.get(u.assignment.participant_id.as_str()), u.pre.get(questions::THERMOMETER))
        else {
            continue;
        };
        let (mut political, mut counts) = (0u64, [0u64; 8]);
        for e in u.events.iter().filter(|e| e.is_qualifying_view() && cohort.in_intervention(cohort.day(u, e.at))) {
            let Some(s) = e.post_id.as_ref().and_then(|id| cohort.scores.get(id)) else { continue };
            if s.is_political {
                political += 1;
                for (n, on) in s.factors.iter().enumerate() {
                    counts[n] += *on as u64;
                }
            }
        }
        if political == 0 {
            continue;
        }
        post.push(*y);
        pre.push(*p);
        fractions.push(counts.map(|c| c as f64 / political as f64));
    }
    match factor_contribution(&post, &pre, &fractions) {
        Ok(rows) => rows
            .into_iter()
            .map(|(f, r)| {
                let coef = r.as_ref().ok().and_then(|r| r.coef(&format!("fraction_v{}", f.index() + 1)).cloned());
                FactorRow {
                    factor: f.name().to_string(),
                    estimate: coef.as_ref().map(|c| c.estimate),
                    ci_low: coef.as_ref().map(|c| c.ci_low),
                    ci_high: coef.as_ref().map(|c| c.ci_high),
                    p_value: coef.as_ref().map(|c| c.p_value),
                    note: r.err().map(|e| e.to_string()),
                }
            })
            .collect(),
        Err(e) => Factor::ALL
            .iter()
            .map(|f| FactorRow {
                factor: f.name().to_string(),
                estimate: None,
                ci_low: None,
                ci_high: None,
                p_value: None,
                note: Some(e.to_string()),
            })
            .collect(),
    }
}

/// Full analysis of one experiment.
pub fn analyze(data: &StudyData, options: &AnalysisOptions) -> Result<AnalysisReport, AnalysisError> {
    let cohort = Cohort::build(data, options.experiment);
    if cohort.units.is_empty() {
        return Err(AnalysisError::NoParticipants(options.experiment.as_str().to_string()));
    }
    let mut models = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    let mut record = |name: String, r: Result<RegressionResult, StatsError>| match r {
        Ok(r) => {
            let p = r.coef(TREATMENT).map(|c| c.p_value);
            models.insert(name.clone(), r);
            p.map(|p| (name, p))
        }
        Err(e) => {
            skipped.insert(name, e.to_string());
            None
        }
    };

    let mut primary = Vec::new();
    primary.extend(record(INFEED_THERMOMETER.into(), infeed_model(&cohort, questions::THERMOMETER)));
    let post = post_model(&cohort);
    let hte_inputs = post.as_ref().ok().map(|(_, y, t, pre, platform, dem)| (y.clone(), t.clone(), pre.clone(), platform.clone(), dem.clone()));
    primary.extend(record(POST_THERMOMETER.into(), post.map(|r| r.0)));
    let secondary: Vec<(String, f64)> = EMOTIONS
        .iter()
        .filter_map(|q| record(format!("infeed_{q}"), infeed_model(&cohort, q)))
        .collect();
    if let Some((y, t, pre, platform, dem)) = hte_inputs {
        record(
            "post_thermometer_by_party".into(),
            hte(&y, &t, &dem, &[Covariate { name: "pre_thermometer", values: &pre }, Covariate { name: "platform", values: &platform }]),
        );
    }

    let mut engagement_rows = Vec::new();
    let mut tertiary = Vec::new();
    for (metric, (control, treatment)) in engagement(&cohort) {
        match mann_whitney_u(&treatment, &control) {
            Ok(m) => {
                tertiary.push((metric.to_string(), m.p_value));
                engagement_rows.push(EngagementRow {
                    metric: metric.into(),
                    control_mean: mean(&control).unwrap_or(f64::NAN),
                    treatment_mean: mean(&treatment).unwrap_or(f64::NAN),
                    u: m.u,
                    p_value: m.p_value,
                    exact: m.exact,
                });
            }
            Err(e) => {
                skipped.insert(metric.to_string(), e.to_string());
            }
        }
    }

    let adjusted = adjust_outcome_tiers(&primary, &secondary, &tertiary)?;
    let mut outcomes = Vec::new();
    for (name, adj) in &adjusted {
        let (estimate, ci_low, ci_high) = match models.get(name).and_then(|m| m.coef(TREATMENT)) {
            Some(c) => (c.estimate, c.ci_low, c.ci_high),
            None => {
                let row = engagement_rows.iter().find(|r| &r.metric == name).expect("engagement outcome");
                (row.treatment_mean - row.control_mean, f64::NAN, f64::NAN)
            }
        };
        outcomes.push(OutcomeRow {
            outcome: name.clone(),
            tier: adj.tier,
            estimate,
            ci_low,
            ci_high,
            p_raw: adj.raw,
            p_adjusted: adj.adjusted,
        });
    }
    if let Some(p) = models.get("post_thermometer_by_party").and_then(|m| m.coef(INTERACTION)) {
        let adj = adjust_hte(&[("post_thermometer_by_party".to_string(), p.p_value)])?;
        outcomes.push(OutcomeRow {
            outcome: "post_thermometer_by_party".into(),
            tier: Tier::Tertiary,
            estimate: p.estimate,
            ci_low: p.ci_low,
            ci_high: p.ci_high,
            p_raw: p.p_value,
            p_adjusted: adj["post_thermometer_by_party"],
        });
    }

    let (exposure_rows, change) = exposure(&cohort);
    let political: Vec<AapaScore> = data.scores.values().filter(|s| s.is_political).copied().collect();
    Ok(AnalysisReport {
        experiment: options.experiment,
        enrolled: cohort.units.len(),
        completed: cohort.analyzed().count(),
        models,
        outcomes,
        exposure: exposure_rows,
        exposure_relative_change: change,
        engagement: engagement_rows,
        randomization: randomization(&cohort, options.ri_draws, options.seed),
        factors: factors(&cohort),
        cooccurrence: factor_cooccurrence(&political).ok(),
        skipped,
    })
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("csv row");
    }
    w.into_inner().expect("in-memory csv")
}

#[derive(Serialize)]
struct CooccurrenceRow<'a> {
    factor_a: &'a str,
    factor_b: &'a str,
    correlation: Option<f64>,
}

impl AnalysisReport {
    /// Table file names and contents, in a fixed order.
    pub fn tables(&self) -> Vec<(String, Vec<u8>)> {
        let prefix = self.experiment.as_str();
        let mut coef = Vec::new();
        let models: Vec<(&str, &RegressionResult)> = self.models.iter().map(|(k, v)| (k.as_str(), v)).collect();
        write_coefficient_table(&mut coef, &models).expect("in-memory csv");
        let mut co = Vec::new();
        if let Some(c) = &self.cooccurrence {
            for a in Factor::ALL {
                for b in Factor::ALL {
                    co.push(CooccurrenceRow { factor_a: a.name(), factor_b: b.name(), correlation: c.corr[a.index()][b.index()] });
                }
            }
        }
        vec![
            (format!("{prefix}_coefficients.csv"), coef),
            (format!("{prefix}_outcomes.csv"), csv_bytes(&self.outcomes)),
            (format!("{prefix}_exposure.csv"), csv_bytes(&self.exposure)),
            (format!("{prefix}_engagement.csv"), csv_bytes(&self.engagement)),
            (format!("{prefix}_randomization.csv"), csv_bytes(&self.randomization)),
            (format!("{prefix}_factors.csv"), csv_bytes(&self.factors)),
            (format!("{prefix}_cooccurrence.csv"), csv_bytes(&co)),
            (format!("{prefix}_summary.json"), serde_json::to_vec_pretty(self).expect("report serializes")),
        ]
    }

    pub fn write_tables(&self, dir: &Path) -> Result<Vec<String>, AnalysisError> {
        fs::create_dir_all(dir)
            .map_err(|source| crate::store::StoreError::Io { path: dir.display().to_string(), source })?;
        let mut names = Vec::new();
        for (name, bytes) in self.tables() {
            write_atomic(&dir.join(&name), &bytes)?;
            names.push(name);
        }
        Ok(names)
    }

    /// Markdown rendering of the headline tables.
    pub fn to_markdown(&self) -> String {
        let fmt = |x: f64| if x.is_finite() { format!("{x:.3}") } else { "n/a".into() };
        let mut s = format!(
            "## {} experiment\n\nEnrolled {}, completed {}.\n\n| outcome | tier | estimate | 95% CI | p | adjusted p |\n|---|---|---|---|---|---|\n",
            self.experiment.as_str(),
            self.enrolled,
            self.completed
        );
        for o in &self.outcomes {
            s.push_str(&format!(
                "| {} | {:?} | {} | [{}, {}] | {} | {} |\n",
                o.outcome,
                o.tier,
                fmt(o.estimate),
                fmt(o.ci_low),
                fmt(o.ci_high),
                fmt(o.p_raw),
                fmt(o.p_adjusted)
            ));
        }
        s.push_str("\n| arm | participants | AAPA share | political share |\n|---|---|---|---|\n");
        for e in &self.exposure {
            s.push_str(&format!("| {} | {} | {} | {} |\n", e.arm, e.participants, fmt(e.aapa_share), fmt(e.political_share)));
        }
        if let Some(c) = self.exposure_relative_change {
            s.push_str(&format!("\nAAPA exposure change relative to control: {:+.1}%\n", c * 100.0));
        }
        s.push_str("\n| check | statistic | p |\n|---|---|---|\n");
        for r in &self.randomization {
            s.push_str(&format!(
                "| {} | {} | {} |\n",
                r.test,
                r.statistic.map_or("n/a".into(), fmt),
                r.p_value.map_or_else(|| r.note.clone().unwrap_or_default(), fmt)
            ));
        }
        s
    }
}

/// Participants grouped by experiment, for reporting.
pub fn experiments_present(data: &StudyData) -> BTreeSet<Experiment> {
    data.assignments.iter().map(|a| a.experiment).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_study, SimConfig};

    fn data() -> StudyData {
        let mut c = SimConfig::default().with_participants(60);
        c.feed.pool_size = 600;
        run_study(&c).unwrap()
    }

    #[test]
    fn report_is_complete_and_deterministic() {
        let d = data();
        let opts = AnalysisOptions { ri_draws: 200, ..AnalysisOptions::new(Experiment::Reduce) };
        let a = analyze(&d, &opts).unwrap();
        let b = analyze(&d, &opts).unwrap();
        assert_eq!(a.tables(), b.tables());
        assert!(a.models.contains_key(INFEED_THERMOMETER), "{:?}", a.skipped);
        assert!(a.models.contains_key(POST_THERMOMETER));
        let tiers: BTreeMap<&str, Tier> = a.outcomes.iter().map(|o| (o.outcome.as_str(), o.tier)).collect();
        assert_eq!(tiers[INFEED_THERMOMETER], Tier::Primary);
        assert_eq!(tiers["infeed_angry"], Tier::Secondary);
        assert_eq!(tiers["repost_rate"], Tier::Tertiary);
        for o in a.outcomes.iter().filter(|o| o.tier == Tier::Primary) {
            assert_eq!(o.p_raw, o.p_adjusted);
        }
        assert!(a.exposure_relative_change.unwrap() < -0.5);
        assert_eq!(a.randomization.len(), 3);
        assert!(a.randomization[0].p_value.is_some());
    }

    #[test]
    fn missing_experiment_is_an_error() {
        let d = StudyData::empty(SimConfig::default());
        assert!(matches!(analyze(&d, &AnalysisOptions::new(Experiment::Increase)), Err(AnalysisError::NoParticipants(_))));
    }
}
