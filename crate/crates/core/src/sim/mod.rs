//! Synthetic participants, feeds, behavior and survey answers with planted
//! effects, driving the same load pipeline as the service.

use serde::{Deserialize, Serialize};

use crate::experiment::StudyConfig;
use crate::model::Experiment;

pub mod behavior;
pub mod feed;
pub mod population;
pub mod response;
pub mod study;

pub use behavior::{simulate_behavior, BehaviorOutcome};
pub use feed::{generate_feed_batch, generate_post, GeneratedBatch};
pub use population::{generate_population, SimParticipant};
pub use response::simulate_response;
pub use study::{run_study, StudyData};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("config parse error: {0}")]
    Parse(String),
}

/// Effect of treatment in each experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEffects {
    pub reduce: f64,
    pub increase: f64,
}

impl ExperimentEffects {
    pub fn get(&self, e: Experiment) -> f64 {
        match e {
            Experiment::Reduce => self.reduce,
            Experiment::Increase => self.increase,
        }
    }
}

/// Planted effects, recorded with every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruth {
    /// In-feed thermometer, intervention days.
    pub thermometer: ExperimentEffects,
    /// Post-experiment thermometer.
    pub post_thermometer: ExperimentEffects,
    pub angry: ExperimentEffects,
    pub sad: ExperimentEffects,
    pub excited: ExperimentEffects,
    pub calm: ExperimentEffects,
    /// Post-experiment thermometer change when every viewed political post
    /// expresses factor `n`.
    pub dose_slopes: [f64; 8],
}

impl Default for GroundTruth {
    fn default() -> Self {
        let fx = |reduce, increase| ExperimentEffects { reduce, increase };
        GroundTruth {
            thermometer: fx(3.24, -2.56),
            post_thermometer: fx(2.11, -2.48),
            angry: fx(-5.05, 5.13),
            sad: fx(-3.68, 4.38),
            excited: fx(0.0, 0.0),
            calm: fx(0.0, 0.0),
            dose_slopes: [0.0; 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedConfig {
    pub posts_per_batch: usize,
    pub ads_per_batch: usize,
    pub political_fraction: f64,
    /// Probability of a political post expressing exactly `k` factors.
    pub factor_count_weights: [f64; 9],
    /// Relative propensity of each factor once a count is drawn.
    pub factor_weights: [f64; 8],
    /// Chance a latent factor is left out of the generated text.
    pub text_noise: f64,
    /// Distinct non-ad posts available per party and day.
    pub pool_size: usize,
}

impl Default for FeedConfig {
    fn default() -> Self {
        FeedConfig {
            posts_per_batch: 35,
            ads_per_batch: 5,
            political_fraction: 0.32,
            factor_count_weights: [0.23, 0.16, 0.15, 0.129, 0.11, 0.09, 0.07, 0.045, 0.016],
            factor_weights: [1.6, 1.0, 0.8, 1.2, 1.0, 0.9, 0.7, 0.8],
            text_noise: 0.0,
            pool_size: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    pub sessions_per_day: f64,
    pub max_sessions_per_day: u32,
    /// Target mean of qualifying views per participant-day.
    pub mean_views_per_day: f64,
    /// Share of views lasting at least one second.
    pub qualifying_view_prob: f64,
    pub mean_dwell_ms: f64,
    pub favorite_rate: f64,
    pub repost_rate: f64,
    pub reply_rate: f64,
    /// Multiplier on favorites for political posts.
    pub political_favorite_multiplier: f64,
    pub political_repost_multiplier: f64,
    pub answer_prob: f64,
    /// Probability a participant stops using the extension partway through.
    pub attrition_prob: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig {
            sessions_per_day: 1.5,
            max_sessions_per_day: 6,
            mean_views_per_day: 158.0,
            qualifying_view_prob: 0.9,
            mean_dwell_ms: 3_500.0,
            favorite_rate: 0.0429,
            repost_rate: 0.00484,
            reply_rate: 0.002,
            political_favorite_multiplier: 0.0507 / 0.0429,
            political_repost_multiplier: 0.00677 / 0.00484,
            answer_prob: 0.7,
            attrition_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseConfig {
    pub thermometer_mean: f64,
    pub thermometer_sd: f64,
    pub angry_mean: f64,
    pub sad_mean: f64,
    pub excited_mean: f64,
    pub calm_mean: f64,
    pub emotion_sd: f64,
    /// Per-response noise.
    pub noise_sd: f64,
    /// Thermometer drop per qualifying AAPA view earlier the same day.
    /// Negative emotions rise by the same amount.
    pub dose_coefficient: f64,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        ResponseConfig {
            thermometer_mean: 35.0,
            thermometer_sd: 12.0,
            angry_mean: 30.0,
            sad_mean: 25.0,
            excited_mean: 30.0,
            calm_mean: 50.0,
            emotion_sd: 15.0,
            noise_sd: 10.0,
            dose_coefficient: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_participants: usize,
    pub democrat_share: f64,
    /// Share recruited on the CloudResearch-like platform.
    pub cloudresearch_share: f64,
    pub study: StudyConfig,
    /// UTC instant of day 1's midnight at offset 0.
    pub start_ms: i64,
    pub feed: FeedConfig,
    pub behavior: BehaviorConfig,
    pub response: ResponseConfig,
    pub truth: GroundTruth,
    pub master_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_participants: 400,
            democrat_share: 0.661,
            cloudresearch_share: 0.5,
            study: StudyConfig { quota_reduce: 200, quota_increase: 200, ..StudyConfig::default() },
            start_ms: 1_696_118_400_000,
            feed: FeedConfig::default(),
            behavior: BehaviorConfig::default(),
            response: ResponseConfig::default(),
            truth: GroundTruth::default(),
            master_seed: 42,
        }
    }
}

impl SimConfig {
    pub fn from_toml(src: &str) -> Result<Self, SimError> {
        let c: SimConfig = toml::from_str(src).map_err(|e| SimError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Quotas follow the population unless set explicitly larger.
    pub fn with_participants(mut self, n: usize) -> Self {
        self.n_participants = n;
        let half = n.div_ceil(2) as u32;
        self.study.quota_reduce = half;
        self.study.quota_increase = half;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if !frac(self.democrat_share) || !frac(self.cloudresearch_share) {
            return bad("population shares must be in [0, 1]");
        }
        let f = &self.feed;
        if !frac(f.political_fraction) || !frac(f.text_noise) {
            return bad("feed fractions must be in [0, 1]");
        }
        if f.ads_per_batch > f.posts_per_batch {
            return bad("more ads than posts per batch");
        }
        if f.factor_count_weights.iter().any(|w| *w < 0.0) || f.factor_count_weights.iter().sum::<f64>() <= 0.0 {
            return bad("factor count weights must be nonnegative with positive sum");
        }
        if f.factor_weights.iter().any(|w| *w <= 0.0) {
            return bad("factor weights must be positive");
        }
        if f.pool_size < f.posts_per_batch {
            return bad("pool smaller than a batch");
        }
        let b = &self.behavior;
        for x in [b.qualifying_view_prob, b.favorite_rate, b.repost_rate, b.reply_rate, b.answer_prob, b.attrition_prob] {
            if !frac(x) {
                return bad("behavior rates must be in [0, 1]");
            }
        }
        if b.favorite_rate * b.political_favorite_multiplier > 1.0 || b.repost_rate * b.political_repost_multiplier > 1.0 {
            return bad("political engagement rates exceed 1");
        }
        if b.sessions_per_day < 0.0 || b.mean_views_per_day < 0.0 || b.mean_dwell_ms <= 0.0 {
            return bad("behavior rates must be nonnegative");
        }
        let r = &self.response;
        if r.noise_sd <= 0.0 || r.thermometer_sd <= 0.0 || r.emotion_sd <= 0.0 {
            return bad("noise SDs must be positive");
        }
        self.study.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if (self.study.quota_reduce + self.study.quota_increase) < self.n_participants as u32 {
            return bad("quotas smaller than the population");
        }
        Ok(())
    }

    /// Expected AAPA share of political posts implied by the count weights.
    pub fn aapa_share_of_political(&self) -> f64 {
        let w = &self.feed.factor_count_weights;
        w[crate::model::AAPA_THRESHOLD as usize..].iter().sum::<f64>() / w.iter().sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_hit_targets() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert!((c.aapa_share_of_political() - 0.331).abs() < 1e-9);
        assert!((c.feed.political_fraction * c.aapa_share_of_political() - 0.106).abs() < 0.001);
    }

    #[test]
    fn toml_round_trip() {
        let c = SimConfig::default().with_participants(10);
        let back = SimConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let partial = SimConfig::from_toml("n_participants = 4\nmaster_seed = 7\n").unwrap();
        assert_eq!(partial.master_seed, 7);
        assert_eq!(partial.feed.posts_per_batch, 35);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = SimConfig::default();
        c.response.noise_sd = 0.0;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.feed.political_fraction = 1.5;
        assert!(c.validate().is_err());
        let c = SimConfig { n_participants: 10_000, ..SimConfig::default() };
        assert!(c.validate().is_err());
    }
}
