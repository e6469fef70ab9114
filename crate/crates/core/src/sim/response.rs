//! Survey answers from latent states, planted effects and same-day dose.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::population::{clamp_slider, Latent};
use super::SimConfig;
use crate::model::{questions, Experiment, Factor, SurveyPrompt, SurveyResponse};

/// What the answering participant brings to a prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseContext {
    pub experiment: Experiment,
    pub treated: bool,
    /// The feed was modified on this day.
    pub intervention: bool,
    /// Qualifying AAPA views earlier the same local day.
    pub aapa_views_today: u32,
}

/// Expected value of one question before noise and clamping.
pub fn expected_value(question: &str, latent: &Latent, ctx: &ResponseContext, config: &SimConfig) -> f64 {
    let t = &config.truth;
    let active = if ctx.treated && ctx.intervention { 1.0 } else { 0.0 };
    let dose = config.response.dose_coefficient * ctx.aapa_views_today as f64;
    let (base, effect, dose_sign) = match question {
        questions::THERMOMETER => (latent.thermometer, t.thermometer.get(ctx.experiment), -1.0),
        questions::ANGRY => (latent.angry, t.angry.get(ctx.experiment), 1.0),
        questions::SAD => (latent.sad, t.sad.get(ctx.experiment), 1.0),
        questions::EXCITED => (latent.excited, t.excited.get(ctx.experiment), 0.0),
        questions::CALM => (latent.calm, t.calm.get(ctx.experiment), 0.0),
        _ => (50.0, 0.0, 0.0),
    };
    base + effect * active + dose_sign * dose
}

fn draw<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    if sd > 0.0 {
        mean + Normal::new(0.0, sd).expect("finite sd").sample(rng)
    } else {
        mean
    }
}

/// Answer an outstanding prompt.
pub fn simulate_response<R: Rng + ?Sized>(
    prompt: &SurveyPrompt,
    latent: &Latent,
    ctx: &ResponseContext,
    config: &SimConfig,
    answered_at: crate::model::Millis,
    rng: &mut R,
) -> SurveyResponse {
    let values = prompt
        .kind
        .questions()
        .into_iter()
        .map(|q| clamp_slider(draw(expected_value(q, latent, ctx, config), config.response.noise_sd, rng)) as i64)
        .collect();
    SurveyResponse { prompt_id: prompt.prompt_id.clone(), values, answered_at }
}

/// Post-experiment thermometer. `factor_fractions[n]` is the share of the
/// participant's viewed political posts expressing factor `n`.
pub fn simulate_post_thermometer<R: Rng + ?Sized>(
    latent: &Latent,
    experiment: Experiment,
    treated: bool,
    factor_fractions: &[f64; 8],
    config: &SimConfig,
    rng: &mut R,
) -> f64 {
    let t = &config.truth;
    let mut mean = latent.thermometer;
    if treated {
        mean += t.post_thermometer.get(experiment);
    }
    for f in Factor::ALL {
        mean += t.dose_slopes[f.index()] * factor_fractions[f.index()];
    }
    clamp_slider(draw(mean, config.response.noise_sd, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NegativeEmotion, PositiveEmotion, PromptKind};
    use crate::seed;

    fn latent() -> Latent {
        Latent { thermometer: 40.0, angry: 30.0, sad: 20.0, excited: 60.0, calm: 55.0 }
    }

    fn prompt(kind: PromptKind) -> SurveyPrompt {
        SurveyPrompt { prompt_id: "s1".into(), kind, feed_position: 3, issued_at: 0 }
    }

    fn ctx(exposure: u32) -> ResponseContext {
        ResponseContext { experiment: Experiment::Reduce, treated: false, intervention: true, aapa_views_today: exposure }
    }

    fn noiseless(dose: f64) -> SimConfig {
        let mut c = SimConfig::default();
        c.response.noise_sd = 0.0;
        c.response.dose_coefficient = dose;
        c
    }

    #[test]
    fn noiseless_zero_dose_returns_latent() {
        let c = noiseless(0.0);
        let mut rng = seed::rng(1, &["resp"]);
        let r = simulate_response(&prompt(PromptKind::Thermometer), &latent(), &ctx(12), &c, 0, &mut rng);
        assert_eq!(r.values, vec![40]);
        let pair = PromptKind::EmotionPair { positive: PositiveEmotion::Calm, negative: NegativeEmotion::Angry };
        let r = simulate_response(&prompt(pair), &latent(), &ctx(12), &c, 0, &mut rng);
        assert_eq!(r.values, vec![55, 30]);
    }

    #[test]
    fn exposure_shifts_by_dose() {
        let c = noiseless(0.5);
        let mut rng = seed::rng(2, &["resp"]);
        let low = simulate_response(&prompt(PromptKind::Thermometer), &latent(), &ctx(2), &c, 0, &mut rng);
        let high = simulate_response(&prompt(PromptKind::Thermometer), &latent(), &ctx(10), &c, 0, &mut rng);
        assert_eq!(low.values[0] - high.values[0], 4);
        let pair = PromptKind::EmotionPair { positive: PositiveEmotion::Excited, negative: NegativeEmotion::Sad };
        let low = simulate_response(&prompt(pair), &latent(), &ctx(2), &c, 0, &mut rng);
        let high = simulate_response(&prompt(pair), &latent(), &ctx(10), &c, 0, &mut rng);
        assert_eq!(high.values[1] - low.values[1], 4);
        assert_eq!(high.values[0], low.values[0]);
    }

    #[test]
    fn treatment_only_counts_on_intervention_days() {
        let c = noiseless(0.0);
        let l = latent();
        let mut x = ctx(0);
        x.treated = true;
        assert!((expected_value(questions::THERMOMETER, &l, &x, &c) - 43.24).abs() < 1e-12);
        x.intervention = false;
        assert_eq!(expected_value(questions::THERMOMETER, &l, &x, &c), 40.0);
    }

    #[test]
    fn values_stay_on_slider() {
        let mut c = SimConfig::default();
        c.response.noise_sd = 200.0;
        let mut rng = seed::rng(3, &["resp"]);
        for _ in 0..2000 {
            let r = simulate_response(&prompt(PromptKind::Thermometer), &latent(), &ctx(0), &c, 0, &mut rng);
            assert!((0..=100).contains(&r.values[0]));
        }
        let v = simulate_post_thermometer(&latent(), Experiment::Increase, true, &[1.0; 8], &c, &mut rng);
        assert!((0.0..=100.0).contains(&v));
    }
}
