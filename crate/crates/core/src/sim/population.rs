use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimConfig;
use crate::model::{questions, Participant, Party, Platform};

/// US time-zone offsets in minutes east of UTC.
const TZ_OFFSETS: [i32; 4] = [-300, -360, -420, -480];

/// Per-participant latent states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub thermometer: f64,
    pub angry: f64,
    pub sad: f64,
    pub excited: f64,
    pub calm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParticipant {
    pub participant: Participant,
    pub latent: Latent,
    /// Last active study day when the participant drops out.
    pub attrition_day: Option<u32>,
}

pub(crate) fn clamp_slider(x: f64) -> f64 {
    x.round().clamp(0.0, 100.0)
}

pub fn generate_population<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Vec<SimParticipant> {
    let r = &config.response;
    let therm = Normal::new(r.thermometer_mean, r.thermometer_sd).expect("positive sd");
    let emo = |m: f64| Normal::new(m, r.emotion_sd).expect("positive sd");
    let (angry, sad, excited, calm) = (emo(r.angry_mean), emo(r.sad_mean), emo(r.excited_mean), emo(r.calm_mean));
    let noise = Normal::new(0.0, r.noise_sd).expect("positive sd");
    let width = (config.n_participants.max(1) as f64).log10().floor() as usize + 1;

    (0..config.n_participants)
        .map(|i| {
            let party = if rng.random_bool(config.democrat_share) { Party::Democrat } else { Party::Republican };
            let platform = if rng.random_bool(config.cloudresearch_share) {
                Platform::CloudResearchLike
            } else {
                Platform::BovitzLike
            };
            let latent = Latent {
                thermometer: therm.sample(rng).clamp(0.0, 100.0),
                angry: angry.sample(rng).clamp(0.0, 100.0),
                sad: sad.sample(rng).clamp(0.0, 100.0),
                excited: excited.sample(rng).clamp(0.0, 100.0),
                calm: calm.sample(rng).clamp(0.0, 100.0),
            };
            let mut pre_survey = BTreeMap::new();
            pre_survey.insert(questions::THERMOMETER.to_string(), clamp_slider(latent.thermometer + noise.sample(rng)));
            pre_survey.insert(questions::ANGRY.to_string(), clamp_slider(latent.angry + noise.sample(rng)));
            pre_survey.insert(questions::SAD.to_string(), clamp_slider(latent.sad + noise.sample(rng)));
            pre_survey.insert(questions::EXCITED.to_string(), clamp_slider(latent.excited + noise.sample(rng)));
            pre_survey.insert(questions::CALM.to_string(), clamp_slider(latent.calm + noise.sample(rng)));
            let local_tz_offset = TZ_OFFSETS[rng.random_range(0..TZ_OFFSETS.len())];
            let attrition_day = rng
                .random_bool(config.behavior.attrition_prob)
                .then(|| rng.random_range(1..config.study.total_days.max(2)));
            SimParticipant {
                participant: Participant {
                    participant_id: format!("p{i:0width$}"),
                    party,
                    platform,
                    pre_survey,
                    local_tz_offset,
                },
                latent,
                attrition_day,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn party_mix_and_determinism() {
        let c = SimConfig::default().with_participants(1000);
        let a = generate_population(&c, &mut seed::rng(1, &["pop"]));
        let b = generate_population(&c, &mut seed::rng(1, &["pop"]));
        assert_eq!(a, b);
        let dems = a.iter().filter(|p| p.participant.party == Party::Democrat).count() as f64;
        // 99.9% binomial interval around 661.
        let sd = (1000.0f64 * 0.661 * 0.339).sqrt();
        assert!((dems - 661.0).abs() < 3.3 * sd, "{dems}");
    }

    #[test]
    fn two_distinct_ids() {
        let c = SimConfig::default().with_participants(2);
        let p = generate_population(&c, &mut seed::rng(2, &["pop"]));
        assert_eq!(p.len(), 2);
        assert_ne!(p[0].participant.participant_id, p[1].participant.participant_id);
    }
}
