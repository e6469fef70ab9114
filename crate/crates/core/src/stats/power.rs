//! Simulation-based power for the treatment coefficient.
//!
//! Replicate `s` draws participant `i` from its own seeded stream, so grids
//! over `n` and the effect share common random numbers: a larger study
//! contains the smaller one, and changing the effect only shifts outcomes.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lmm::{lmm_ate, GroupObs};
use super::ols::{ols_ate, TREATMENT};
use super::{normal_quantile, RegressionResult, StatsError};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerModel {
    /// Repeated in-feed responses, random-intercept model.
    Lmm,
    /// One post-experiment response per participant, OLS.
    Ols,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    pub effect: f64,
    /// Participants, split evenly between arms.
    pub n: usize,
    pub sigma_u: f64,
    pub sigma_e: f64,
    pub obs_per_participant: usize,
    pub n_sims: usize,
    pub alpha: f64,
    pub seed: u64,
    pub model: PowerModel,
}

impl PowerConfig {
    /// Variances in the range seen in pilot thermometer data.
    pub fn pilot(effect: f64, n: usize) -> Self {
        PowerConfig {
            effect,
            n,
            sigma_u: 6.0,
            sigma_e: 10.0,
            obs_per_participant: 10,
            n_sims: 1000,
            alpha: 0.05,
            seed: 0,
            model: PowerModel::Lmm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub power: f64,
    pub rejections: usize,
    pub n_sims: usize,
    /// Wilson 95% interval for the rejection rate.
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// One synthetic data set: participant `i` is treated when `i` is odd.
pub fn simulate_groups(config: &PowerConfig, replicate: u64) -> Vec<GroupObs> {
    let u = Normal::new(0.0, config.sigma_u).expect("finite sigma_u");
    let e = Normal::new(0.0, config.sigma_e).expect("finite sigma_e");
    let per = match config.model {
        PowerModel::Lmm => config.obs_per_participant.max(1),
        PowerModel::Ols => 1,
    };
    (0..config.n)
        .map(|i| {
            let mut rng = seed::rng(config.seed, &["power", &replicate.to_string(), &i.to_string()]);
            let t = (i % 2) as f64;
            let ui = u.sample(&mut rng);
            let responses = (0..per).map(|_| 50.0 + config.effect * t + ui + e.sample(&mut rng)).collect();
            GroupObs { treatment: t, covariates: vec![], responses }
        })
        .collect()
}

fn fit(config: &PowerConfig, groups: &[GroupObs]) -> Result<RegressionResult, StatsError> {
    match config.model {
        PowerModel::Lmm => match lmm_ate(groups, &[]) {
            Err(StatsError::NonConvergence(best)) => Ok(*best),
            other => other,
        },
        PowerModel::Ols => {
            let y: Vec<f64> = groups.iter().map(|g| g.responses[0]).collect();
            let t: Vec<f64> = groups.iter().map(|g| g.treatment).collect();
            ols_ate(&y, &t, &[])
        }
    }
}

pub fn power_simulation(config: &PowerConfig) -> Result<PowerEstimate, StatsError> {
    if config.n_sims < 100 {
        return Err(StatsError::InsufficientData(format!("{} simulations", config.n_sims)));
    }
    if config.n < 4 {
        return Err(StatsError::InsufficientData(format!("{} participants", config.n)));
    }
    let crit = normal_quantile(1.0 - config.alpha / 2.0);
    let rejections: usize = (0..config.n_sims as u64)
        .into_par_iter()
        .map(|s| {
            let groups = simulate_groups(config, s);
            fit(config, &groups)
                .ok()
                .and_then(|r| r.coef(TREATMENT).cloned())
                .is_some_and(|c| {
                    let se = c.robust_se.unwrap_or(c.se);
                    se > 0.0 && (c.estimate / se).abs() > crit
                }) as usize
        })
        .sum();
    let (ci_low, ci_high) = wilson_interval(rejections, config.n_sims, 1.96);
    Ok(PowerEstimate {
        power: rejections as f64 / config.n_sims as f64,
        rejections,
        n_sims: config.n_sims,
        ci_low,
        ci_high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_designs_share_participants() {
        let small = simulate_groups(&PowerConfig::pilot(2.0, 10), 3);
        let big = simulate_groups(&PowerConfig::pilot(2.0, 20), 3);
        assert_eq!(small[..], big[..10]);
        let shifted = simulate_groups(&PowerConfig::pilot(3.0, 10), 3);
        let d = shifted[1].responses[0] - small[1].responses[0];
        assert!((d - 1.0).abs() < 1e-12);
        assert_eq!(shifted[0], small[0]);
    }

    #[test]
    fn wilson() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && hi > 0.5 && (hi - lo - 0.19).abs() < 0.01);
        assert_eq!(wilson_interval(0, 0, 1.96), (0.0, 1.0));
    }

    #[test]
    fn rejects_tiny_runs() {
        let mut c = PowerConfig::pilot(1.0, 100);
        c.n_sims = 10;
        assert!(power_simulation(&c).is_err());
    }

    #[test]
    fn large_effect_has_high_power() {
        let mut c = PowerConfig::pilot(6.0, 200);
        c.n_sims = 100;
        c.model = PowerModel::Ols;
        assert!(power_simulation(&c).unwrap().power > 0.8);
    }
}
