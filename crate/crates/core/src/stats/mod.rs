//! Estimators and tests for the experiment analysis.
//!
//! Everything here is pure. Randomized procedures take an explicit seed and
//! derive one stream per draw, so results do not depend on thread scheduling.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub mod descriptive;
pub mod fdr;
pub mod lmm;
pub mod mwu;
pub mod ols;
pub mod power;
pub mod ri;
pub mod table;

pub use descriptive::{factor_cooccurrence, ks_uniform, Cooccurrence, KsResult};
pub use fdr::{adjust_hte, adjust_outcome_tiers, sharpened_fdr, AdjustedP, Tier, FDR_GRID};
pub use lmm::{lmm_ate, lmm_fit, lmm_problem, GroupObs, LmmGroup, LmmProblem};
pub use mwu::{mann_whitney_u, mann_whitney_u_normal, MannWhitney};
pub use ols::{factor_contribution, hte, impute_baseline, ols, ols_ate, Covariate, OlsFit, INTERACTION, INTERCEPT, MODERATOR, TREATMENT};
pub use table::{coefficient_rows, write_coefficient_table, CoefficientRow};
pub use power::{power_simulation, PowerConfig, PowerEstimate, PowerModel};
pub use ri::{
    exact_p, ri_attrition_pattern, ri_attrition_rate, ri_covariate_balance, ri_test, welch_abs_t,
    Bernoulli, Complete, RITestResult, Randomizer, DEFAULT_RI_DRAWS,
};

/// Normal quantile used for all Wald intervals.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("variance-ratio optimization did not converge")]
    NonConvergence(Box<RegressionResult>),
    #[error("every covariate has zero variance")]
    AllCovariatesDropped,
    #[error("a treatment arm is empty")]
    DegenerateArm,
    #[error("p-value {0} is outside [0, 1]")]
    InvalidP(f64),
    #[error("hypothesis `{0}` appears in more than one tier")]
    OverlappingTiers(String),
    #[error("sample is empty")]
    EmptySample,
    #[error("moderator does not take two levels in both arms")]
    DegenerateModerator,
    #[error("fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("input lengths differ: {0}")]
    LengthMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    /// Model-based standard error.
    pub se: f64,
    /// HC2 standard error (OLS only).
    pub robust_se: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

impl Coefficient {
    /// Wald summary from the estimate and the SE used for inference.
    pub fn new(name: impl Into<String>, estimate: f64, se: f64, robust_se: Option<f64>) -> Self {
        let inf_se = robust_se.unwrap_or(se);
        Coefficient {
            name: name.into(),
            estimate,
            se,
            robust_se,
            ci_low: estimate - Z95 * inf_se,
            ci_high: estimate + Z95 * inf_se,
            p_value: normal_two_sided_p(estimate, inf_se),
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: Vec<Coefficient>,
    pub n_obs: usize,
    pub n_groups: Option<usize>,
    pub sigma2_u: Option<f64>,
    pub sigma2_e: Option<f64>,
    /// Restricted log-likelihood for mixed models.
    pub log_likelihood: Option<f64>,
}

impl RegressionResult {
    pub fn coef(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.coef(name).map(|c| c.estimate)
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided p for a Wald z; a zero SE with a nonzero estimate gives 0.
pub fn normal_two_sided_p(estimate: f64, se: f64) -> f64 {
    if se > 0.0 && se.is_finite() {
        (2.0 * (1.0 - normal_cdf((estimate / se).abs()))).clamp(0.0, 1.0)
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn check_len(name: &str, expected: usize, got: usize) -> Result<(), StatsError> {
    if expected != got {
        return Err(StatsError::LengthMismatch(format!("{name}: expected {expected}, got {got}")));
    }
    Ok(())
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub(crate) fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wald_interval() {
        let c = Coefficient::new("t", 2.0, 1.0, None);
        assert!((c.ci_low - 0.04).abs() < 1e-12);
        assert!((c.ci_high - 3.96).abs() < 1e-12);
        assert!((c.p_value - 0.0455).abs() < 1e-3);
        let r = Coefficient::new("t", 2.0, 1.0, Some(0.5));
        assert!((r.ci_high - 2.98).abs() < 1e-12);
        assert_eq!(normal_two_sided_p(0.0, 0.0), 1.0);
        assert_eq!(normal_two_sided_p(1.0, 0.0), 0.0);
    }
}
