//! Randomization inference: the observed statistic is compared with its
//! distribution under fresh draws from the actual assignment mechanism.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ols::{design, ols};
use super::{check_len, mean, variance, StatsError};
use crate::seed::{self, StreamRng};

pub const DEFAULT_RI_DRAWS: usize = 10_000;

/// Largest sample for which assignments are enumerated exactly.
pub const MAX_ENUMERATION: usize = 20;

/// Relative slack when comparing a redrawn statistic with the observed one,
/// so mirror-image assignments tie despite rounding.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RITestResult {
    /// `None` when the observed statistic is undefined.
    pub statistic: Option<f64>,
    pub n_draws: usize,
    pub p_value: f64,
    pub seed: u64,
}

/// A treatment-assignment mechanism.
pub trait Randomizer: Send + Sync {
    fn draw(&self, n: usize, rng: &mut StreamRng) -> Vec<bool>;

    /// Every assignment with its probability, or `None` past
    /// [`MAX_ENUMERATION`] units.
    fn enumerate(&self, n: usize) -> Option<Vec<(Vec<bool>, f64)>>;
}

/// Independent coin per unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bernoulli {
    pub p: f64,
}

impl Default for Bernoulli {
    fn default() -> Self {
        Bernoulli { p: 0.5 }
    }
}

impl Randomizer for Bernoulli {
    fn draw(&self, n: usize, rng: &mut StreamRng) -> Vec<bool> {
        (0..n).map(|_| rng.random_bool(self.p)).collect()
    }

    fn enumerate(&self, n: usize) -> Option<Vec<(Vec<bool>, f64)>> {
        if n > MAX_ENUMERATION {
            return None;
        }
        Some(
            (0u32..1 << n)
                .map(|mask| {
                    let a: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                    let k = mask.count_ones() as i32;
                    (a, self.p.powi(k) * (1.0 - self.p).powi(n as i32 - k))
                })
                .collect(),
        )
    }
}

/// Exactly `n_treated` units treated, uniformly over subsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complete {
    pub n_treated: usize,
}

impl Complete {
    pub fn matching(treatment: &[bool]) -> Self {
        Complete { n_treated: treatment.iter().filter(|t| **t).count() }
    }
}

impl Randomizer for Complete {
    fn draw(&self, n: usize, rng: &mut StreamRng) -> Vec<bool> {
        let mut a: Vec<bool> = (0..n).map(|i| i < self.n_treated).collect();
        for i in (1..n).rev() {
            a.swap(i, rng.random_range(0..=i));
        }
        a
    }

    fn enumerate(&self, n: usize) -> Option<Vec<(Vec<bool>, f64)>> {
        if n > MAX_ENUMERATION || self.n_treated > n {
            return None;
        }
        let all: Vec<Vec<bool>> = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == self.n_treated)
            .map(|mask| (0..n).map(|i| mask >> i & 1 == 1).collect())
            .collect();
        let w = 1.0 / all.len() as f64;
        Some(all.into_iter().map(|a| (a, w)).collect())
    }
}

fn at_least(candidate: f64, observed: f64) -> bool {
    if observed == f64::INFINITY {
        return candidate == f64::INFINITY;
    }
    candidate >= observed - TIE_TOL * observed.abs().max(1.0)
}

/// `p = (1 + #{T* ≥ T}) / (1 + n_draws)`. Draws with an undefined
/// statistic never count as extreme; an undefined observed statistic gives
/// `p = 1`.
pub fn ri_test<S>(
    statistic: S,
    observed: &[bool],
    randomizer: &dyn Randomizer,
    n_draws: usize,
    seed: u64,
) -> RITestResult
where
    S: Fn(&[bool]) -> Option<f64> + Sync,
{
    let t_obs = statistic(observed).filter(|t| !t.is_nan());
    let Some(t) = t_obs else {
        return RITestResult { statistic: None, n_draws, p_value: 1.0, seed };
    };
    let n = observed.len();
    let extreme: usize = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::draw_rng(seed, "ri", i as u64);
            let a = randomizer.draw(n, &mut rng);
            statistic(&a).is_some_and(|s| at_least(s, t)) as usize
        })
        .sum();
    RITestResult {
        statistic: Some(t),
        n_draws,
        p_value: (1 + extreme) as f64 / (1 + n_draws) as f64,
        seed,
    }
}

/// Exact randomization p-value by enumeration, `None` if the sample is too
/// large to enumerate.
pub fn exact_p<S>(statistic: S, observed: &[bool], randomizer: &dyn Randomizer) -> Option<f64>
where
    S: Fn(&[bool]) -> Option<f64>,
{
    let all = randomizer.enumerate(observed.len())?;
    let Some(t) = statistic(observed).filter(|t| !t.is_nan()) else {
        return Some(1.0);
    };
    Some(
        all.iter()
            .filter(|(a, _)| statistic(a).is_some_and(|s| at_least(s, t)))
            .map(|(_, w)| w)
            .sum(),
    )
}

fn as_f64(t: &[bool]) -> Vec<f64> {
    t.iter().map(|&b| b as u8 as f64).collect()
}

/// Drop constant columns; error if none remain.
fn varying_columns(covariates: &[Vec<f64>], n: usize) -> Result<Vec<&[f64]>, StatsError> {
    let mut kept = Vec::new();
    for (j, c) in covariates.iter().enumerate() {
        check_len("covariate", n, c.len())?;
        if variance(c) > 0.0 {
            kept.push(c.as_slice());
        } else {
            tracing::info!(column = j, "dropping zero-variance covariate");
        }
    }
    if kept.is_empty() {
        return Err(StatsError::AllCovariatesDropped);
    }
    Ok(kept)
}

fn named(cols: &[&[f64]], prefix: &str) -> Vec<(String, Vec<f64>)> {
    cols.iter().enumerate().map(|(j, c)| (format!("{prefix}{j}"), c.to_vec())).collect()
}

/// HC2 Wald statistic for all slopes in `treatment ~ 1 + covariates`.
pub fn balance_statistic(x: &DMatrix<f64>, names: &[String], treatment: &[bool]) -> Option<f64> {
    let fit = ols(&as_f64(treatment), x, names).ok()?;
    let idx: Vec<usize> = (1..names.len()).collect();
    Some(fit.robust_wald(&idx))
}

/// Covariate balance: regress treatment on covariates (one `Vec` per
/// column) and compare the robust Wald statistic with redraws.
pub fn ri_covariate_balance(
    covariates: &[Vec<f64>],
    treatment: &[bool],
    randomizer: &dyn Randomizer,
    n_draws: usize,
    seed: u64,
) -> Result<RITestResult, StatsError> {
    let n = treatment.len();
    let kept = varying_columns(covariates, n)?;
    let cols = named(&kept, "x");
    let refs: Vec<(String, &[f64])> = cols.iter().map(|(n, c)| (n.clone(), c.as_slice())).collect();
    let (x, names) = design(n, &refs)?;
    super::ols::gram_inverse(&x.tr_mul(&x))?;
    Ok(ri_test(|t| balance_statistic(&x, &names, t), treatment, randomizer, n_draws, seed))
}

/// Two-sided Welch statistic `|t|` for a difference in means. Equal means
/// with zero spread are undefined; zero spread with unequal means is +inf.
pub fn welch_abs_t(values: &[f64], treatment: &[bool]) -> Option<f64> {
    let (a, b): (Vec<(f64, bool)>, Vec<(f64, bool)>) =
        values.iter().copied().zip(treatment.iter().copied()).partition(|(_, t)| *t);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let a: Vec<f64> = a.into_iter().map(|v| v.0).collect();
    let b: Vec<f64> = b.into_iter().map(|v| v.0).collect();
    let diff = mean(&a) - mean(&b);
    let se = (variance(&a) / a.len() as f64 + variance(&b) / b.len() as f64).sqrt();
    if se > 0.0 {
        Some((diff / se).abs())
    } else if diff != 0.0 {
        Some(f64::INFINITY)
    } else {
        None
    }
}

/// Whether treatment changed the attrition rate.
pub fn ri_attrition_rate(
    attrition: &[bool],
    treatment: &[bool],
    randomizer: &dyn Randomizer,
    n_draws: usize,
    seed: u64,
) -> Result<RITestResult, StatsError> {
    check_len("attrition", treatment.len(), attrition.len())?;
    if treatment.iter().all(|t| *t) || treatment.iter().all(|t| !*t) {
        return Err(StatsError::DegenerateArm);
    }
    let y = as_f64(attrition);
    Ok(ri_test(|t| welch_abs_t(&y, t), treatment, randomizer, n_draws, seed))
}

/// Robust F for the interactions in
/// `attrition ~ 1 + T + X + T×X`.
pub fn pattern_statistic(attrition: &[f64], covariates: &[&[f64]], treatment: &[bool]) -> Option<f64> {
    let n = attrition.len();
    let t = as_f64(treatment);
    let inter: Vec<Vec<f64>> = covariates.iter().map(|c| c.iter().zip(&t).map(|(x, t)| x * t).collect()).collect();
    let mut cols: Vec<(String, &[f64])> = vec![("t".into(), t.as_slice())];
    cols.extend(covariates.iter().enumerate().map(|(j, c)| (format!("x{j}"), *c)));
    cols.extend(inter.iter().enumerate().map(|(j, c)| (format!("tx{j}"), c.as_slice())));
    let (x, names) = design(n, &cols).ok()?;
    let fit = ols(attrition, &x, &names).ok()?;
    let k = covariates.len();
    let idx: Vec<usize> = (2 + k..2 + 2 * k).collect();
    Some(fit.robust_wald(&idx) / k as f64)
}

/// Whether attrition differs by covariates differently across arms.
pub fn ri_attrition_pattern(
    covariates: &[Vec<f64>],
    treatment: &[bool],
    attrition: &[bool],
    randomizer: &dyn Randomizer,
    n_draws: usize,
    seed: u64,
) -> Result<RITestResult, StatsError> {
    let n = treatment.len();
    check_len("attrition", n, attrition.len())?;
    let kept = match varying_columns(covariates, n) {
        Ok(k) => k,
        Err(StatsError::AllCovariatesDropped) => return Err(StatsError::RankDeficient),
        Err(e) => return Err(e),
    };
    let y = as_f64(attrition);
    if pattern_statistic(&y, &kept, treatment).is_none() {
        return Err(StatsError::RankDeficient);
    }
    Ok(ri_test(|t| pattern_statistic(&y, &kept, t), treatment, randomizer, n_draws, seed))
}
