//! Two-stage sharpened false-discovery-rate q-values and tiered adjustment
//! of outcome families.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::StatsError;

/// Candidate levels are `k / FDR_GRID` for `k = 1..=FDR_GRID`.
pub const FDR_GRID: u32 = 10_000;

/// Absorbs rounding when a p-value sits exactly on a grid boundary.
const BOUNDARY_SLACK: f64 = 1e-12;

/// BH threshold: the largest p among the rejections at `level`, if any.
fn bh_threshold(sorted: &[f64], level: f64) -> Option<f64> {
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .rev()
        .find(|(i, p)| **p <= (*i + 1) as f64 * level / m + BOUNDARY_SLACK)
        .map(|(_, p)| *p)
}

/// Largest p rejected by the two-stage procedure at level `q`.
fn two_stage_threshold(sorted: &[f64], q: f64) -> Option<f64> {
    let m = sorted.len();
    let stage1 = bh_threshold(sorted, q / (1.0 + q));
    let r1 = stage1.map_or(0, |thr| sorted.iter().filter(|p| **p <= thr).count());
    if r1 == m {
        return sorted.last().copied();
    }
    bh_threshold(sorted, q * m as f64 / (m - r1) as f64)
}

/// Sharpened q-values: each test's q is the smallest grid level at which it
/// is rejected (1 if never).
pub fn sharpened_fdr(pvals: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(bad) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidP(*bad));
    }
    if pvals.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut order: Vec<usize> = (0..pvals.len()).collect();
    order.sort_by(|a, b| pvals[*a].total_cmp(&pvals[*b]));

    let mut q = vec![1.0; pvals.len()];
    let mut next = 0;
    for k in 1..=FDR_GRID {
        let level = k as f64 / FDR_GRID as f64;
        let Some(thr) = two_stage_threshold(&sorted, level) else { continue };
        while next < order.len() && pvals[order[next]] <= thr {
            q[order[next]] = level;
            next += 1;
        }
        if next == order.len() {
            break;
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    Primary,
    Secondary,
    Tertiary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedP {
    pub tier: Tier,
    pub raw: f64,
    pub adjusted: f64,
}

/// Primary outcomes stay raw; secondary are adjusted over primary plus
/// secondary; tertiary over all three tiers.
pub fn adjust_outcome_tiers(
    primary: &[(String, f64)],
    secondary: &[(String, f64)],
    tertiary: &[(String, f64)],
) -> Result<BTreeMap<String, AdjustedP>, StatsError> {
    let mut seen = BTreeSet::new();
    for (id, p) in primary.iter().chain(secondary).chain(tertiary) {
        if !seen.insert(id.as_str()) {
            return Err(StatsError::OverlappingTiers(id.clone()));
        }
        if !(0.0..=1.0).contains(p) {
            return Err(StatsError::InvalidP(*p));
        }
    }
    let mut out = BTreeMap::new();
    for (id, p) in primary {
        out.insert(id.clone(), AdjustedP { tier: Tier::Primary, raw: *p, adjusted: *p });
    }
    let mut pooled: Vec<&(String, f64)> = primary.iter().collect();
    for (tier, family) in [(Tier::Secondary, secondary), (Tier::Tertiary, tertiary)] {
        pooled.extend(family.iter());
        if family.is_empty() {
            continue;
        }
        let ps: Vec<f64> = pooled.iter().map(|x| x.1).collect();
        let q = sharpened_fdr(&ps)?;
        let offset = pooled.len() - family.len();
        for (j, (id, p)) in family.iter().enumerate() {
            out.insert(id.clone(), AdjustedP { tier, raw: *p, adjusted: q[offset + j] });
        }
    }
    Ok(out)
}

/// Heterogeneity tests are adjusted jointly over every moderator-outcome
/// pair.
pub fn adjust_hte(tests: &[(String, f64)]) -> Result<BTreeMap<String, f64>, StatsError> {
    let mut seen = BTreeSet::new();
    for (id, _) in tests {
        if !seen.insert(id.as_str()) {
            return Err(StatsError::OverlappingTiers(id.clone()));
        }
    }
    let ps: Vec<f64> = tests.iter().map(|t| t.1).collect();
    let q = sharpened_fdr(&ps)?;
    Ok(tests.iter().zip(q).map(|((id, _), q)| (id.clone(), q)).collect())
}
