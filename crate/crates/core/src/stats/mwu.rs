//! Mann-Whitney U test.
//!
//! Two-sided convention: `p = P(|U - n_x n_y / 2| ≥ |U_obs - n_x n_y / 2|)`
//! under the permutation null. The exact distribution is used for small
//! samples without ties, otherwise the normal approximation with tie and
//! continuity corrections.

use serde::{Deserialize, Serialize};

use super::{normal_cdf, StatsError};

/// Combined sample size up to which the exact distribution is used.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U for the first sample: pairs with `x > y` plus half the ties.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks of the pooled sample, plus the tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|a, b| pooled[*a].total_cmp(&pooled[*b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            ranks[*k] = r;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

fn u_statistic(x: &[f64], y: &[f64]) -> Result<(f64, Vec<usize>), StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let nx = x.len() as f64;
    let rx: f64 = ranks[..x.len()].iter().sum();
    Ok((rx - nx * (nx + 1.0) / 2.0, ties))
}

/// Counts of each U value over all ways to split `nx + ny` distinct values
/// into the two samples.
fn exact_u_counts(nx: usize, ny: usize) -> Vec<u64> {
    // table[m][n][u]: the largest pooled value is either an x, which beats
    // all n y's, or a y, which adds nothing.
    let mut table: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); ny + 1]; nx + 1];
    for m in 0..=nx {
        for n in 0..=ny {
            let mut out = vec![0u64; m * n + 1];
            if m == 0 || n == 0 {
                out[0] = 1;
            } else {
                for (u, c) in table[m - 1][n].iter().enumerate() {
                    out[u + n] += c;
                }
                for (u, c) in table[m][n - 1].iter().enumerate() {
                    out[u] += c;
                }
            }
            table[m][n] = out;
        }
    }
    std::mem::take(&mut table[nx][ny])
}

/// Exact two-sided p from the null distribution of U.
fn exact_p(u: f64, nx: usize, ny: usize) -> f64 {
    let counts = exact_u_counts(nx, ny);
    let total: u64 = counts.iter().sum();
    let center = (nx * ny) as f64 / 2.0;
    let d = (u - center).abs();
    let hits: u64 = counts
        .iter()
        .enumerate()
        .filter(|(v, _)| (*v as f64 - center).abs() >= d - 1e-9)
        .map(|(_, c)| c)
        .sum();
    hits as f64 / total as f64
}

fn normal_p(u: f64, nx: usize, ny: usize, ties: &[usize]) -> f64 {
    let (nxf, nyf) = (nx as f64, ny as f64);
    let n = nxf + nyf;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>() / (n * (n - 1.0));
    let var = nxf * nyf / 12.0 * ((n + 1.0) - tie_term);
    if !(var > 0.0) {
        return 1.0;
    }
    let z = (((u - nxf * nyf / 2.0).abs() - 0.5).max(0.0)) / var.sqrt();
    (2.0 * (1.0 - normal_cdf(z))).min(1.0)
}

pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney, StatsError> {
    let (u, ties) = u_statistic(x, y)?;
    let exact = ties.is_empty() && x.len() + y.len() <= EXACT_MAX_N;
    let p_value = if exact { exact_p(u, x.len(), y.len()) } else { normal_p(u, x.len(), y.len(), &ties) };
    Ok(MannWhitney { u, p_value, exact })
}

/// Normal approximation regardless of sample size.
pub fn mann_whitney_u_normal(x: &[f64], y: &[f64]) -> Result<MannWhitney, StatsError> {
    let (u, ties) = u_statistic(x, y)?;
    Ok(MannWhitney { u, p_value: normal_p(u, x.len(), y.len(), &ties), exact: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_exact_case() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert!((r.p_value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples() {
        let x = [1.0, 2.0, 2.0, 3.0];
        let r = mann_whitney_u(&x, &x).unwrap();
        assert_eq!(r.u, 8.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.exact);
    }

    #[test]
    fn empty() {
        assert_eq!(mann_whitney_u(&[], &[1.0]), Err(StatsError::EmptySample));
    }

    #[test]
    fn exact_counts_sum_to_binomial() {
        let c = exact_u_counts(6, 6);
        assert_eq!(c.iter().sum::<u64>(), 924);
        assert_eq!(c.len(), 37);
        // Symmetric around n_x n_y / 2.
        for u in 0..=36 {
            assert_eq!(c[u], c[36 - u]);
        }
    }

    #[test]
    fn normal_tracks_exact_at_six_per_group() {
        let x = [1.0, 3.0, 4.0, 8.0, 9.0, 12.0];
        let y = [2.0, 5.0, 6.0, 7.0, 10.0, 11.0];
        let e = mann_whitney_u(&x, &y).unwrap();
        let a = mann_whitney_u_normal(&x, &y).unwrap();
        assert!(e.exact);
        assert!((e.p_value - a.p_value).abs() < 0.02, "{} vs {}", e.p_value, a.p_value);
    }
}
