//! Factor co-occurrence and a one-sample uniformity test.

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::model::{AapaScore, Factor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cooccurrence {
    /// Pearson correlation of factor indicators; `None` in the rows and
    /// columns of constant factors.
    pub corr: [[Option<f64>; 8]; 8],
    pub zero_variance: Vec<Factor>,
}

pub fn factor_cooccurrence(scores: &[AapaScore]) -> Result<Cooccurrence, StatsError> {
    if scores.len() < 2 {
        return Err(StatsError::InsufficientData(format!("{} scored posts", scores.len())));
    }
    let n = scores.len() as f64;
    let col = |f: usize| scores.iter().map(move |s| s.factors[f] as u8 as f64);
    let means: Vec<f64> = (0..8).map(|f| col(f).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..8).map(|f| col(f).map(|v| (v - means[f]).powi(2)).sum::<f64>().sqrt()).collect();
    let mut corr = [[None; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            if sd[i] > 0.0 && sd[j] > 0.0 {
                let cov: f64 = col(i).zip(col(j)).map(|(a, b)| (a - means[i]) * (b - means[j])).sum();
                corr[i][j] = Some(if i == j { 1.0 } else { cov / (sd[i] * sd[j]) });
            }
        }
    }
    let zero_variance = Factor::ALL.iter().copied().filter(|f| sd[f.index()] == 0.0).collect();
    Ok(Cooccurrence { corr, zero_variance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{k-1} e^{-2 k² λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test against U(0, 1) with the asymptotic p-value
/// (Stephens' small-sample adjustment).
pub fn ks_uniform(sample: &[f64]) -> Result<KsResult, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let p_value = kolmogorov_q((sqrt_n + 0.12 + 0.11 / sqrt_n) * d);
    Ok(KsResult { d, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_and_duplicates() {
        let mut scores = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let mut bits: u8 = rng.random();
            bits &= !0x80; // v8 never expressed
            let v2 = bits & 0x02 != 0;
            bits = if v2 { bits | 0x04 } else { bits & !0x04 }; // v3 = v2
            scores.push(AapaScore::from_bits(bits, true));
        }
        let c = factor_cooccurrence(&scores).unwrap();
        for i in 0..7 {
            assert_eq!(c.corr[i][i], Some(1.0));
        }
        assert!((c.corr[1][2].unwrap() - 1.0).abs() < 1e-12);
        assert!(c.corr[0][3].unwrap().abs() < 0.15);
        assert_eq!(c.corr[7][0], None);
        assert_eq!(c.zero_variance, vec![Factor::ALL[7]]);
        assert!(factor_cooccurrence(&scores[..1]).is_err());
    }

    #[test]
    fn ks_accepts_uniform_and_rejects_skew() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        assert!(ks_uniform(&u).unwrap().p_value > 0.01);
        let skew: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&skew).unwrap().p_value < 1e-6);
        assert!((kolmogorov_q(1.36) - 0.049).abs() < 0.002);
    }
}
