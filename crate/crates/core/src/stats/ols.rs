//! Least squares with classical and HC2 covariance, plus the specifications
//! built on it.

use nalgebra::{DMatrix, DVector};

use super::{check_len, mean, Coefficient, RegressionResult, StatsError};
use crate::model::Factor;

/// Smallest eigenvalue of the column-normalized Gram matrix, relative to
/// the largest, below which a design counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

pub const INTERCEPT: &str = "(Intercept)";
pub const TREATMENT: &str = "treatment";

#[derive(Debug, Clone, Copy)]
pub struct Covariate<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

impl<'a> Covariate<'a> {
    pub fn new(name: &'a str, values: &'a [f64]) -> Self {
        Covariate { name, values }
    }
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub classical_cov: DMatrix<f64>,
    pub robust_cov: DMatrix<f64>,
    pub n_obs: usize,
}

/// Inverse of a symmetric Gram matrix, or `RankDeficient`.
pub(crate) fn gram_inverse(xtx: &DMatrix<f64>) -> Result<DMatrix<f64>, StatsError> {
    let p = xtx.nrows();
    let mut scale = DVector::zeros(p);
    for j in 0..p {
        let d = xtx[(j, j)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(StatsError::RankDeficient);
        }
        scale[j] = 1.0 / d.sqrt();
    }
    let scaled = DMatrix::from_fn(p, p, |i, j| xtx[(i, j)] * scale[i] * scale[j]);
    let eig = scaled.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > RANK_TOL * max) {
        return Err(StatsError::RankDeficient);
    }
    let inv_scaled = scaled.cholesky().ok_or(StatsError::RankDeficient)?.inverse();
    Ok(DMatrix::from_fn(p, p, |i, j| inv_scaled[(i, j)] * scale[i] * scale[j]))
}

/// Fit `y ~ X`. Requires more observations than columns.
pub fn ols(y: &[f64], x: &DMatrix<f64>, names: &[String]) -> Result<OlsFit, StatsError> {
    let (n, p) = x.shape();
    check_len("y", n, y.len())?;
    check_len("names", p, names.len())?;
    if n <= p {
        return Err(StatsError::InsufficientData(format!("{n} observations for {p} coefficients")));
    }
    let xtx = x.tr_mul(x);
    let inv = gram_inverse(&xtx)?;
    let yv = DVector::from_column_slice(y);
    let beta = &inv * x.tr_mul(&yv);
    let residuals = &yv - x * &beta;

    let s2 = residuals.norm_squared() / (n - p) as f64;
    let classical_cov = &inv * s2;

    // HC2: weight each squared residual by 1 / (1 - leverage).
    let xinv = x * &inv;
    let mut weighted = x.clone();
    for i in 0..n {
        let h = xinv.row(i).dot(&x.row(i));
        let w = residuals[i].powi(2) / (1.0 - h).max(1e-12);
        weighted.row_mut(i).scale_mut(w.sqrt());
    }
    let meat = weighted.tr_mul(&weighted);
    let robust_cov = &inv * meat * &inv;

    Ok(OlsFit { names: names.to_vec(), beta, residuals, classical_cov, robust_cov, n_obs: n })
}

impl OlsFit {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Coefficient table; intervals and p-values use the HC2 errors.
    pub fn result(&self) -> RegressionResult {
        let coefficients = self
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                Coefficient::new(
                    name.clone(),
                    self.beta[j],
                    self.classical_cov[(j, j)].max(0.0).sqrt(),
                    Some(self.robust_cov[(j, j)].max(0.0).sqrt()),
                )
            })
            .collect();
        RegressionResult {
            coefficients,
            n_obs: self.n_obs,
            n_groups: None,
            sigma2_u: None,
            sigma2_e: None,
            log_likelihood: None,
        }
    }

    /// HC2 Wald statistic for the joint hypothesis that the listed
    /// coefficients are zero. A singular covariance gives 0 when the
    /// coefficients vanish and +inf otherwise.
    pub fn robust_wald(&self, idx: &[usize]) -> f64 {
        let b = DVector::from_iterator(idx.len(), idx.iter().map(|&j| self.beta[j]));
        let v = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.robust_cov[(idx[r], idx[c])]);
        match v.cholesky() {
            Some(ch) => b.dot(&ch.solve(&b)),
            None if b.amax() < 1e-12 => 0.0,
            None => f64::INFINITY,
        }
    }
}

/// Design matrix from an intercept plus named columns.
pub(crate) fn design(n: usize, columns: &[(String, &[f64])]) -> Result<(DMatrix<f64>, Vec<String>), StatsError> {
    for (name, col) in columns {
        check_len(name, n, col.len())?;
    }
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(columns.iter().map(|(n, _)| n.clone()));
    let x = DMatrix::from_fn(n, columns.len() + 1, |i, j| if j == 0 { 1.0 } else { columns[j - 1].1[i] });
    Ok((x, names))
}

fn covariate_columns<'a>(covariates: &[Covariate<'a>]) -> Vec<(String, &'a [f64])> {
    covariates.iter().map(|c| (c.name.to_string(), c.values)).collect()
}

/// `outcome ~ 1 + treatment + covariates`.
pub fn ols_ate(outcome: &[f64], treatment: &[f64], covariates: &[Covariate]) -> Result<RegressionResult, StatsError> {
    if outcome.len() < 4 {
        return Err(StatsError::InsufficientData(format!("{} observations", outcome.len())));
    }
    let mut cols = vec![(TREATMENT.to_string(), treatment)];
    cols.extend(covariate_columns(covariates));
    let (x, names) = design(outcome.len(), &cols)?;
    Ok(ols(outcome, &x, &names)?.result())
}

/// Predict a missing baseline from the pre-survey answer with a line fitted
/// on other participants. A constant pre-survey predicts the mean.
pub fn impute_baseline(target_pre: f64, others: &[(f64, f64)]) -> Result<f64, StatsError> {
    if others.len() < 2 {
        return Err(StatsError::InsufficientData(format!("{} reference participants", others.len())));
    }
    let xs: Vec<f64> = others.iter().map(|o| o.0).collect();
    let ys: Vec<f64> = others.iter().map(|o| o.1).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Ok(my);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(my + slope * (target_pre - mx))
}

pub const INTERACTION: &str = "treatment:moderator";
pub const MODERATOR: &str = "moderator";

/// Main specification plus a treatment-by-moderator interaction.
pub fn hte(
    outcome: &[f64],
    treatment: &[f64],
    moderator: &[f64],
    covariates: &[Covariate],
) -> Result<RegressionResult, StatsError> {
    let n = outcome.len();
    check_len(TREATMENT, n, treatment.len())?;
    check_len(MODERATOR, n, moderator.len())?;
    let levels = |arm: bool| {
        let mut v: Vec<f64> = moderator
            .iter()
            .zip(treatment)
            .filter(|(_, t)| (**t != 0.0) == arm)
            .map(|(m, _)| *m)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if levels(true) < 2 || levels(false) < 2 {
        return Err(StatsError::DegenerateModerator);
    }
    let inter: Vec<f64> = treatment.iter().zip(moderator).map(|(t, m)| t * m).collect();
    let mut cols = vec![
        (TREATMENT.to_string(), treatment),
        (MODERATOR.to_string(), moderator),
        (INTERACTION.to_string(), inter.as_slice()),
    ];
    cols.extend(covariate_columns(covariates));
    let (x, names) = design(n, &cols)?;
    Ok(ols(outcome, &x, &names)?.result())
}

/// One regression per factor: `post ~ 1 + pre + fraction_vn`. The fraction
/// coefficient is the predicted change when every viewed political post
/// expresses the factor.
pub fn factor_contribution(
    post_rating: &[f64],
    pre_rating: &[f64],
    fractions: &[[f64; 8]],
) -> Result<Vec<(Factor, Result<RegressionResult, StatsError>)>, StatsError> {
    let n = post_rating.len();
    check_len("pre_rating", n, pre_rating.len())?;
    check_len("fractions", n, fractions.len())?;
    if let Some(bad) = fractions.iter().flatten().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(StatsError::InvalidFraction(*bad));
    }
    Ok(Factor::ALL
        .iter()
        .map(|&f| {
            let col: Vec<f64> = fractions.iter().map(|row| row[f.index()]).collect();
            let name = format!("fraction_{}", f.label());
            let cols = [("pre_rating".to_string(), pre_rating), (name, col.as_slice())];
            let fit = design(n, &cols).and_then(|(x, names)| ols(post_rating, &x, &names)).map(|f| f.result());
            (f, fit)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn four_point_example() {
        let r = ols_ate(&[0.0, 1.0, 10.0, 11.0], &[0.0, 0.0, 1.0, 1.0], &[]).unwrap();
        assert!((r.estimate(TREATMENT).unwrap() - 10.0).abs() < 1e-12);
        assert!((r.estimate(INTERCEPT).unwrap() - 0.5).abs() < 1e-12);
        // Residuals ±0.5, leverage 0.5: HC2 variance of the difference is 0.5.
        let t = r.coef(TREATMENT).unwrap();
        assert!((t.robust_se.unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_arms_give_zero_effect() {
        let y = [3.0, 5.0, 3.0, 5.0];
        let t = [0.0, 0.0, 1.0, 1.0];
        let pre = [1.0, 2.0, 1.0, 2.0];
        let r = ols_ate(&y, &t, &[Covariate::new("pre", &pre)]).unwrap();
        assert!(r.estimate(TREATMENT).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = [0.0, 1.0, 0.0, 1.0, 0.0];
        let pre = [7.0; 5];
        assert_eq!(ols_ate(&y, &t, &[Covariate::new("pre", &pre)]), Err(StatsError::RankDeficient));
        assert!(matches!(ols_ate(&y[..3], &t[..3], &[]), Err(StatsError::InsufficientData(_))));
    }

    #[test]
    fn matches_lu_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() });
        let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let fit = ols(&y, &x, &names).unwrap();
        let direct = x.tr_mul(&x).lu().solve(&x.tr_mul(&DVector::from_vec(y))).unwrap();
        assert!((fit.beta - direct).amax() < 1e-10);
    }

    #[test]
    fn imputation() {
        let ident = [(10.0, 10.0), (50.0, 50.0), (70.0, 70.0)];
        assert!((impute_baseline(33.0, &ident).unwrap() - 33.0).abs() < 1e-12);
        let line: Vec<_> = [0.0, 20.0, 90.0].iter().map(|p| (*p, 0.5 * p + 10.0)).collect();
        assert!((impute_baseline(60.0, &line).unwrap() - 40.0).abs() < 1e-12);
        assert!(matches!(impute_baseline(1.0, &[(1.0, 2.0)]), Err(StatsError::InsufficientData(_))));
        assert_eq!(impute_baseline(5.0, &[(1.0, 2.0), (1.0, 4.0)]).unwrap(), 3.0);
    }

    #[test]
    fn moderator_copy_of_treatment_is_degenerate() {
        let t = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(hte(&y, &t, &t, &[]), Err(StatsError::DegenerateModerator));
    }

    #[test]
    fn constant_fraction_is_rank_deficient() {
        let post = [1.0, 2.0, 3.0, 5.0, 4.0];
        let pre = [1.0, 1.5, 3.0, 4.0, 4.0];
        let mut fr = vec![[0.5; 8]; 5];
        for (i, row) in fr.iter_mut().enumerate() {
            row[0] = i as f64 / 10.0;
        }
        let res = factor_contribution(&post, &pre, &fr).unwrap();
        assert!(res[0].1.is_ok());
        assert_eq!(res[1].1, Err(StatsError::RankDeficient));
        fr[0][3] = 1.5;
        assert_eq!(factor_contribution(&post, &pre, &fr).unwrap_err(), StatsError::InvalidFraction(1.5));
    }

    #[test]
    fn wald_on_singular_cov() {
        // Perfect fit: zero residuals make the robust covariance vanish.
        let x = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let names = vec!["a".to_string(), "b".to_string()];
        let fit = ols(&[1.0, 3.0, 5.0, 7.0], &x, &names).unwrap();
        assert!(fit.robust_wald(&[1]) > 1e12);
        let flat = ols(&[2.0; 4], &x, &names).unwrap();
        assert_eq!(flat.robust_wald(&[1]), 0.0);
    }
}
