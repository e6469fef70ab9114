//! Random-intercept linear mixed model fitted by restricted maximum
//! likelihood.
//!
//! With `λ = σ²_u / σ²_ε` and `V = σ²_ε (I + λ Z Z')`, the per-group inverse
//! is `I - w_i 1 1'` with `w_i = λ / (1 + n_i λ)`, so every quantity the
//! profiled REML deviance needs reduces to per-group sufficient statistics.
//! The deviance is minimized over `log λ` by golden-section search.

use nalgebra::{DMatrix, DVector};

use super::ols::{INTERCEPT, TREATMENT};
use super::{check_len, Coefficient, RegressionResult, StatsError};

pub const LOG_LAMBDA_RANGE: (f64, f64) = (-12.0, 12.0);
pub const LOG_LAMBDA_TOL: f64 = 1e-8;

/// One group's rows and responses.
#[derive(Debug, Clone)]
pub struct LmmGroup {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

/// A participant with group-constant covariates and repeated responses.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupObs {
    pub treatment: f64,
    pub covariates: Vec<f64>,
    pub responses: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Suff {
    n: f64,
    xtx: DMatrix<f64>,
    xt1: DVector<f64>,
    xty: DVector<f64>,
    sum_y: f64,
    yty: f64,
}

#[derive(Debug, Clone)]
pub struct LmmProblem {
    names: Vec<String>,
    groups: Vec<Suff>,
    n_obs: usize,
    p: usize,
}

struct Evaluation {
    deviance: f64,
    a: DMatrix<f64>,
    beta: DVector<f64>,
    q: f64,
}

impl LmmProblem {
    pub fn from_groups(groups: &[LmmGroup], names: &[String]) -> Result<Self, StatsError> {
        let p = names.len();
        let mut suff = Vec::new();
        for g in groups.iter().filter(|g| !g.y.is_empty()) {
            check_len("group rows", g.y.len(), g.x.nrows())?;
            check_len("group columns", p, g.x.ncols())?;
            let y = DVector::from_column_slice(&g.y);
            suff.push(Suff {
                n: g.y.len() as f64,
                xtx: g.x.tr_mul(&g.x),
                xt1: g.x.row_sum().transpose(),
                xty: g.x.tr_mul(&y),
                sum_y: y.sum(),
                yty: y.norm_squared(),
            });
        }
        Self::new(suff, names)
    }

    /// Groups whose rows share one covariate vector `x`.
    pub fn from_constant_rows(groups: &[(Vec<f64>, Vec<f64>)], names: &[String]) -> Result<Self, StatsError> {
        let p = names.len();
        let mut suff = Vec::new();
        for (x, y) in groups.iter().filter(|g| !g.1.is_empty()) {
            check_len("group covariates", p, x.len())?;
            let xv = DVector::from_column_slice(x);
            let n = y.len() as f64;
            let sum_y: f64 = y.iter().sum();
            suff.push(Suff {
                n,
                xtx: &xv * xv.transpose() * n,
                xt1: &xv * n,
                xty: &xv * sum_y,
                sum_y,
                yty: y.iter().map(|v| v * v).sum(),
            });
        }
        Self::new(suff, names)
    }

    fn new(groups: Vec<Suff>, names: &[String]) -> Result<Self, StatsError> {
        if groups.len() < 2 {
            return Err(StatsError::DegenerateDesign(format!("{} groups with responses", groups.len())));
        }
        let n_obs = groups.iter().map(|g| g.n as usize).sum::<usize>();
        let p = names.len();
        if n_obs <= p {
            return Err(StatsError::DegenerateDesign(format!("{n_obs} observations for {p} coefficients")));
        }
        let problem = LmmProblem { names: names.to_vec(), groups, n_obs, p };
        let xtx: DMatrix<f64> = problem.groups.iter().fold(DMatrix::zeros(p, p), |acc, g| acc + &g.xtx);
        super::ols::gram_inverse(&xtx)?;
        Ok(problem)
    }

    fn evaluate(&self, lambda: f64) -> Option<Evaluation> {
        let p = self.p;
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        let mut yvy = 0.0;
        let mut logdet_v = 0.0;
        for g in &self.groups {
            let w = lambda / (1.0 + g.n * lambda);
            a += &g.xtx - (&g.xt1 * g.xt1.transpose()) * w;
            b += &g.xty - &g.xt1 * (w * g.sum_y);
            yvy += g.yty - w * g.sum_y * g.sum_y;
            logdet_v += (g.n * lambda).ln_1p();
        }
        let ch = a.clone().cholesky()?;
        let beta = ch.solve(&b);
        let q = yvy - b.dot(&beta);
        if !(q > 0.0) {
            return None;
        }
        let logdet_a = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let deviance = (self.n_obs - p) as f64 * q.ln() + logdet_v + logdet_a;
        Some(Evaluation { deviance, a, beta, q })
    }

    /// Profiled REML deviance (up to a constant) at variance ratio `lambda`.
    pub fn deviance(&self, lambda: f64) -> f64 {
        self.evaluate(lambda).map_or(f64::INFINITY, |e| e.deviance)
    }

    /// Restricted log-likelihood at variance ratio `lambda`.
    pub fn log_likelihood(&self, lambda: f64) -> f64 {
        let df = (self.n_obs - self.p) as f64;
        -0.5 * (self.deviance(lambda) + df * (1.0 + (2.0 * std::f64::consts::PI).ln() - df.ln()))
    }

    pub fn fit(&self) -> Result<RegressionResult, StatsError> {
        let dev = |theta: f64| self.deviance(theta.exp());
        let (lo, hi) = LOG_LAMBDA_RANGE;
        let theta = golden_section(dev, lo, hi, LOG_LAMBDA_TOL);
        // The boundary σ²_u = 0 lies outside the log scale; prefer it on ties.
        let lambda = if dev(theta) < self.deviance(0.0) - 1e-10 { theta.exp() } else { 0.0 };
        let eval = self
            .evaluate(lambda)
            .ok_or_else(|| StatsError::DegenerateDesign("residual sum of squares is zero".into()))?;

        let df = (self.n_obs - self.p) as f64;
        let sigma2_e = eval.q / df;
        let cov = eval.a.try_inverse().ok_or(StatsError::RankDeficient)? * sigma2_e;
        let coefficients = self
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| Coefficient::new(name.clone(), eval.beta[j], cov[(j, j)].max(0.0).sqrt(), None))
            .collect();
        let result = RegressionResult {
            coefficients,
            n_obs: self.n_obs,
            n_groups: Some(self.groups.len()),
            sigma2_u: Some(lambda * sigma2_e),
            sigma2_e: Some(sigma2_e),
            log_likelihood: Some(self.log_likelihood(lambda)),
        };
        if hi - theta < 1e-6 {
            return Err(StatsError::NonConvergence(Box::new(result)));
        }
        Ok(result)
    }
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd { c } else { d }
}

/// Fit `y ~ X + (1 | group)`.
pub fn lmm_fit(groups: &[LmmGroup], names: &[String]) -> Result<RegressionResult, StatsError> {
    LmmProblem::from_groups(groups, names)?.fit()
}

/// `y_ij = β₀ + β₁ treat_i + covariates_i + u_i + ε_ij`.
pub fn lmm_ate(groups: &[GroupObs], covariate_names: &[&str]) -> Result<RegressionResult, StatsError> {
    lmm_problem(groups, covariate_names)?.fit()
}

pub fn lmm_problem(groups: &[GroupObs], covariate_names: &[&str]) -> Result<LmmProblem, StatsError> {
    let mut names = vec![INTERCEPT.to_string(), TREATMENT.to_string()];
    names.extend(covariate_names.iter().map(|s| s.to_string()));
    let rows = groups
        .iter()
        .map(|g| {
            check_len("covariates", covariate_names.len(), g.covariates.len())?;
            let mut x = vec![1.0, g.treatment];
            x.extend(&g.covariates);
            Ok((x, g.responses.clone()))
        })
        .collect::<Result<Vec<_>, StatsError>>()?;
    LmmProblem::from_constant_rows(&rows, &names)
}
