//! CSV coefficient tables, one row per (model, term).

use std::io::Write;

use serde::Serialize;

use super::RegressionResult;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow<'a> {
    pub model: &'a str,
    pub term: &'a str,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub se: f64,
    pub robust_se: Option<f64>,
    pub p_value: f64,
    pub n_obs: usize,
    pub n_groups: Option<usize>,
}

pub fn coefficient_rows<'a>(model: &'a str, r: &'a RegressionResult) -> Vec<CoefficientRow<'a>> {
    r.coefficients
        .iter()
        .map(|c| CoefficientRow {
            model,
            term: &c.name,
            estimate: c.estimate,
            ci_low: c.ci_low,
            ci_high: c.ci_high,
            se: c.se,
            robust_se: c.robust_se,
            p_value: c.p_value,
            n_obs: r.n_obs,
            n_groups: r.n_groups,
        })
        .collect()
}

pub fn write_coefficient_table<W: Write>(out: W, models: &[(&str, &RegressionResult)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (name, r) in models {
        for row in coefficient_rows(name, r) {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}
