//! z-score comparison of deterministic values with Monte Carlo estimates.

use serde::{Deserialize, Serialize};
use snlp_core::error::Error;
use snlp_core::stats::Estimate;

pub const Z_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandCheck {
    pub name: String,
    pub deterministic: f64,
    pub mc_mean: f64,
    pub mc_std_error: f64,
    /// `(deterministic − mc_mean)/mc_std_error`
    pub zscore: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub estimands: Vec<EstimandCheck>,
    pub all_pass: bool,
}

/// Pairs estimands by name; both sets must name the same estimands.
pub fn verify_report(deterministic: &[(String, f64)], mc: &[(String, Estimate)]) -> Result<VerifyReport, Error> {
    if mc.is_empty() || deterministic.is_empty() {
        return Err(Error::EstimandMismatch("no estimands to compare".into()));
    }
    if deterministic.len() != mc.len() {
        return Err(Error::EstimandMismatch(format!(
            "{} deterministic vs {} Monte Carlo estimands",
            deterministic.len(),
            mc.len()
        )));
    }
    let mut estimands = Vec::with_capacity(mc.len());
    for (name, det) in deterministic {
        let est = mc
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::EstimandMismatch(format!("no Monte Carlo estimate for `{name}`")))?;
        let zscore = if est.std_error > 0.0 {
            (det - est.mean) / est.std_error
        } else if *det == est.mean {
            0.0
        } else {
            (det - est.mean).signum() * f64::INFINITY
        };
        estimands.push(EstimandCheck {
            name: name.clone(),
            deterministic: *det,
            mc_mean: est.mean,
            mc_std_error: est.std_error,
            zscore,
            pass: zscore.abs() < Z_LIMIT,
        });
    }
    Ok(VerifyReport {
        all_pass: estimands.iter().all(|e| e.pass),
        estimands,
    })
}
