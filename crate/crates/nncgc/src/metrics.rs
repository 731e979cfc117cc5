//! Evaluation metrics: root-PEHE, absolute ATE error, ATT error on
//! experimental subsamples, and constrained/unconstrained ratio summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: predictions {got}, ground truth {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("metric needs at least one row")]
    Empty,
    #[error("dataset has no experimental-sample flags")]
    MissingExpFlag,
    #[error("experimental subset has an empty {0} arm")]
    EmptyArm(&'static str),
    #[error("ratio needs non-empty report lists")]
    EmptyReports,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Test,
}

impl std::fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitLabel::Train => write!(f, "train"),
            SplitLabel::Test => write!(f, "test"),
        }
    }
}

/// Per-replication evaluation result on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sqrt_pehe: Option<f64>,
    pub ate_error: Option<f64>,
    pub att_error: Option<f64>,
    pub n_eval: usize,
    pub split: SplitLabel,
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    if a != b {
        return Err(MetricsError::LengthMismatch { expected: b, got: a });
    }
    Ok(())
}

/// sqrt( mean_i (ite_hat_i - (mu1_i - mu0_i))^2 ).
pub fn sqrt_pehe(ite_hat: &[f64], mu1: &[f64], mu0: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(ite_hat.len(), mu1.len())?;
    check_lengths(mu1.len(), mu0.len())?;
    let n = ite_hat.len() as f64;
    let sum: f64 = ite_hat
        .iter()
        .zip(mu1.iter().zip(mu0))
        .map(|(ih, (m1, m0))| {
            let err = ih - (m1 - m0);
            err * err
        })
        .sum();
    Ok((sum / n).sqrt())
}

/// |mean(ite_hat) - mean(mu1 - mu0)|.
pub fn ate_error(ite_hat: &[f64], mu1: &[f64], mu0: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(ite_hat.len(), mu1.len())?;
    check_lengths(mu1.len(), mu0.len())?;
    let n = ite_hat.len() as f64;
    let pred: f64 = ite_hat.iter().sum::<f64>() / n;
    let truth: f64 = mu1.iter().zip(mu0).map(|(a, b)| a - b).sum::<f64>() / n;
    Ok((pred - truth).abs())
}

/// ATT error against the experimental subsample: the ground-truth effect
/// on the treated is the experimental treated/control outcome difference,
/// the estimate is the mean predicted effect over treated experimental
/// rows.
pub fn att_error(ds: &Dataset, ite_hat: &[f64]) -> Result<f64, MetricsError> {
    let flags = ds.exp_flag.as_ref().ok_or(MetricsError::MissingExpFlag)?;
    check_lengths(ite_hat.len(), ds.len())?;
    let mut treated_sum = 0.0;
    let mut treated_n = 0usize;
    let mut control_sum = 0.0;
    let mut control_n = 0usize;
    let mut pred_sum = 0.0;
    for i in 0..ds.len() {
        if flags[i] == 0 {
            continue;
        }
        if ds.t[i] == 1 {
            treated_sum += ds.y[i];
            treated_n += 1;
            pred_sum += ite_hat[i];
        } else {
            control_sum += ds.y[i];
            control_n += 1;
        }
    }
    if treated_n == 0 {
        return Err(MetricsError::EmptyArm("treated"));
    }
    if control_n == 0 {
        return Err(MetricsError::EmptyArm("control"));
    }
    let att_true = treated_sum / treated_n as f64 - control_sum / control_n as f64;
    let att_hat = pred_sum / treated_n as f64;
    Ok((att_true - att_hat).abs())
}

/// Mean-over-replications ratios between a constrained and an
/// unconstrained report list. A zero denominator leaves the ratio
/// undefined rather than infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub sqrt_pehe: Option<f64>,
    pub ate_error: Option<f64>,
    pub att_error: Option<f64>,
    pub replications: usize,
}

pub fn ratio_report(
    constrained: &[EvalReport],
    unconstrained: &[EvalReport],
) -> Result<RatioReport, MetricsError> {
    if constrained.is_empty() || unconstrained.is_empty() {
        return Err(MetricsError::EmptyReports);
    }
    let ratio = |f: fn(&EvalReport) -> Option<f64>| -> Option<f64> {
        let c: Vec<f64> = constrained.iter().filter_map(f).collect();
        let u: Vec<f64> = unconstrained.iter().filter_map(f).collect();
        if c.is_empty() || u.is_empty() {
            return None;
        }
        let mc = c.iter().sum::<f64>() / c.len() as f64;
        let mu = u.iter().sum::<f64>() / u.len() as f64;
        (mu != 0.0).then(|| mc / mu)
    };
    Ok(RatioReport {
        sqrt_pehe: ratio(|r| r.sqrt_pehe),
        ate_error: ratio(|r| r.ate_error),
        att_error: ratio(|r| r.att_error),
        replications: constrained.len().min(unconstrained.len()),
    })
}

/// Sample mean, standard deviation (n-1) and standard error of the mean.
pub fn mean_sd_sem(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    (mean, sd, sd / (n as f64).sqrt())
}
