//! Positioning-error metrics: RMSE in meters, the empirical CDF of the
//! error distance, and report emission as CSV/JSON.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Root mean squared 2-D positioning error in meters:
/// `sqrt(mean((x_hat - x)^2 + (y_hat - y)^2))`.
pub fn rmse(preds: &[(f64, f64)], targets: &[(f64, f64)]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Contract(format!(
            "RMSE needs equal lengths, got {} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Contract("RMSE of an empty set".into()));
    }
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p.0 - t.0) * (p.0 - t.0) + (p.1 - t.1) * (p.1 - t.1))
        .sum();
    Ok((sum / preds.len() as f64).sqrt())
}

/// Empirical CDF: errors sorted ascending with probability i/N at the
/// i-th sorted value (1-based), so the final probability is exactly 1.
pub fn error_cdf(errors_m: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors_m.is_empty() {
        return Err(Error::Contract("CDF of an empty set".into()));
    }
    let mut sorted = errors_m.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e, (i + 1) as f64 / n))
        .collect())
}

/// Evaluation summary for one model on one dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse_m: f64,
    pub errors_m: Vec<f64>,
    /// Sorted (error_m, cumulative probability) pairs.
    pub cdf: Vec<(f64, f64)>,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn from_predictions(preds: &[(f64, f64)], targets: &[(f64, f64)]) -> Result<Self> {
        let rmse_m = rmse(preds, targets)?;
        let errors_m: Vec<f64> = preds
            .iter()
            .zip(targets)
            .map(|(p, t)| ((p.0 - t.0) * (p.0 - t.0) + (p.1 - t.1) * (p.1 - t.1)).sqrt())
            .collect();
        let cdf = error_cdf(&errors_m)?;
        Ok(Self {
            rmse_m,
            n_samples: errors_m.len(),
            cdf,
            errors_m,
        })
    }

    /// P(error > threshold), counted directly.
    pub fn exceedance(&self, threshold_m: f64) -> f64 {
        let over = self.errors_m.iter().filter(|&&e| e > threshold_m).count();
        over as f64 / self.n_samples as f64
    }
}

/// Side-by-side comparison of two reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSummary {
    /// RMSE of `a` divided by RMSE of `b`.
    pub rmse_ratio: f64,
    pub rmse_a_m: f64,
    pub rmse_b_m: f64,
    /// Per threshold: (threshold_m, P(err_a > t), P(err_b > t)).
    pub exceedances: Vec<(f64, f64, f64)>,
}

pub fn compare_reports(a: &EvalReport, b: &EvalReport, thresholds_m: &[f64]) -> ComparisonSummary {
    ComparisonSummary {
        rmse_ratio: if b.rmse_m > 0.0 {
            a.rmse_m / b.rmse_m
        } else if a.rmse_m == 0.0 {
            1.0
        } else {
            f64::INFINITY
        },
        rmse_a_m: a.rmse_m,
        rmse_b_m: b.rmse_m,
        exceedances: thresholds_m
            .iter()
            .map(|&t| (t, a.exceedance(t), b.exceedance(t)))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// JSON summary mirror of an [`EvalReport`] without the raw error list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub rmse_m: f64,
    pub n_samples: usize,
    pub exceedance: Vec<ExceedanceEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExceedanceEntry {
    pub threshold_m: f64,
    pub p_exceed: f64,
}

impl ReportSummary {
    pub fn new(report: &EvalReport, thresholds_m: &[f64]) -> Self {
        Self {
            rmse_m: report.rmse_m,
            n_samples: report.n_samples,
            exceedance: thresholds_m
                .iter()
                .map(|&t| ExceedanceEntry {
                    threshold_m: t,
                    p_exceed: report.exceedance(t),
                })
                .collect(),
        }
    }
}

/// Writes the CDF as `error_m,cdf_p` CSV rows.
pub fn write_cdf_csv(report: &EvalReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "error_m,cdf_p")?;
    for (e, p) in &report.cdf {
        writeln!(out, "{e},{p}")?;
    }
    Ok(())
}

/// Writes the summary JSON.
pub fn write_summary_json(
    report: &EvalReport,
    thresholds_m: &[f64],
    mut out: impl Write,
) -> Result<()> {
    let summary = ReportSummary::new(report, thresholds_m);
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Format(format!("summary serialization: {e}")))?;
    out.write_all(text.as_bytes())
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::Format(format!("summary write: {e}")))
}
