//! Prediction error metrics. ME, MAE and MRE are computed on raw bits/s;
//! MSE on min-max scaled values so links with different rates compare.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Mean of `pred - meas`, bits/s.
    pub me: f64,
    /// Mean of `|pred - meas|`, bits/s.
    pub mae: f64,
    /// Signed mean of `(pred - meas) / meas`; `None` if any measured value is 0.
    pub mre: Option<f64>,
    /// Mean squared error in scaled units.
    pub mse: f64,
    pub n: usize,
}

pub fn compute(
    measured_raw: &[f64],
    predicted_raw: &[f64],
    measured_scaled: &[f64],
    predicted_scaled: &[f64],
) -> Result<ErrorReport> {
    let n = measured_raw.len();
    if n == 0 {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    if predicted_raw.len() != n || measured_scaled.len() != n || predicted_scaled.len() != n {
        return Err(Error::Shape("metric inputs differ in length".into()));
    }
    let nf = n as f64;
    let diffs = predicted_raw.iter().zip(measured_raw).map(|(p, m)| p - m);
    let me = diffs.clone().sum::<f64>() / nf;
    let mae = diffs.map(f64::abs).sum::<f64>() / nf;
    let mre = if measured_raw.contains(&0.0) {
        log::warn!("measured value of 0 present; MRE omitted");
        None
    } else {
        Some(
            predicted_raw
                .iter()
                .zip(measured_raw)
                .map(|(p, m)| (p - m) / m)
                .sum::<f64>()
                / nf,
        )
    };
    let mse = measured_scaled
        .iter()
        .zip(predicted_scaled)
        .map(|(m, p)| (m - p) * (m - p))
        .sum::<f64>()
        / nf;
    Ok(ErrorReport { me, mae, mre, mse, n })
}

/// One row of an error table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub link: String,
    pub model: String,
    #[serde(flatten)]
    pub report: ErrorReport,
}

pub const REPORT_HEADER: [&str; 7] = ["link", "model", "me", "mae", "mre", "mse", "n"];

/// Writes `link,model,me,mae,mre,mse,n` rows; an omitted MRE is an empty cell.
pub fn write_report_csv(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(REPORT_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.link.clone(),
            r.model.clone(),
            r.report.me.to_string(),
            r.report.mae.to_string(),
            r.report.mre.map(|v| v.to_string()).unwrap_or_default(),
            r.report.mse.to_string(),
            r.report.n.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
