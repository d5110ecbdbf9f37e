//! Directory-level preprocessing: ingest, clean, average, align, lag.

use std::path::Path;
use std::time::Duration;

use super::frame::{add_lags, align, FeatureFrame};
use super::series::{clean, ingest_csv, temporal_average, CleanReport, CleaningRules};
use super::PARAMETERS;
use crate::error::{Error, Result};
use crate::synth::LinkMeta;

#[derive(Debug, Clone, PartialEq)]
pub struct PrepOptions {
    pub window: Duration,
    /// Row lags of `skr` to add; empty for none.
    pub lags: Vec<usize>,
    /// Constant `link_loss` column. Falls back to the directory's link
    /// metadata when `None`.
    pub link_loss: Option<f64>,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            window: Duration::from_secs(600),
            lags: vec![1, 2, 3],
            link_loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterReport {
    pub name: String,
    pub read: usize,
    pub cleaned: CleanReport,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepReport {
    pub parameters: Vec<ParameterReport>,
    /// Rows lost to the inner join on window timestamps.
    pub unaligned: usize,
    /// Leading rows dropped for missing lag history.
    pub lag_dropped: usize,
    pub rows: usize,
}

/// Prepares every `<parameter>.csv` found in `dir`.
///
/// `skr` is required only when lags are requested; parameters without a
/// file are skipped.
pub fn prepare_dir(dir: impl AsRef<Path>, opts: &PrepOptions) -> Result<(FeatureFrame, PrepReport)> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let mut series = Vec::new();
    let mut parameters = Vec::new();
    for name in PARAMETERS {
        let path = dir.join(format!("{name}.csv"));
        if !path.exists() {
            continue;
        }
        let raw = ingest_csv(&path)?;
        let (cleaned, report) = clean(&raw, &CleaningRules::for_parameter(name));
        let averaged = temporal_average(&cleaned, opts.window)?;
        parameters.push(ParameterReport {
            name: name.to_string(),
            read: raw.len(),
            cleaned: report,
            windows: averaged.len(),
        });
        series.push(averaged);
    }
    if series.is_empty() {
        return Err(Error::Empty(format!("no parameter CSVs in {}", dir.display())));
    }
    let mut frame = align(&series)?;
    let longest = series.iter().map(|s| s.len()).max().unwrap_or(0);
    let unaligned = longest - frame.len();

    let before = frame.len();
    if !opts.lags.is_empty() {
        frame = add_lags(&frame, "skr", &opts.lags)?;
    }
    let lag_dropped = before - frame.len();

    let link_loss = match opts.link_loss {
        Some(v) => Some(v),
        None => LinkMeta::load(dir)?.map(|m| m.link_loss),
    };
    if let Some(v) = link_loss {
        frame.set_column("link_loss", vec![v; frame.len()])?;
    }
    let rows = frame.len();
    Ok((
        frame,
        PrepReport {
            parameters,
            unaligned,
            lag_dropped,
            rows,
        },
    ))
}
