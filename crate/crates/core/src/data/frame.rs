use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::series::TimeSeries;
use crate::error::{Error, Result};

/// Aligned, equal-length named columns on a shared time grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureFrame {
    pub timestamps: Vec<DateTime<Utc>>,
    columns: Vec<(String, Vec<f64>)>,
    /// Present once the frame holds scaled values.
    pub scaler: Option<MinMaxScaler>,
}

impl FeatureFrame {
    pub fn new(timestamps: Vec<DateTime<Utc>>) -> Self {
        FeatureFrame {
            timestamps,
            columns: Vec::new(),
            scaler: None,
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|(n, _)| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn column_mut(&mut self, name: &str) -> Result<&mut Vec<f64>> {
        self.columns
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Adds or replaces a column.
    pub fn set_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "column `{name}` has {} rows, frame has {}",
                values.len(),
                self.len()
            )));
        }
        match self.columns.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => *v = values,
            None => self.columns.push((name, values)),
        }
        Ok(())
    }

    pub fn drop_column(&mut self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        Ok(self.columns.remove(idx).1)
    }

    /// Rows `range` of every column.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> FeatureFrame {
        FeatureFrame {
            timestamps: self.timestamps[range.clone()].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|(n, v)| (n.clone(), v[range.clone()].to_vec()))
                .collect(),
            scaler: self.scaler.clone(),
        }
    }

    /// Rows in the order given by `indices`.
    pub fn take_rows(&self, indices: &[usize]) -> FeatureFrame {
        FeatureFrame {
            timestamps: indices.iter().map(|&i| self.timestamps[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|(n, v)| (n.clone(), indices.iter().map(|&i| v[i]).collect()))
                .collect(),
            scaler: self.scaler.clone(),
        }
    }

    /// Stacks frames that share the same column set (order may differ).
    pub fn concat(frames: &[FeatureFrame]) -> Result<FeatureFrame> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Empty("no frames to concatenate".into()))?;
        let mut out = FeatureFrame::new(Vec::new());
        out.columns = first.columns.iter().map(|(n, _)| (n.clone(), Vec::new())).collect();
        for f in frames {
            if f.columns.len() != first.columns.len() {
                return Err(Error::Shape("frames have different column sets".into()));
            }
            out.timestamps.extend_from_slice(&f.timestamps);
            for (name, values) in out.columns.iter_mut() {
                values.extend_from_slice(f.column(name)?);
            }
        }
        Ok(out)
    }

    /// Writes `timestamp,<col>...` with RFC 3339 timestamps.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (i, t) in self.timestamps.iter().enumerate() {
            let mut row = vec![t.to_rfc3339_opts(SecondsFormat::AutoSi, true)];
            row.extend(self.columns.iter().map(|(_, v)| v[i].to_string()));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<FeatureFrame> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.get(0) != Some("timestamp") {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "first column must be `timestamp`".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut timestamps = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            let t = DateTime::parse_from_rfc3339(&rec[0])
                .map_err(|e| bad(format!("bad timestamp `{}`: {e}", &rec[0])))?;
            timestamps.push(t.with_timezone(&Utc));
            for (j, col) in cols.iter_mut().enumerate() {
                let cell = rec.get(j + 1).ok_or_else(|| bad("missing cell".into()))?;
                col.push(cell.parse().map_err(|e| bad(format!("bad number `{cell}`: {e}")))?);
            }
        }
        let mut frame = FeatureFrame::new(timestamps);
        frame.columns = names.into_iter().zip(cols).collect();
        Ok(frame)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Inner join on timestamps; each series becomes a column named after it.
pub fn align(series: &[TimeSeries]) -> Result<FeatureFrame> {
    if series.is_empty() {
        return Err(Error::Empty("no series to align".into()));
    }
    let mut rows: BTreeMap<DateTime<Utc>, Vec<Option<f64>>> = BTreeMap::new();
    for (j, s) in series.iter().enumerate() {
        for sample in &s.samples {
            rows.entry(sample.time).or_insert_with(|| vec![None; series.len()])[j] = Some(sample.value);
        }
    }
    let mut timestamps = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); series.len()];
    for (t, row) in rows {
        if row.iter().all(Option::is_some) {
            timestamps.push(t);
            for (col, v) in cols.iter_mut().zip(row) {
                col.push(v.unwrap());
            }
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Empty("aligned frame has no common timestamps".into()));
    }
    let mut frame = FeatureFrame::new(timestamps);
    frame.columns = series.iter().map(|s| s.name.clone()).zip(cols).collect();
    Ok(frame)
}

pub fn lag_column_name(column: &str, lag: usize) -> String {
    format!("{column}_lag{lag}")
}

/// Adds `<column>_lag<k>` holding the value `k` rows earlier, then drops the
/// first `max(lags)` rows, which have no complete history.
pub fn add_lags(frame: &FeatureFrame, column: &str, lags: &[usize]) -> Result<FeatureFrame> {
    let max_lag = *lags
        .iter()
        .max()
        .ok_or_else(|| Error::Config("no lags given".into()))?;
    if lags.contains(&0) {
        return Err(Error::Config("lags must be positive".into()));
    }
    let source = frame.column(column)?.to_vec();
    if frame.len() <= max_lag {
        return Err(Error::Shape(format!(
            "frame has {} rows, lag {max_lag} needs at least {}",
            frame.len(),
            max_lag + 1
        )));
    }
    let mut out = frame.slice_rows(max_lag..frame.len());
    for &k in lags {
        let lagged = source[max_lag - k..frame.len() - k].to_vec();
        out.set_column(lag_column_name(column, k), lagged)?;
    }
    Ok(out)
}

/// Per-column `(min, max)` learnt from a training frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Min-max scaler. Values outside the fitted range map outside `[0, 1]`;
/// nothing is clamped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub columns: Vec<ColumnRange>,
}

impl MinMaxScaler {
    pub fn fit(frame: &FeatureFrame, columns: &[&str]) -> Result<Self> {
        let mut ranges = Vec::with_capacity(columns.len());
        for &name in columns {
            let values = frame.column(name)?;
            if values.is_empty() {
                return Err(Error::Empty(format!("column `{name}` has no rows")));
            }
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(max > min) {
                return Err(Error::ConstantColumn(name.to_string()));
            }
            ranges.push(ColumnRange {
                name: name.to_string(),
                min,
                max,
            });
        }
        Ok(MinMaxScaler { columns: ranges })
    }

    /// Like [`MinMaxScaler::fit`], but a constant column gets a unit span so
    /// it scales to 0 instead of failing.
    pub fn fit_allow_constant(frame: &FeatureFrame, columns: &[&str]) -> Result<Self> {
        let mut ranges = Vec::with_capacity(columns.len());
        for &name in columns {
            let values = frame.column(name)?;
            if values.is_empty() {
                return Err(Error::Empty(format!("column `{name}` has no rows")));
            }
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let mut max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(max > min) {
                log::debug!("column `{name}` is constant; using a unit span");
                max = min + 1.0;
            }
            ranges.push(ColumnRange {
                name: name.to_string(),
                min,
                max,
            });
        }
        Ok(MinMaxScaler { columns: ranges })
    }

    pub fn range(&self, name: &str) -> Result<&ColumnRange> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(format!("{name} (not in scaler)")))
    }

    pub fn scale_value(&self, name: &str, x: f64) -> Result<f64> {
        let r = self.range(name)?;
        Ok((x - r.min) / (r.max - r.min))
    }

    pub fn unscale_value(&self, name: &str, x: f64) -> Result<f64> {
        let r = self.range(name)?;
        Ok(x * (r.max - r.min) + r.min)
    }

    /// Scales every column the scaler knows; other columns pass through.
    pub fn transform(&self, frame: &FeatureFrame) -> Result<FeatureFrame> {
        self.apply(frame, |r, x| (x - r.min) / (r.max - r.min))
    }

    pub fn inverse(&self, frame: &FeatureFrame) -> Result<FeatureFrame> {
        self.apply(frame, |r, x| x * (r.max - r.min) + r.min)
    }

    fn apply(&self, frame: &FeatureFrame, f: impl Fn(&ColumnRange, f64) -> f64) -> Result<FeatureFrame> {
        let mut out = frame.clone();
        for r in &self.columns {
            for x in out.column_mut(&r.name)?.iter_mut() {
                *x = f(r, *x);
            }
        }
        Ok(out)
    }
}

/// Fits a scaler on `columns` and returns the scaled frame carrying it.
pub fn minmax_fit_transform(frame: &FeatureFrame, columns: &[&str]) -> Result<(FeatureFrame, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(frame, columns)?;
    let mut scaled = scaler.transform(frame)?;
    scaled.scaler = Some(scaler.clone());
    Ok((scaled, scaler))
}

/// Undoes the scaling of a frame produced by [`minmax_fit_transform`].
pub fn minmax_inverse(frame: &FeatureFrame) -> Result<FeatureFrame> {
    let scaler = frame
        .scaler
        .as_ref()
        .ok_or_else(|| Error::Config("frame carries no scaler state".into()))?;
    let mut out = scaler.inverse(frame)?;
    out.scaler = None;
    Ok(out)
}
