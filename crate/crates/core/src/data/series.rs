use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One monitored value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub time: DateTime<Utc>,
    pub value: f64,
}

impl Sample {
    pub fn new(time: DateTime<Utc>, value: f64) -> Self {
        Sample { time, value }
    }
}

/// Time-ordered samples of one monitored parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub name: String,
    pub samples: Vec<Sample>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Self {
        TimeSeries {
            name: name.into(),
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    /// Sorts by time; of several samples sharing a timestamp the last one wins.
    pub fn normalize(&mut self) {
        // stable sort keeps file order among equal timestamps
        self.samples.sort_by_key(|s| s.time);
        let mut out: Vec<Sample> = Vec::with_capacity(self.samples.len());
        for s in self.samples.drain(..) {
            match out.last_mut() {
                Some(last) if last.time == s.time => *last = s,
                _ => out.push(s),
            }
        }
        self.samples = out;
    }
}

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S%.f%:z";

/// Parses `YYYY-MM-DD HH:MM:SS[.ffffff]+00:00`.
pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, chrono::ParseError> {
    DateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT).map(|t| t.with_timezone(&Utc))
}

/// Formats a timestamp the way the monitoring export does.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    if t.timestamp_subsec_micros() == 0 {
        t.format("%Y-%m-%d %H:%M:%S+00:00").to_string()
    } else {
        t.format("%Y-%m-%d %H:%M:%S%.6f+00:00").to_string()
    }
}

/// Reads a headerless `<timestamp>,<value>` file. The series is named after
/// the file stem.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_series(&name, &text, path)
}

/// Parses the body of a monitoring CSV; `origin` is only used in error messages.
pub fn parse_series(name: &str, text: &str, origin: &Path) -> Result<TimeSeries> {
    let mut samples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: idx + 1,
            message,
        };
        let (ts, value) = line
            .rsplit_once(',')
            .ok_or_else(|| parse_err(format!("expected `<timestamp>,<value>`, got `{line}`")))?;
        let time = parse_timestamp(ts).map_err(|e| parse_err(format!("bad timestamp `{ts}`: {e}")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad value `{}`: {e}", value.trim())))?;
        samples.push(Sample::new(time, value));
    }
    if samples.is_empty() {
        return Err(Error::EmptyFile(origin.to_path_buf()));
    }
    let mut series = TimeSeries::new(name, samples);
    series.normalize();
    Ok(series)
}

/// Writes a series in the headerless monitoring format.
pub fn write_series_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(series.len() * 48);
    for s in &series.samples {
        out.push_str(&format_timestamp(&s.time));
        out.push(',');
        out.push_str(&s.value.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Which values [`clean`] drops besides non-finite ones.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CleaningRules {
    /// Inclusive valid range; samples outside are dropped.
    pub valid_range: Option<(f64, f64)>,
}

impl CleaningRules {
    /// Visibility is a fraction, so anything outside `[0, 1]` is a glitch.
    pub fn for_parameter(name: &str) -> Self {
        match name {
            "visibility" => CleaningRules {
                valid_range: Some((0.0, 1.0)),
            },
            _ => CleaningRules::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CleanReport {
    pub non_finite: usize,
    pub out_of_range: usize,
}

impl CleanReport {
    pub fn dropped(&self) -> usize {
        self.non_finite + self.out_of_range
    }
}

pub fn clean(series: &TimeSeries, rules: &CleaningRules) -> (TimeSeries, CleanReport) {
    let mut report = CleanReport::default();
    let samples: Vec<Sample> = series
        .samples
        .iter()
        .filter(|s| {
            if !s.value.is_finite() {
                report.non_finite += 1;
                return false;
            }
            if let Some((lo, hi)) = rules.valid_range {
                if s.value < lo || s.value > hi {
                    report.out_of_range += 1;
                    return false;
                }
            }
            true
        })
        .copied()
        .collect();
    if samples.is_empty() && !series.is_empty() {
        log::warn!("cleaning removed every sample of `{}`", series.name);
    }
    (TimeSeries::new(series.name.clone(), samples), report)
}

/// Mean of one tumbling window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMean {
    pub start: DateTime<Utc>,
    pub mean: f64,
    pub count: usize,
}

pub const MIN_WINDOW: Duration = Duration::from_secs(1);
pub const MAX_WINDOW: Duration = Duration::from_secs(24 * 3600);

/// Epoch-aligned tumbling-window means with their member counts. Empty
/// windows are omitted.
pub fn window_means(series: &TimeSeries, window: Duration) -> Result<Vec<WindowMean>> {
    if window < MIN_WINDOW || window > MAX_WINDOW {
        return Err(Error::Domain(format!(
            "averaging window must be between 1 s and 24 h, got {window:?}"
        )));
    }
    let width = window.as_micros() as i64;
    let mut buckets: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for s in &series.samples {
        let key = s.time.timestamp_micros().div_euclid(width);
        let entry = buckets.entry(key).or_insert((0.0, 0));
        entry.0 += s.value;
        entry.1 += 1;
    }
    Ok(buckets
        .into_iter()
        .map(|(key, (sum, count))| WindowMean {
            start: Utc
                .timestamp_micros(key * width)
                .single()
                .expect("window start in range"),
            mean: sum / count as f64,
            count,
        })
        .collect())
}

/// Tumbling-window average, each output stamped at its window start.
pub fn temporal_average(series: &TimeSeries, window: Duration) -> Result<TimeSeries> {
    let samples = window_means(series, window)?
        .into_iter()
        .map(|w| Sample::new(w.start, w.mean))
        .collect();
    Ok(TimeSeries::new(series.name.clone(), samples))
}

/// Parses durations like `10m`, `30s`, `2h`, `1d` or a bare number of seconds.
pub fn parse_duration(text: &str) -> Result<Duration> {
    let t = text.trim();
    let split = t.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let n: f64 = num
        .parse()
        .map_err(|_| Error::Config(format!("bad duration `{text}`")))?;
    let secs = match unit {
        "" | "s" => n,
        "m" | "min" => n * 60.0,
        "h" => n * 3600.0,
        "d" => n * 86400.0,
        _ => return Err(Error::Config(format!("bad duration unit in `{text}`"))),
    };
    if !(secs > 0.0) || !secs.is_finite() {
        return Err(Error::Config(format!("duration must be positive: `{text}`")));
    }
    Ok(Duration::from_secs_f64(secs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ts(s: &str) -> DateTime<Utc> {
        parse_timestamp(s).unwrap()
    }

    fn series(name: &str, values: &[f64]) -> TimeSeries {
        let t0 = ts("2024-01-01 00:00:00+00:00");
        TimeSeries::new(
            name,
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| Sample::new(t0 + chrono::Duration::seconds(7 * i as i64), v))
                .collect(),
        )
    }

    #[test]
    fn parses_monitoring_line() {
        let s = parse_series("skr", "2023-11-29 18:57:02.113707+00:00,1197\n", Path::new("x")).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.samples[0].value, 1197.0);
        assert_eq!(s.samples[0].time.timestamp_subsec_micros(), 113_707);
        assert_eq!(format_timestamp(&s.samples[0].time), "2023-11-29 18:57:02.113707+00:00");
        let whole = parse_series("skr", "2023-11-29 18:50:00+00:00,1222.53", Path::new("x")).unwrap();
        assert_eq!(format_timestamp(&whole.samples[0].time), "2023-11-29 18:50:00+00:00");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "2023-11-29 18:57:02+00:00,1\n2023-11-29 18:57:09+00:00,oops\n";
        match parse_series("skr", text, Path::new("skr.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_series("skr", "\n\n", Path::new("e")), Err(Error::EmptyFile(_))));
        assert!(matches!(
            parse_series("skr", "not a line\n", Path::new("e")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn sorts_and_keeps_last_duplicate() {
        let text = "2023-11-29 18:57:09+00:00,2\n2023-11-29 18:57:02+00:00,1\n2023-11-29 18:57:09+00:00,3\n";
        let s = parse_series("skr", text, Path::new("x")).unwrap();
        assert_eq!(s.values(), vec![1.0, 3.0]);
    }

    #[test]
    fn cleaning_rules() {
        let v = series("visibility", &[0.98, 1.02, 0.97]);
        let (c, r) = clean(&v, &CleaningRules::for_parameter("visibility"));
        assert_eq!(c.values(), vec![0.98, 0.97]);
        assert_eq!(r.out_of_range, 1);

        let ok = series("skr", &[1.0, 2.0]);
        assert_eq!(clean(&ok, &CleaningRules::for_parameter("skr")).0, ok);

        let nan = series("qber", &[f64::NAN, f64::INFINITY]);
        let (c, r) = clean(&nan, &CleaningRules::default());
        assert!(c.is_empty());
        assert_eq!(r.non_finite, 2);
    }

    #[test]
    fn averaging_cases() {
        let c = series("skr", &[5.0; 200]);
        let avg = temporal_average(&c, Duration::from_secs(600)).unwrap();
        assert!(avg.samples.iter().all(|s| s.value == 5.0));
        assert!(avg.len() <= c.len());

        let sparse = TimeSeries::new(
            "skr",
            vec![
                Sample::new(ts("2024-01-01 00:00:01+00:00"), 1.0),
                Sample::new(ts("2024-01-01 00:10:01+00:00"), 2.0),
                Sample::new(ts("2024-01-01 00:40:00+00:00"), 3.0),
            ],
        );
        let avg = temporal_average(&sparse, Duration::from_secs(600)).unwrap();
        assert_eq!(avg.values(), vec![1.0, 2.0, 3.0]);
        assert_eq!(avg.samples[2].time, ts("2024-01-01 00:40:00+00:00"));

        assert!(temporal_average(&c, Duration::from_millis(500)).is_err());
        assert!(temporal_average(&c, Duration::from_secs(25 * 3600)).is_err());
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration("10m").unwrap(), Duration::from_secs(600));
        assert_eq!(parse_duration("30s").unwrap(), Duration::from_secs(30));
        assert_eq!(parse_duration("2h").unwrap(), Duration::from_secs(7200));
        assert_eq!(parse_duration("45").unwrap(), Duration::from_secs(45));
        assert!(parse_duration("10x").is_err());
        assert!(parse_duration("0m").is_err());
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(values in prop::collection::vec(prop_oneof![
            -0.5f64..1.5,
            Just(f64::NAN),
            Just(f64::INFINITY),
        ], 0..60)) {
            let s = series("visibility", &values);
            let rules = CleaningRules::for_parameter("visibility");
            let once = clean(&s, &rules).0;
            let twice = clean(&once, &rules).0;
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn averaging_conserves_mass(
            values in prop::collection::vec(-1e4f64..1e4, 1..300),
            window_s in 1u64..3600,
        ) {
            let s = series("skr", &values);
            let means = window_means(&s, Duration::from_secs(window_s)).unwrap();
            prop_assert!(means.len() <= s.len());
            let n: usize = means.iter().map(|w| w.count).sum();
            prop_assert_eq!(n, s.len());
            let weighted: f64 = means.iter().map(|w| w.mean * w.count as f64).sum::<f64>() / n as f64;
            let direct: f64 = values.iter().sum::<f64>() / values.len() as f64;
            let scale = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
            prop_assert!((weighted - direct).abs() <= 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qber.csv");
        let s = series("qber", &[0.01, 0.0125, 0.02]);
        write_series_csv(&s, &path).unwrap();
        let back = ingest_csv(&path).unwrap();
        assert_eq!(back, s);
        assert_relative_eq!(back.samples[1].value, 0.0125);
    }
}
