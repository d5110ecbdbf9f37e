use std::path::Path;

use super::frame::FeatureFrame;
use crate::error::{Error, Result};

/// Symmetric matrix of Pearson coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Pairs involving a constant column; their entries are reported as 0.
    pub undefined: Vec<(usize, usize)>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.values[i][j])
    }

    /// Writes the matrix with a `parameter` header cell and row labels.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{other:?}")),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header = vec!["parameter".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Pearson coefficient of two equal-length samples, `None` if either is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson_matrix(frame: &FeatureFrame, columns: &[&str]) -> Result<CorrelationMatrix> {
    if frame.len() < 2 {
        return Err(Error::Shape(format!(
            "correlation needs at least 2 rows, frame has {}",
            frame.len()
        )));
    }
    let data: Vec<&[f64]> = columns.iter().map(|c| frame.column(c)).collect::<Result<_>>()?;
    let k = columns.len();
    let mut values = vec![vec![0.0; k]; k];
    let mut undefined = Vec::new();
    for i in 0..k {
        for j in i..k {
            let r = match pearson(data[i], data[j]) {
                Some(r) if i == j => {
                    debug_assert!((r - 1.0).abs() < 1e-9);
                    1.0
                }
                Some(r) => r,
                None => {
                    log::warn!(
                        "correlation of `{}` and `{}` undefined (constant column); reported as 0",
                        columns[i],
                        columns[j]
                    );
                    undefined.push((i, j));
                    0.0
                }
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        labels: columns.iter().map(|c| c.to_string()).collect(),
        values,
        undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn frame(cols: &[(&str, Vec<f64>)]) -> FeatureFrame {
        let n = cols[0].1.len();
        let mut f = FeatureFrame::new((0..n as i64).map(|i| Utc.timestamp_opt(i * 600, 0).unwrap()).collect());
        for (name, v) in cols {
            f.set_column(*name, v.clone()).unwrap();
        }
        f
    }

    #[test]
    fn basic_cases() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let f = frame(&[("x", x.clone()), ("neg", x.iter().map(|v| -v).collect()), ("y", vec![1.0, 2.0, 3.0, 5.0])]);
        let m = pearson_matrix(&f, &["x", "neg", "y"]).unwrap();
        assert_eq!(m.get("x", "x"), Some(1.0));
        assert!((m.get("x", "neg").unwrap() + 1.0).abs() < 1e-15);
        // by hand: mx=2.5, my=2.75; sxy=6.5, sxx=5, syy=8.75 -> 6.5/sqrt(43.75)
        let by_hand = 6.5 / 43.75f64.sqrt();
        assert!((m.get("x", "y").unwrap() - by_hand).abs() < 1e-14);
        assert!((by_hand - 0.982_707_629_823_990_8).abs() < 1e-14);
        assert_eq!(m.values[0][2], m.values[2][0]);
    }

    #[test]
    fn constant_column_is_flagged() {
        let f = frame(&[("x", vec![1.0, 2.0, 3.0]), ("c", vec![7.0; 3])]);
        let m = pearson_matrix(&f, &["x", "c"]).unwrap();
        assert_eq!(m.get("x", "c"), Some(0.0));
        assert!(m.undefined.contains(&(0, 1)));
        assert!(m.undefined.contains(&(1, 1)));
    }

    #[test]
    fn duplicated_column_and_short_frame() {
        let f = frame(&[("x", vec![1.0, 5.0, 2.0]), ("x2", vec![1.0, 5.0, 2.0])]);
        let m = pearson_matrix(&f, &["x", "x2"]).unwrap();
        assert!((m.get("x", "x2").unwrap() - 1.0).abs() < 1e-15);
        let one = frame(&[("x", vec![1.0])]);
        assert!(pearson_matrix(&one, &["x"]).is_err());
    }

    proptest! {
        #[test]
        fn affine_invariance(
            xs in prop::collection::vec(-100f64..100.0, 3..40),
            noise in prop::collection::vec(-100f64..100.0, 40),
            slope in 0.01f64..100.0,
            shift in -1e3f64..1e3,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| x + n).collect();
            prop_assume!(pearson(&xs, &ys).is_some());
            let f = frame(&[("x", xs.clone()), ("y", ys.clone()), ("xt", xs.iter().map(|x| slope * x + shift).collect())]);
            let m = pearson_matrix(&f, &["x", "y", "xt"]).unwrap();
            prop_assert!((m.get("x", "y").unwrap() - m.get("xt", "y").unwrap()).abs() < 1e-12);
            for row in &m.values {
                for v in row {
                    prop_assert!((-1.0..=1.0).contains(v));
                }
            }
        }
    }
}
