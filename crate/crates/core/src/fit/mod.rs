//! Least-squares fits of a subset of link parameters to a monitored SKR
//! series, given the monitored QBER and visibility.
//!
//! The clamped model rate is not differentiable where it hits zero, so the
//! optimiser is derivative-free. It works in bound-normalised coordinates.

pub mod nelder_mead;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};

use crate::cow_model::{self, db_to_linear, ChannelObservables, CowParameters, QberSource, DEFAULT_T_B_DB};
use crate::data::{FeatureFrame, Sample, TimeSeries};
use crate::error::{Error, Result};
use crate::exec::Execution;
use nelder_mead::NelderMeadOptions;

/// A parameter the fit may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FitParam {
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "eta")]
    Eta,
    #[serde(rename = "t_B")]
    TB,
}

impl FitParam {
    /// Test range of each parameter. The upper `t_B` bound is capped at 1
    /// because a transmission cannot exceed unity.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            FitParam::Alpha => (0.15, 0.25),
            FitParam::Eta => (0.02, 0.1),
            FitParam::TB => {
                let t = db_to_linear(DEFAULT_T_B_DB);
                (0.5 * t, (2.0 * t).min(1.0))
            }
        }
    }

    pub fn get(self, p: &CowParameters) -> f64 {
        match self {
            FitParam::Alpha => p.alpha,
            FitParam::Eta => p.eta,
            FitParam::TB => p.t_b,
        }
    }

    pub fn set(self, p: &mut CowParameters, v: f64) {
        match self {
            FitParam::Alpha => p.alpha = v,
            FitParam::Eta => p.eta = v,
            FitParam::TB => p.t_b = v,
        }
    }
}

impl fmt::Display for FitParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitParam::Alpha => "alpha",
            FitParam::Eta => "eta",
            FitParam::TB => "t_B",
        })
    }
}

impl FromStr for FitParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "alpha" => Ok(FitParam::Alpha),
            "eta" => Ok(FitParam::Eta),
            "t_B" | "t_b" | "tb" => Ok(FitParam::TB),
            other => Err(Error::Config(format!("unknown fit parameter `{other}` (alpha, eta, t_B)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec {
    pub free: Vec<FitParam>,
    pub bounds: Vec<(f64, f64)>,
    pub initial: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub qber_source: QberSource,
}

impl FitSpec {
    /// Default bounds, start values taken from `base`.
    pub fn new(free: &[FitParam], base: &CowParameters) -> Self {
        FitSpec {
            free: free.to_vec(),
            bounds: free.iter().map(|p| p.default_bounds()).collect(),
            initial: free.iter().map(|p| p.get(base)).collect(),
            max_iter: 2000,
            tol: 1e-10,
            qber_source: QberSource::Measured,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(Error::Config("no free parameters".into()));
        }
        if self.bounds.len() != self.free.len() || self.initial.len() != self.free.len() {
            return Err(Error::Config("bounds/initial do not match free parameters".into()));
        }
        for ((p, &(lo, hi)), &x) in self.free.iter().zip(&self.bounds).zip(&self.initial) {
            if !(lo < hi) {
                return Err(Error::Config(format!("{p}: lower bound must be below upper")));
            }
            if !(lo..=hi).contains(&x) {
                return Err(Error::Config(format!("{p}: start {x} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub free: Vec<FitParam>,
    pub fitted: Vec<f64>,
    pub params: CowParameters,
    /// RMS of model minus measured over the samples used, bits/s.
    pub residual_rms: f64,
    /// Same, at the start values.
    pub initial_rms: f64,
    pub samples_used: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective after each optimiser iteration.
    pub history: Vec<f64>,
    /// Model SKR for every frame row at the fitted parameters.
    pub calculated: Vec<f64>,
}

/// Rows usable by the objective: measured SKR > 0 (outages excluded).
struct FitData {
    obs: Vec<ChannelObservables>,
    skr: Vec<f64>,
}

fn observables(frame: &FeatureFrame) -> Result<Vec<ChannelObservables>> {
    let qber = frame.column("qber")?;
    let vis = frame.column("visibility")?;
    qber.iter().zip(vis).map(|(&q, &v)| ChannelObservables::new(q, v)).collect()
}

fn fit_data(frame: &FeatureFrame) -> Result<FitData> {
    if frame.is_empty() {
        return Err(Error::Empty("fit frame has no rows".into()));
    }
    let obs = observables(frame)?;
    let skr = frame.column("skr")?;
    let (obs, skr): (Vec<_>, Vec<_>) = obs.into_iter().zip(skr.iter().copied()).filter(|(_, s)| *s > 0.0).unzip();
    if skr.is_empty() {
        return Err(Error::Empty("no rows with positive measured SKR".into()));
    }
    Ok(FitData { obs, skr })
}

/// Model SKR per observation; `None` where the model rejects the input.
fn model_rates(params: &CowParameters, obs: &[ChannelObservables], src: QberSource, exec: Execution) -> Result<Vec<f64>> {
    cow_model::secret_key_rate_batch(params, obs, src, exec).map(|b| b.into_iter().map(|x| x.skr).collect())
}

fn sum_sq(params: &CowParameters, data: &FitData, src: QberSource, exec: Execution) -> f64 {
    match model_rates(params, &data.obs, src, exec) {
        // sequential sum keeps the objective identical across strategies
        Ok(rates) => rates.iter().zip(&data.skr).map(|(m, s)| (m - s) * (m - s)).sum(),
        Err(_) => f64::INFINITY,
    }
}

/// Sum of squared residuals at `params`, exposed for benchmarking.
pub fn objective(frame: &FeatureFrame, params: &CowParameters, src: QberSource, exec: Execution) -> Result<f64> {
    let data = fit_data(frame)?;
    Ok(sum_sq(params, &data, src, exec))
}

pub fn fit(frame: &FeatureFrame, base: &CowParameters, spec: &FitSpec) -> Result<FitResult> {
    fit_with(frame, base, spec, Execution::default())
}

pub fn fit_with(frame: &FeatureFrame, base: &CowParameters, spec: &FitSpec, exec: Execution) -> Result<FitResult> {
    base.validate()?;
    spec.validate()?;
    let data = fit_data(frame)?;
    let n_used = data.skr.len();

    let to_params = |u: &[f64]| {
        let mut p = *base;
        for ((param, &(lo, hi)), &ui) in spec.free.iter().zip(&spec.bounds).zip(u) {
            param.set(&mut p, lo + ui * (hi - lo));
        }
        p
    };
    let u0: Vec<f64> = spec
        .initial
        .iter()
        .zip(&spec.bounds)
        .map(|(&x, &(lo, hi))| (x - lo) / (hi - lo))
        .collect();
    let unit = vec![(0.0, 1.0); spec.free.len()];
    let objective = |u: &[f64]| sum_sq(&to_params(u), &data, spec.qber_source, exec);

    let initial_sq = objective(&u0);
    let opts = NelderMeadOptions {
        max_iter: spec.max_iter,
        tol: spec.tol,
        ..Default::default()
    };
    let r = nelder_mead::minimize(objective, &u0, &unit, &opts);

    let params = to_params(&r.x);
    let fitted = spec.free.iter().map(|p| p.get(&params)).collect();
    let calculated = model_rates(&params, &observables(frame)?, spec.qber_source, exec)?;
    Ok(FitResult {
        free: spec.free.clone(),
        fitted,
        params,
        residual_rms: (r.f / n_used as f64).sqrt(),
        initial_rms: (initial_sq / n_used as f64).sqrt(),
        samples_used: n_used,
        iterations: r.iterations,
        evaluations: r.evaluations,
        converged: r.converged,
        history: r.history,
        calculated,
    })
}

/// Fits a chain of specs, each warm-started from the previous result, so
/// nested parameter sets never fit worse than their subsets.
pub fn fit_nested(frame: &FeatureFrame, base: &CowParameters, specs: &[FitSpec]) -> Result<Vec<FitResult>> {
    let mut out: Vec<FitResult> = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut spec = spec.clone();
        let start = match out.last() {
            Some(prev) => {
                for (p, x) in spec.free.iter().zip(spec.initial.iter_mut()) {
                    if let Some(i) = prev.free.iter().position(|q| q == p) {
                        *x = prev.fitted[i];
                    }
                }
                prev.params
            }
            None => *base,
        };
        out.push(fit(frame, &start, &spec)?);
    }
    Ok(out)
}

/// Per-row model minus measured SKR, bits/s.
pub fn residual_series(frame: &FeatureFrame, params: &CowParameters, src: QberSource) -> Result<TimeSeries> {
    let rates = model_rates(params, &observables(frame)?, src, Execution::default())?;
    let skr = frame.column("skr")?;
    let samples = frame
        .timestamps
        .iter()
        .zip(rates.iter().zip(skr))
        .map(|(&t, (m, s))| Sample::new(t, m - s))
        .collect();
    Ok(TimeSeries::new("residual", samples))
}

impl FitResult {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `timestamp,measured,calculated,residual` for time and scatter plots.
    pub fn write_samples_csv(&self, frame: &FeatureFrame, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let skr = frame.column("skr")?;
        if skr.len() != self.calculated.len() {
            return Err(Error::Shape("fit result and frame differ in length".into()));
        }
        let err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(["timestamp", "measured", "calculated", "residual"]).map_err(err)?;
        for ((t, m), c) in frame.timestamps.iter().zip(skr).zip(&self.calculated) {
            w.write_record([
                t.to_rfc3339_opts(SecondsFormat::AutoSi, true),
                m.to_string(),
                c.to_string(),
                (c - m).to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn parse_free_list(text: &str) -> Result<Vec<FitParam>> {
    let mut out: Vec<FitParam> = Vec::new();
    for part in text.split(',').filter(|s| !s.trim().is_empty()) {
        let p: FitParam = part.parse()?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no free parameters given".into()));
    }
    Ok(out)
}
