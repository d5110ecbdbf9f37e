//! Synthetic monitoring traces for a chain of links.
//!
//! Visibility follows a mean-reverting AR(1) process; QBER is the model QBER
//! at that visibility plus Gaussian jitter; SKR is the closed-form rate at the
//! observed (visibility, QBER) times a slowly drifting relative error; laser
//! power is the mean photon number with independent jitter. Outages remove
//! all four parameters for a stretch of samples.
//!
//! Each link draws from its own ChaCha streams keyed by `(seed, link_id)`, so
//! generating links in parallel or in any order gives identical output.

use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cow_model::{self, ChannelObservables, CowParameters, QberSource};
use crate::data::{parse_duration, write_series_csv, Sample, TimeSeries};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Link distances of the reference five-link chain, km.
pub const REFERENCE_DISTANCES_KM: [f64; 5] = [46.0, 57.0, 42.0, 43.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Long-run mean of the visibility process, in (0, 1).
    pub visibility_mean: f64,
    /// AR(1) coefficient of the visibility process, in [0, 1).
    pub visibility_ar1: f64,
    /// Innovation standard deviation of the visibility process.
    pub visibility_sigma: f64,
    /// Standard deviation of the additive QBER jitter.
    pub qber_jitter_sigma: f64,
    /// Stationary standard deviation of the relative SKR error.
    pub skr_relative_noise: f64,
    /// AR(1) coefficient of the relative SKR error, in [0, 1).
    pub skr_noise_ar1: f64,
    /// Relative standard deviation of the laser power reading.
    pub laser_jitter_relative: f64,
    /// Per-sample probability that an outage starts, in [0, 1).
    pub dropout_probability: f64,
    /// Outage length in samples.
    pub dropout_samples: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            visibility_mean: 0.98,
            visibility_ar1: 0.99,
            visibility_sigma: 0.005,
            qber_jitter_sigma: 0.002,
            skr_relative_noise: 0.05,
            skr_noise_ar1: 0.99,
            laser_jitter_relative: 0.01,
            dropout_probability: 5e-4,
            dropout_samples: 30,
            seed: 1,
        }
    }
}

impl NoiseSpec {
    /// No randomness at all: constant visibility, exact model outputs.
    pub fn noiseless(visibility: f64) -> Self {
        NoiseSpec {
            visibility_mean: visibility,
            visibility_ar1: 0.0,
            visibility_sigma: 0.0,
            qber_jitter_sigma: 0.0,
            skr_relative_noise: 0.0,
            skr_noise_ar1: 0.0,
            laser_jitter_relative: 0.0,
            dropout_probability: 0.0,
            dropout_samples: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("noise: {what}")));
        if !(self.visibility_mean > 0.0 && self.visibility_mean <= 1.0) {
            return bad("visibility_mean must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.visibility_ar1) || !(0.0..1.0).contains(&self.skr_noise_ar1) {
            return bad("AR(1) coefficients must be in [0, 1)");
        }
        for (name, v) in [
            ("visibility_sigma", self.visibility_sigma),
            ("qber_jitter_sigma", self.qber_jitter_sigma),
            ("skr_relative_noise", self.skr_relative_noise),
            ("laser_jitter_relative", self.laser_jitter_relative),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_probability) {
            return bad("dropout_probability must be in [0, 1)");
        }
        Ok(())
    }
}

/// How the `link_loss` feature is derived.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum LinkLossMode {
    /// Distance in km used directly as a loss proxy.
    #[default]
    Distance,
    /// `alpha * L + insertion_db`.
    Decibel { insertion_db: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub link_id: u32,
    pub distance_km: f64,
    pub link_loss: f64,
    pub params: CowParameters,
    pub noise: NoiseSpec,
}

impl LinkConfig {
    /// Link at `distance_km` with the reference parameters, `mu` at the
    /// transmittance bound and a distance-proxy link loss.
    pub fn reference(link_id: u32, distance_km: f64, noise: NoiseSpec) -> Result<Self> {
        let params = CowParameters::default().with_length(distance_km).at_upper_bound()?;
        Ok(LinkConfig {
            link_id,
            distance_km,
            link_loss: distance_km,
            params,
            noise,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_km > 0.0) || !self.distance_km.is_finite() {
            return Err(Error::Config(format!(
                "link {}: distance must be > 0, got {}",
                self.link_id, self.distance_km
            )));
        }
        self.params.validate()?;
        self.noise.validate()
    }
}

/// The four monitored series of one link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkTraces {
    pub skr: TimeSeries,
    pub qber: TimeSeries,
    pub visibility: TimeSeries,
    pub laserpower: TimeSeries,
}

impl LinkTraces {
    pub fn iter(&self) -> impl Iterator<Item = &TimeSeries> {
        [&self.skr, &self.qber, &self.visibility, &self.laserpower].into_iter()
    }
}

fn stream(seed: u64, link_id: u32, component: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((link_id as u64) << 8) | component);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated non-negative")
}

const MIN_VISIBILITY: f64 = 1e-6;

pub fn generate_link(
    config: &LinkConfig,
    start: DateTime<Utc>,
    duration: Duration,
    sample_period: Duration,
) -> Result<LinkTraces> {
    config.validate()?;
    if sample_period.is_zero() || duration < sample_period {
        return Err(Error::Config(format!(
            "duration {duration:?} must be at least the sample period {sample_period:?}"
        )));
    }
    let n = (duration.as_micros() / sample_period.as_micros()) as usize;
    let period = chrono::Duration::microseconds(sample_period.as_micros() as i64);
    let noise = &config.noise;
    let params = &config.params;

    let mut vis_rng = stream(noise.seed, config.link_id, 0);
    let mut qber_rng = stream(noise.seed, config.link_id, 1);
    let mut skr_rng = stream(noise.seed, config.link_id, 2);
    let mut laser_rng = stream(noise.seed, config.link_id, 3);
    let mut drop_rng = stream(noise.seed, config.link_id, 4);

    let vis_step = normal(noise.visibility_sigma);
    let qber_step = normal(noise.qber_jitter_sigma);
    let skr_innovation = normal(noise.skr_relative_noise * (1.0 - noise.skr_noise_ar1.powi(2)).sqrt());
    let laser_step = normal(noise.laser_jitter_relative * params.mu);
    let outage_start = Bernoulli::new(noise.dropout_probability).expect("validated probability");

    let mut traces = LinkTraces {
        skr: TimeSeries::new("skr", Vec::with_capacity(n)),
        qber: TimeSeries::new("qber", Vec::with_capacity(n)),
        visibility: TimeSeries::new("visibility", Vec::with_capacity(n)),
        laserpower: TimeSeries::new("laserpower", Vec::with_capacity(n)),
    };
    let mut vis = noise.visibility_mean.clamp(MIN_VISIBILITY, 1.0);
    let mut skr_err = if noise.skr_relative_noise > 0.0 {
        normal(noise.skr_relative_noise).sample(&mut skr_rng)
    } else {
        0.0
    };
    let mut outage_left = 0usize;

    for i in 0..n {
        if i > 0 {
            let m = noise.visibility_mean;
            vis = (m + noise.visibility_ar1 * (vis - m) + vis_step.sample(&mut vis_rng)).clamp(MIN_VISIBILITY, 1.0);
            skr_err = noise.skr_noise_ar1 * skr_err + skr_innovation.sample(&mut skr_rng);
        }
        let qber_noise = qber_step.sample(&mut qber_rng);
        let laser_noise = laser_step.sample(&mut laser_rng);

        if outage_left == 0 && outage_start.sample(&mut drop_rng) {
            outage_left = noise.dropout_samples;
        }
        if outage_left > 0 {
            outage_left -= 1;
            continue;
        }

        let time = start + period * i as i32;
        let qber = (cow_model::model_qber(params, vis)? + qber_noise).clamp(0.0, 0.5);
        let obs = ChannelObservables::new(qber, vis)?;
        let rate = cow_model::secret_key_rate(params, &obs, QberSource::Measured)?.skr;
        let skr = (rate * (1.0 + skr_err)).max(0.0);

        traces.visibility.samples.push(Sample::new(time, vis));
        traces.qber.samples.push(Sample::new(time, qber));
        traces.skr.samples.push(Sample::new(time, skr));
        traces.laserpower.samples.push(Sample::new(time, params.mu + laser_noise));
    }
    Ok(traces)
}

/// Per-link entry of a scenario file. Unset fields fall back to the scenario
/// defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub id: u32,
    pub distance_km: f64,
    /// Explicit link-loss feature value, overriding the scenario's mode.
    pub link_loss: Option<f64>,
    /// Mean photon number; defaults to the link transmittance.
    pub mu: Option<f64>,
    /// Detector efficiency override.
    pub eta: Option<f64>,
    pub noise: Option<NoiseSpec>,
}

/// A whole synthetic scenario, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Seed shared by all links; each link gets its own stream.
    pub seed: u64,
    /// RFC 3339 start instant.
    pub start: String,
    /// e.g. `14d`
    pub duration: String,
    /// e.g. `60s`
    pub sample_period: String,
    #[serde(default)]
    pub link_loss: LinkLossMode,
    #[serde(default)]
    pub params: CowParameters,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(rename = "link")]
    pub links: Vec<LinkEntry>,
}

impl Default for Scenario {
    /// The reference five-link chain.
    fn default() -> Self {
        Scenario {
            seed: 20231129,
            start: "2023-11-29T00:00:00Z".into(),
            duration: "14d".into(),
            sample_period: "60s".into(),
            link_loss: LinkLossMode::Distance,
            params: CowParameters::default(),
            noise: NoiseSpec::default(),
            links: REFERENCE_DISTANCES_KM
                .iter()
                .enumerate()
                .map(|(i, &d)| LinkEntry {
                    id: i as u32 + 1,
                    distance_km: d,
                    ..Default::default()
                })
                .collect(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn start_time(&self) -> Result<DateTime<Utc>> {
        DateTime::parse_from_rfc3339(&self.start)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| Error::Config(format!("bad start `{}`: {e}", self.start)))
    }

    /// Resolves every link entry against the scenario defaults.
    pub fn link_configs(&self) -> Result<Vec<LinkConfig>> {
        if self.links.is_empty() {
            return Err(Error::Config("scenario has no links".into()));
        }
        let mut ids: Vec<u32> = self.links.iter().map(|l| l.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("link ids must be unique".into()));
        }
        self.links
            .iter()
            .map(|entry| {
                let mut params = self.params.with_length(entry.distance_km);
                if let Some(eta) = entry.eta {
                    params.eta = eta;
                }
                params = match entry.mu {
                    Some(mu) => params.with_mu(mu),
                    None => params.at_upper_bound()?,
                };
                let link_loss = entry.link_loss.unwrap_or(match self.link_loss {
                    LinkLossMode::Distance => entry.distance_km,
                    LinkLossMode::Decibel { insertion_db } => params.channel_loss_db() + insertion_db,
                });
                let mut noise = entry.noise.unwrap_or(self.noise);
                noise.seed = self.seed;
                let cfg = LinkConfig {
                    link_id: entry.id,
                    distance_km: entry.distance_km,
                    link_loss,
                    params,
                    noise,
                };
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }
}

/// Metadata written next to each link's CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMeta {
    pub link_id: u32,
    pub distance_km: f64,
    pub link_loss: f64,
}

pub const LINK_META_FILE: &str = "link.toml";

impl LinkMeta {
    pub fn load(dir: impl AsRef<Path>) -> Result<Option<Self>> {
        let path = dir.as_ref().join(LINK_META_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSummary {
    pub link_id: u32,
    pub dir: PathBuf,
    pub samples: usize,
}

pub fn link_dir_name(link_id: u32) -> String {
    format!("link{link_id}")
}

/// Generates every link and writes `out/link<id>/{skr,qber,visibility,laserpower}.csv`
/// plus `link.toml`.
pub fn generate_scenario(scenario: &Scenario, out: impl AsRef<Path>, exec: Execution) -> Result<Vec<LinkSummary>> {
    let out = out.as_ref();
    let configs = scenario.link_configs()?;
    let start = scenario.start_time()?;
    let duration = parse_duration(&scenario.duration)?;
    let period = parse_duration(&scenario.sample_period)?;

    let traces: Vec<Result<LinkTraces>> = exec.map(&configs, |c| generate_link(c, start, duration, period));
    let mut summaries = Vec::with_capacity(configs.len());
    for (cfg, tr) in configs.iter().zip(traces) {
        let tr = tr?;
        let dir = out.join(link_dir_name(cfg.link_id));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in tr.iter() {
            write_series_csv(s, dir.join(format!("{}.csv", s.name)))?;
        }
        let meta = LinkMeta {
            link_id: cfg.link_id,
            distance_km: cfg.distance_km,
            link_loss: cfg.link_loss,
        };
        let meta_path = dir.join(LINK_META_FILE);
        let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
        summaries.push(LinkSummary {
            link_id: cfg.link_id,
            dir,
            samples: tr.skr.len(),
        });
    }
    Ok(summaries)
}
