//! Closed-form secret key rate of a coherent one-way (COW) QKD link over
//! dark fiber, and the inverse problem of finding the mean photon number
//! that produces a given rate.
//!
//! All functions are pure. Quantities are linear unless the name says dB.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

/// How the per-pulse detection probability is formed from the photon budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionModel {
    /// `1 - exp(-mu * t * t_B * eta)`
    #[default]
    WithDetectorEfficiency,
    /// `1 - exp(-mu * t * t_B)`, for sensitivity studies.
    WithoutDetectorEfficiency,
}

/// Physical parameters of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CowParameters {
    /// Fiber attenuation, dB/km.
    pub alpha: f64,
    /// Detector efficiency.
    pub eta: f64,
    /// Error-correction efficiency (>= 1).
    pub eta_ec: f64,
    /// Dark-count probability per gate.
    pub p_dc: f64,
    /// Storage length, km.
    pub storage_km: f64,
    /// Transmission of Bob's components, linear.
    pub t_b: f64,
    /// Detector dead time, s.
    pub tau_dead: f64,
    /// Pulse repetition rate, Hz.
    pub nu: f64,
    /// Mean photon number per pulse.
    pub mu: f64,
    /// Channel length, km.
    pub length_km: f64,
    /// Afterpulse probability.
    pub p_ap: f64,
    pub detection: DetectionModel,
}

/// Bob's component loss used by the reference parameter set, dB.
pub const DEFAULT_T_B_DB: f64 = 2.65;

impl Default for CowParameters {
    fn default() -> Self {
        CowParameters {
            alpha: 0.21,
            eta: 0.07,
            eta_ec: 1.0,
            p_dc: 5e-6,
            storage_km: 10.0,
            t_b: db_to_linear(DEFAULT_T_B_DB),
            tau_dead: 10e-6,
            nu: 1.25e9,
            mu: 0.5,
            length_km: 40.0,
            p_ap: 0.0,
            detection: DetectionModel::WithDetectorEfficiency,
        }
    }
}

/// `10^(-db/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// `-10 log10(x)`.
pub fn linear_to_db(x: f64) -> f64 {
    -10.0 * x.log10()
}

fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}

impl CowParameters {
    pub fn validate(&self) -> Result<()> {
        check("alpha", self.alpha, self.alpha > 0.0, "must be > 0")?;
        check("eta", self.eta, self.eta > 0.0 && self.eta <= 1.0, "must be in (0, 1]")?;
        check("eta_ec", self.eta_ec, self.eta_ec >= 1.0, "must be >= 1")?;
        check("p_dc", self.p_dc, (0.0..1.0).contains(&self.p_dc), "must be in [0, 1)")?;
        check("storage_km", self.storage_km, self.storage_km > 0.0, "must be > 0")?;
        check("t_b", self.t_b, self.t_b > 0.0 && self.t_b <= 1.0, "must be in (0, 1]")?;
        check("tau_dead", self.tau_dead, self.tau_dead >= 0.0, "must be >= 0")?;
        check("nu", self.nu, self.nu > 0.0, "must be > 0")?;
        check("mu", self.mu, self.mu > 0.0, "must be > 0")?;
        check("length_km", self.length_km, self.length_km >= 0.0, "must be >= 0")?;
        check("p_ap", self.p_ap, (0.0..1.0).contains(&self.p_ap), "must be in [0, 1)")?;
        Ok(())
    }

    /// Same link with `mu` set to the channel transmittance.
    pub fn at_upper_bound(mut self) -> Result<Self> {
        self.mu = transmittance(self.alpha, self.length_km)?;
        Ok(self)
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_length(mut self, length_km: f64) -> Self {
        self.length_km = length_km;
        self
    }

    /// Channel loss `alpha * L` in dB.
    pub fn channel_loss_db(&self) -> f64 {
        self.alpha * self.length_km
    }

    /// Bob's component loss expressed in dB.
    pub fn t_b_db(&self) -> f64 {
        linear_to_db(self.t_b)
    }

    pub fn set_t_b_db(&mut self, db: f64) {
        self.t_b = db_to_linear(db);
    }
}

/// Monitored channel quality at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelObservables {
    pub qber: f64,
    pub visibility: f64,
}

impl ChannelObservables {
    pub fn new(qber: f64, visibility: f64) -> Result<Self> {
        check("qber", qber, (0.0..=1.0).contains(&qber), "must be in [0, 1]")?;
        check(
            "visibility",
            visibility,
            (0.0..=1.0).contains(&visibility),
            "must be in [0, 1]",
        )?;
        Ok(ChannelObservables { qber, visibility })
    }
}

/// Which QBER enters the Alice-Bob mutual information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QberSource {
    /// The monitored value in [`ChannelObservables::qber`].
    #[default]
    Measured,
    /// The model's own QBER as a function of visibility, see [`model_qber`].
    Modeled,
}

/// Every intermediate of one key-rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkrBreakdown {
    pub t: f64,
    pub p_mu: f64,
    pub eta_dead: f64,
    pub eta_duty: f64,
    pub r_sift: f64,
    pub qber: f64,
    pub i_ab: f64,
    pub i_ae: f64,
    /// `r_sift * (i_ab - i_ae)` before clamping; negative when Eve knows more than Bob.
    pub skr_unclamped: f64,
    pub skr: f64,
}

/// Fiber transmittance `10^(-alpha L / 10)`.
pub fn transmittance(alpha: f64, length_km: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("attenuation must be > 0, got {alpha}")));
    }
    if !(length_km >= 0.0) || !length_km.is_finite() {
        return Err(Error::Domain(format!("length must be >= 0, got {length_km}")));
    }
    Ok(db_to_linear(alpha * length_km))
}

/// Shannon binary entropy in bits, with `H(0) = H(1) = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability must be in [0, 1], got {p}")));
    }
    Ok(h2(p))
}

fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

fn channel_t(params: &CowParameters) -> f64 {
    db_to_linear(params.alpha * params.length_km)
}

/// Probability that a pulse produces a click at Bob.
///
/// Formula only; callers are expected to have validated `params`.
pub fn detection_probability(params: &CowParameters) -> f64 {
    let t = channel_t(params);
    let budget = match params.detection {
        DetectionModel::WithDetectorEfficiency => params.mu * t * params.t_b * params.eta,
        DetectionModel::WithoutDetectorEfficiency => params.mu * t * params.t_b,
    };
    -(-budget).exp_m1()
}

fn click_sum(params: &CowParameters, p_mu: f64) -> f64 {
    p_mu + 2.0 * params.p_dc + params.p_ap
}

/// Dead-time and duty-cycle factors `(eta_dead, eta_duty)`.
pub fn dead_duty_factors(params: &CowParameters, p_mu: f64) -> (f64, f64) {
    let eta_dead = 1.0 / (1.0 + click_sum(params, p_mu) * params.nu * params.tau_dead);
    let eta_duty = params.storage_km / (params.length_km + 2.0 * params.storage_km);
    (eta_dead, eta_duty)
}

/// Detection rate surviving key sifting, bits/s.
pub fn sifted_rate(params: &CowParameters) -> f64 {
    let p_mu = detection_probability(params);
    sifted_rate_with(params, p_mu)
}

fn sifted_rate_with(params: &CowParameters, p_mu: f64) -> f64 {
    let (eta_dead, eta_duty) = dead_duty_factors(params, p_mu);
    0.5 * click_sum(params, p_mu) * params.nu * eta_duty * eta_dead
}

/// QBER predicted by the model at visibility `v`, clamped to `[0, 0.5]`.
pub fn model_qber(params: &CowParameters, visibility: f64) -> Result<f64> {
    check_visibility(visibility)?;
    let p_mu = detection_probability(params);
    model_qber_with(params, p_mu, visibility)
}

fn model_qber_with(params: &CowParameters, p_mu: f64, visibility: f64) -> Result<f64> {
    let denom = 2.0 * click_sum(params, p_mu);
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "all click probabilities are zero; QBER undefined".into(),
        ));
    }
    let noise = 2.0 * params.p_dc + params.p_ap;
    Ok((((1.0 - visibility) * p_mu + noise) / denom).clamp(0.0, 0.5))
}

fn check_visibility(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("visibility must be in [0, 1], got {v}")));
    }
    Ok(())
}

/// Information shared by Alice and Bob, `1 - eta_ec H2(qber)`. Not clamped.
pub fn mutual_info_ab(qber: f64, eta_ec: f64) -> Result<f64> {
    if !(eta_ec >= 1.0) {
        return Err(Error::Domain(format!(
            "error-correction efficiency must be >= 1, got {eta_ec}"
        )));
    }
    Ok(1.0 - eta_ec * binary_entropy(qber)?)
}

/// Information available to Eve.
///
/// The interference term `D = (1 - V) / (2 - mu/t)` is clamped to `[0, 1]`.
/// For `mu/t >= 2` the denominator is non-positive and `D` saturates at the
/// clamp, which leaves the expression finite on the whole `mu > 0` axis.
pub fn mutual_info_ae(params: &CowParameters, visibility: f64) -> Result<f64> {
    check_visibility(visibility)?;
    let t = channel_t(params);
    Ok(mutual_info_ae_with(params, t, visibility))
}

fn mutual_info_ae_with(params: &CowParameters, t: f64, visibility: f64) -> f64 {
    let ratio = params.mu / t;
    let denom = 2.0 - ratio;
    let d = if denom == 0.0 {
        if visibility < 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - visibility) / denom
    }
    .clamp(0.0, 1.0);
    let p = 0.5 + (d * (1.0 - d)).sqrt();
    let half = ratio / 2.0;
    let numerator = (1.0 - half) * (1.0 - h2(p)) + half;
    numerator / (1.0 + 2.0 * params.p_dc / (params.mu * t * params.eta))
}

/// Secret key rate with its full breakdown.
pub fn secret_key_rate(
    params: &CowParameters,
    obs: &ChannelObservables,
    qber_source: QberSource,
) -> Result<SkrBreakdown> {
    params.validate()?;
    check_visibility(obs.visibility)?;
    let t = channel_t(params);
    let p_mu = detection_probability(params);
    let (eta_dead, eta_duty) = dead_duty_factors(params, p_mu);
    let r_sift = 0.5 * click_sum(params, p_mu) * params.nu * eta_duty * eta_dead;
    let qber = match qber_source {
        QberSource::Measured => obs.qber,
        QberSource::Modeled => model_qber_with(params, p_mu, obs.visibility)?,
    };
    let i_ab = mutual_info_ab(qber, params.eta_ec)?;
    let i_ae = mutual_info_ae_with(params, t, obs.visibility);
    let skr_unclamped = r_sift * (i_ab - i_ae);
    Ok(SkrBreakdown {
        t,
        p_mu,
        eta_dead,
        eta_duty,
        r_sift,
        qber,
        i_ab,
        i_ae,
        skr_unclamped,
        skr: skr_unclamped.max(0.0),
    })
}

/// Evaluates one parameter set against many observations.
pub fn secret_key_rate_batch(
    params: &CowParameters,
    observations: &[ChannelObservables],
    qber_source: QberSource,
    exec: Execution,
) -> Result<Vec<SkrBreakdown>> {
    exec.map(observations, |obs| secret_key_rate(params, obs, qber_source))
        .into_iter()
        .collect()
}

/// Which monotone side of the rate-versus-`mu` curve to invert on.
///
/// The rate rises with `mu` until the sifted rate gain is overtaken by the
/// information leaked to Eve, then falls, so a given rate is generally hit
/// twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuBranch {
    /// `mu` below the rate-maximising value.
    Lower,
    /// `mu` at or above the rate-maximising value.
    #[default]
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuSolveOptions {
    pub branch: MuBranch,
    pub qber_source: QberSource,
    pub mu_min: f64,
    pub mu_max: f64,
    pub max_iter: usize,
    /// Accepted `|skr(mu) - target|`, relative to `max(|target|, 1)`.
    pub rel_tol: f64,
}

impl Default for MuSolveOptions {
    fn default() -> Self {
        MuSolveOptions {
            branch: MuBranch::Upper,
            qber_source: QberSource::Measured,
            mu_min: 1e-4,
            mu_max: 1.0,
            max_iter: 200,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuSolution {
    pub mu: f64,
    /// `skr_unclamped(mu) - target`.
    pub residual: f64,
    pub iterations: usize,
    /// Set when the target is not reachable on the chosen branch and `mu`
    /// is the branch endpoint closest to it.
    pub endpoint: bool,
    /// Rate-maximising `mu` that splits the two branches.
    pub peak_mu: f64,
}

const PEAK_GRID: usize = 96;
const BRACKET_REL_WIDTH: f64 = 1e-13;

/// Finds the `mu` whose unclamped key rate equals `target`.
///
/// Every parameter other than `mu` is taken from `params`. The target is
/// compared against [`SkrBreakdown::skr_unclamped`], so negative targets
/// address the region where the clamped rate is zero. Bisection runs in
/// `ln mu` on the selected branch.
pub fn solve_mu(
    params: &CowParameters,
    obs: &ChannelObservables,
    target: f64,
    opts: &MuSolveOptions,
) -> Result<MuSolution> {
    if !target.is_finite() {
        return Err(Error::Domain(format!("target rate must be finite, got {target}")));
    }
    if !(opts.mu_min > 0.0 && opts.mu_max > opts.mu_min) {
        return Err(Error::Domain(format!(
            "invalid mu bracket [{}, {}]",
            opts.mu_min, opts.mu_max
        )));
    }
    params.with_mu(opts.mu_min).validate()?;
    check_visibility(obs.visibility)?;

    let rate = |mu: f64| -> Result<f64> {
        Ok(secret_key_rate(&params.with_mu(mu), obs, opts.qber_source)?.skr_unclamped)
    };
    let peak_mu = rate_peak(&rate, opts.mu_min, opts.mu_max)?;
    let (lo, hi) = match opts.branch {
        MuBranch::Lower => (opts.mu_min, peak_mu),
        MuBranch::Upper => (peak_mu, opts.mu_max),
    };
    let f = |mu: f64| rate(mu).map(|s| s - target);
    let tol = opts.rel_tol * target.abs().max(1.0);

    let (mut a, mut b) = (lo.ln(), hi.ln());
    let (mut fa, fb) = (f(lo)?, f(hi)?);
    if fa == 0.0 || fb == 0.0 || fa.signum() == fb.signum() {
        let (mu, residual) = if fa.abs() <= fb.abs() { (lo, fa) } else { (hi, fb) };
        let endpoint = residual != 0.0;
        if endpoint {
            log::warn!(
                "target rate {target} not bracketed on {:?} branch; returning endpoint mu = {mu}",
                opts.branch
            );
        }
        return Ok(MuSolution {
            mu,
            residual,
            iterations: 0,
            endpoint,
            peak_mu,
        });
    }

    let mut best = (lo, fa);
    for iteration in 1..=opts.max_iter {
        let mid = 0.5 * (a + b);
        let mu = mid.exp();
        let fm = f(mu)?;
        if fm.abs() < best.1.abs() {
            best = (mu, fm);
        }
        if fm == 0.0 || (b - a) <= BRACKET_REL_WIDTH {
            if best.1.abs() <= tol {
                return Ok(MuSolution {
                    mu: best.0,
                    residual: best.1,
                    iterations: iteration,
                    endpoint: false,
                    peak_mu,
                });
            }
            break;
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: best.1,
    })
}

/// Locates the maximum of `rate` on `[lo, hi]`: log-spaced scan, then
/// golden-section refinement around the best grid point.
fn rate_peak(rate: &impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<f64> {
    let (ll, lh) = (lo.ln(), hi.ln());
    let step = (lh - ll) / (PEAK_GRID - 1) as f64;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..PEAK_GRID {
        let v = rate((ll + step * i as f64).exp())?;
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = ll + step * best_i.saturating_sub(1) as f64;
    let mut b = (ll + step * (best_i + 1) as f64).min(lh);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = rate(c.exp())?;
    let mut fd = rate(d.exp())?;
    while b - a > 1e-12 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = rate(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = rate(d.exp())?;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn obs() -> ChannelObservables {
        ChannelObservables::new(0.02, 0.98).unwrap()
    }

    #[test]
    fn transmittance_values() {
        assert_eq!(transmittance(0.21, 0.0).unwrap(), 1.0);
        // 10^-0.84
        assert_relative_eq!(transmittance(0.21, 40.0).unwrap(), 0.144_543_977_074_592_75, max_relative = 1e-14);
        let t = transmittance(0.23, 52.17).unwrap();
        assert!((linear_to_db(t) - 12.0).abs() < 0.01);
        assert!(transmittance(0.21, -1.0).is_err());
        assert!(transmittance(0.0, 1.0).is_err());
        assert!(transmittance(-0.2, 1.0).is_err());
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // mpmath, 30 digits: 0.499915958164528...
        assert_relative_eq!(binary_entropy(0.11).unwrap(), 0.499_915_958_164_528, max_relative = 1e-13);
        assert!(binary_entropy(-0.01).is_err());
        assert!(binary_entropy(1.01).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn detection_probability_cases() {
        let p = CowParameters::default().with_mu(0.0);
        assert_eq!(detection_probability(&p), 0.0);
        // mpmath: 1 - exp(-0.5 * 10^-0.84 * 10^-0.265 * 0.07)
        let p = CowParameters::default();
        assert_relative_eq!(detection_probability(&p), 0.002_744_551_534_188_025, max_relative = 1e-12);
        let p = CowParameters::default().with_mu(1e6);
        assert!((detection_probability(&p) - 1.0).abs() < 1e-12);
        let mut p = CowParameters::default();
        p.detection = DetectionModel::WithoutDetectorEfficiency;
        assert!(detection_probability(&p) > detection_probability(&CowParameters::default()));
    }

    #[test]
    fn dead_and_duty() {
        let mut p = CowParameters::default();
        p.tau_dead = 0.0;
        assert_eq!(dead_duty_factors(&p, 0.01).0, 1.0);
        let p0 = CowParameters::default().with_length(0.0);
        assert_eq!(dead_duty_factors(&p0, 0.0).1, 0.5);
        let (_, duty) = dead_duty_factors(&CowParameters::default(), 0.0);
        assert_relative_eq!(duty, 10.0 / 60.0, max_relative = 1e-15);
    }

    #[test]
    fn sifted_rate_cases() {
        let mut p = CowParameters::default().with_mu(1e-300);
        p.p_dc = 0.0;
        assert!(sifted_rate(&p) < 1e-200);

        let mut p = CowParameters::default();
        p.tau_dead = 0.0;
        let r1 = sifted_rate(&p);
        p.nu *= 2.0;
        assert_relative_eq!(sifted_rate(&p), 2.0 * r1, max_relative = 1e-14);

        let r = sifted_rate(&CowParameters::default());
        assert!(r.is_finite() && r > 0.0);
    }

    #[test]
    fn model_qber_cases() {
        let mut p = CowParameters::default();
        p.p_dc = 0.0;
        assert_eq!(model_qber(&p, 1.0).unwrap(), 0.0);
        assert_eq!(model_qber(&p, 0.0).unwrap(), 0.5);
        let q = model_qber(&CowParameters::default(), 0.98).unwrap();
        assert!(q > 0.0 && q < 0.05, "{q}");
        let mut dead = CowParameters::default().with_mu(0.0);
        dead.p_dc = 0.0;
        assert!(matches!(model_qber(&dead, 0.9), Err(Error::Degenerate(_))));
        assert!(model_qber(&p, 1.5).is_err());
    }

    #[test]
    fn mutual_info_cases() {
        assert_eq!(mutual_info_ab(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(mutual_info_ab(0.5, 1.0).unwrap(), 0.0);
        assert_relative_eq!(mutual_info_ab(0.11, 1.0).unwrap(), 0.500_084_041_835_472, max_relative = 1e-12);
        assert!(mutual_info_ab(0.1, 0.9).is_err());

        let p = CowParameters::default().at_upper_bound().unwrap();
        let t = transmittance(p.alpha, p.length_km).unwrap();
        let expected = 0.5 / (1.0 + 2.0 * p.p_dc / (p.mu * t * p.eta));
        assert_relative_eq!(mutual_info_ae(&p, 1.0).unwrap(), expected, max_relative = 1e-14);

        let mut noisy = p;
        noisy.p_dc = 0.999;
        noisy.eta = 1e-9;
        assert!(mutual_info_ae(&noisy, 0.98).unwrap() < 1e-6);

        let v = mutual_info_ae(&p, 0.98).unwrap();
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn mutual_info_ae_beyond_two_t_is_finite() {
        let p = CowParameters::default();
        let t = transmittance(p.alpha, p.length_km).unwrap();
        assert!(p.mu / t > 2.0);
        let v = mutual_info_ae(&p, 0.98).unwrap();
        assert!(v.is_finite());
        let at_two = p.with_mu(2.0 * t);
        assert!(mutual_info_ae(&at_two, 0.98).unwrap().is_finite());
        assert!(mutual_info_ae(&at_two, 1.0).unwrap().is_finite());
    }

    #[test]
    fn skr_clamps_at_zero_visibility() {
        let o = ChannelObservables::new(0.02, 0.0).unwrap();
        let defaults = CowParameters::default();
        let upper = defaults.at_upper_bound().unwrap();
        for (p, src) in [
            (defaults, QberSource::Measured),
            (defaults, QberSource::Modeled),
            (upper, QberSource::Modeled),
        ] {
            let b = secret_key_rate(&p, &o, src).unwrap();
            assert!(b.skr_unclamped < 0.0, "{p:?} {src:?}");
            assert_eq!(b.skr, 0.0);
        }
    }

    #[test]
    fn skr_default_magnitude() {
        let p = CowParameters::default().at_upper_bound().unwrap();
        let b = secret_key_rate(&p, &obs(), QberSource::Measured).unwrap();
        assert!(b.skr > 1e2 && b.skr < 1e4, "{}", b.skr);
        assert!(b.i_ab <= 1.0);
        assert!(b.eta_duty > 0.0 && b.eta_duty <= 0.5);
    }

    #[test]
    fn batch_matches_single() {
        let p = CowParameters::default().at_upper_bound().unwrap();
        let observations: Vec<_> = (0..50)
            .map(|i| ChannelObservables::new(0.01 + i as f64 * 1e-3, 0.9 + i as f64 * 1e-3).unwrap())
            .collect();
        let seq = secret_key_rate_batch(&p, &observations, QberSource::Measured, Execution::Sequential).unwrap();
        let par = secret_key_rate_batch(&p, &observations, QberSource::Measured, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq[7], secret_key_rate(&p, &observations[7], QberSource::Measured).unwrap());
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut p = CowParameters::default();
        p.eta = 1.5;
        assert!(p.validate().is_err());
        let mut p = CowParameters::default();
        p.eta_ec = 0.9;
        assert!(p.validate().is_err());
        let mut p = CowParameters::default();
        p.mu = 0.0;
        assert!(p.validate().is_err());
        let mut p = CowParameters::default();
        p.nu = f64::NAN;
        assert!(p.validate().is_err());
        assert!(CowParameters::default().validate().is_ok());
    }

    #[test]
    fn solve_mu_round_trip_lower_and_upper() {
        let base = CowParameters::default();
        let opts = MuSolveOptions::default();
        for mu0 in [0.01, 0.1, 0.5] {
            let target = secret_key_rate(&base.with_mu(mu0), &obs(), opts.qber_source)
                .unwrap()
                .skr_unclamped;
            let probe = solve_mu(&base, &obs(), target, &opts).unwrap();
            let branch = if mu0 < probe.peak_mu { MuBranch::Lower } else { MuBranch::Upper };
            let sol = solve_mu(&base, &obs(), target, &MuSolveOptions { branch, ..opts }).unwrap();
            assert!(!sol.endpoint);
            assert_relative_eq!(sol.mu, mu0, max_relative = 1e-6);
        }
    }

    #[test]
    fn solve_mu_degenerate_target_returns_endpoint() {
        let o = ChannelObservables::new(0.5, 0.0).unwrap();
        let opts = MuSolveOptions {
            qber_source: QberSource::Modeled,
            ..Default::default()
        };
        let sol = solve_mu(&CowParameters::default(), &o, 0.0, &opts).unwrap();
        assert!(sol.endpoint);
        assert!(sol.mu == opts.mu_max || sol.mu == sol.peak_mu);
        let clamped = secret_key_rate(&CowParameters::default().with_mu(sol.mu), &o, opts.qber_source)
            .unwrap()
            .skr;
        assert_eq!(clamped, 0.0);
    }

    #[test]
    fn solve_mu_rejects_bad_input() {
        let opts = MuSolveOptions::default();
        assert!(solve_mu(&CowParameters::default(), &obs(), f64::NAN, &opts).is_err());
        let bad = MuSolveOptions { mu_min: 0.5, mu_max: 0.1, ..opts };
        assert!(solve_mu(&CowParameters::default(), &obs(), 100.0, &bad).is_err());
    }
}
