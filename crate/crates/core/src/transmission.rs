//! Dynamical correction to the saddle flux: wave-equation shots from the
//! saddle-conditioned Gibbs measure, classified by which side they reach
//! first.

use rayon::prelude::*;

use crate::dynamics::{Integrator, IntegratorConfig};
use crate::error::{Error, Result};
use crate::gibbs::{sample_conditioned_saddle, GibbsConfig};
use crate::rng::stream;
use crate::spectral::{SpectralField, TorusSpec};
use crate::stats::{mean_se, wilson, Z95};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransmissionConfig {
    pub spec: TorusSpec,
    pub beta: f64,
    pub wick_c: f64,
    /// Well threshold `δ ∈ (0, ½)`.
    pub delta: f64,
    pub dt: f64,
    pub t_max: f64,
    pub shots: usize,
    /// Chain steps before each saddle sample.
    pub burn_in: usize,
    /// Sobolev index `ε` of the oscillatory diagnostic.
    pub epsilon: f64,
    pub seed: u64,
}

impl TransmissionConfig {
    /// Horizon `2δ^{−1/2} log β` within which transmitted shots reach the well.
    pub fn a_priori_horizon(&self) -> f64 {
        2.0 / self.delta.sqrt() * self.beta.ln()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::InvalidArgument(format!("delta = {} must lie in (0, 0.5)", self.delta)));
        }
        if !(self.beta > 1.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta = {} must exceed 1", self.beta)));
        }
        if !(self.dt > 0.0) || self.shots == 0 {
            return Err(Error::InvalidArgument("dt and shot count must be positive".into()));
        }
        if self.t_max < self.a_priori_horizon() {
            return Err(Error::InvalidArgument(format!(
                "t_max = {} is below the horizon 2δ^(-1/2) log β = {}",
                self.t_max,
                self.a_priori_horizon()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Transmitted,
    Recrossed,
    TimedOut,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Transmitted => "transmitted",
            Outcome::Recrossed => "recrossed",
            Outcome::TimedOut => "timed-out",
        }
    }
}

/// First-passage times of one shot; `f64::INFINITY` when not reached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HittingRecord {
    /// First time the zero mode reaches `1 − δ`.
    pub tau: f64,
    /// First time after the start the zero mode is `≤ 0`.
    pub sigma: f64,
    /// First time the zero mode reaches `δ`.
    pub theta: f64,
    /// Initial zero-mode velocity.
    pub q: f64,
    pub outcome: Outcome,
}

fn interpolate(t0: f64, t1: f64, x0: f64, x1: f64, level: f64) -> f64 {
    if x1 == x0 {
        t1
    } else {
        t0 + (t1 - t0) * (level - x0) / (x1 - x0)
    }
}

/// Incremental first-passage detector.
#[derive(Clone, Debug)]
pub struct HittingDetector {
    delta: f64,
    q: f64,
    last: (f64, f64),
    tau: f64,
    sigma: f64,
    theta: f64,
}

impl HittingDetector {
    pub fn new(t0: f64, x0: f64, delta: f64, q: f64) -> Result<Self> {
        if x0.abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("series starts at {x0}, not at the saddle")));
        }
        Ok(HittingDetector { delta, q, last: (t0, x0), tau: f64::INFINITY, sigma: f64::INFINITY, theta: f64::INFINITY })
    }

    /// Feeds the next sample; returns `true` once the outcome is decided.
    pub fn push(&mut self, t: f64, x: f64) -> bool {
        let (tp, xp) = self.last;
        let up = 1.0 - self.delta;
        if self.theta.is_infinite() && x >= self.delta {
            self.theta = interpolate(tp, t, xp, x, self.delta);
        }
        if self.tau.is_infinite() && x >= up {
            self.tau = interpolate(tp, t, xp, x, up);
        }
        if self.sigma.is_infinite() && x <= 0.0 {
            self.sigma = if xp <= 0.0 { tp } else { interpolate(tp, t, xp, x, 0.0) };
        }
        self.last = (t, x);
        self.decided()
    }

    pub fn decided(&self) -> bool {
        self.tau.is_finite() || self.sigma.is_finite()
    }

    pub fn record(&self) -> HittingRecord {
        let outcome = if self.tau < self.sigma {
            Outcome::Transmitted
        } else if self.sigma.is_finite() {
            Outcome::Recrossed
        } else {
            Outcome::TimedOut
        };
        HittingRecord { tau: self.tau, sigma: self.sigma, theta: self.theta, q: self.q, outcome }
    }
}

/// First-passage times of a zero-mode series started at the saddle, by
/// linear interpolation between samples.
pub fn detect_hitting(times: &[f64], series: &[f64], delta: f64, q: f64) -> Result<HittingRecord> {
    if times.len() != series.len() || times.is_empty() {
        return Err(Error::InvalidArgument("times and series must be non-empty and of equal length".into()));
    }
    let mut det = HittingDetector::new(times[0], series[0], delta, q)?;
    for (&t, &x) in times.iter().zip(series).skip(1) {
        if det.push(t, x) {
            break;
        }
    }
    Ok(det.record())
}

/// `[max(0, 2p − 1), 1]`.
pub fn correction_bounds(p: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p = {p} is not a probability")));
    }
    Ok(((2.0 * p - 1.0).max(0.0), 1.0))
}

pub fn corrected_rate(tst_rate: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p = {p} is not a probability")));
    }
    Ok(tst_rate * p)
}

/// Oscillatory size of a transmitted shot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaddleDiagnostics {
    /// `‖Π_⊥ u(τ₊)‖_{H^{−ε}}`.
    pub norm_at_tau: f64,
    /// `max_{t ≤ τ₊} ‖Π_⊥ u(t)‖_{H^{−ε}}`.
    pub envelope: f64,
    /// `norm_at_tau / β^{−1/2+ε}`.
    pub ratio: f64,
}

/// `‖Π_⊥ u‖_{H^{s}}`.
pub fn perp_sobolev_norm(u: &SpectralField, s: f64) -> f64 {
    u.c.iter()
        .zip(&u.modes.k2)
        .filter(|(_, &k2)| k2 > 0)
        .map(|(c, &k2)| (1.0 + k2 as f64).powf(s) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Diagnostics from the oscillatory states along a shot up to `τ₊`.
pub fn saddle_diagnostics(states: &[(f64, SpectralField)], tau: f64, beta: f64, epsilon: f64) -> SaddleDiagnostics {
    let mut envelope: f64 = 0.0;
    let mut at_tau = 0.0;
    for (t, u) in states {
        if *t > tau {
            break;
        }
        let n = perp_sobolev_norm(u, -epsilon);
        envelope = envelope.max(n);
        at_tau = n;
    }
    SaddleDiagnostics { norm_at_tau: at_tau, envelope, ratio: at_tau / beta.powf(-0.5 + epsilon) }
}

/// Result of the growth envelope check on a transmitted shot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeCheck {
    pub pass: bool,
    /// `min_{0<t≤τ₊} (3Q/2) sinh(t) / w(t)`; at least 1 when the upper
    /// envelope holds.
    pub margin: f64,
    /// The zero mode stayed positive on `(0, τ₊]`.
    pub positive: bool,
    /// `τ₊ ≤ 2δ^{−1/2} log β`.
    pub within_horizon: bool,
}

/// Checks `0 < w(t) ≤ (3Q/2) sinh t` for sampled `t ≤ τ₊` and the horizon
/// bound on `τ₊`.
pub fn sinh_envelope_check(record: &HittingRecord, times: &[f64], series: &[f64], delta: f64, beta: f64) -> EnvelopeCheck {
    let mut margin = f64::INFINITY;
    let mut positive = true;
    for (&t, &w) in times.iter().zip(series) {
        if t <= 0.0 {
            continue;
        }
        if t > record.tau {
            break;
        }
        if w <= 0.0 {
            positive = false;
            continue;
        }
        margin = margin.min(1.5 * record.q * t.sinh() / w);
    }
    let within_horizon = record.tau <= 2.0 / delta.sqrt() * beta.ln();
    EnvelopeCheck { pass: positive && margin >= 1.0 && within_horizon, margin, positive, within_horizon }
}

/// Everything recorded about one shot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShotResult {
    pub record: HittingRecord,
    pub envelope: Option<EnvelopeCheck>,
    pub diagnostics: Option<SaddleDiagnostics>,
}

/// Runs one shot from a saddle phase point with the wave equation.
pub fn run_shot(config: &TransmissionConfig, shot: u64) -> Result<ShotResult> {
    let mut rng = stream(config.seed, shot);
    let gibbs = GibbsConfig::phi4(config.spec, config.beta, config.wick_c);
    let mut s = sample_conditioned_saddle(gibbs, config.burn_in, &mut rng)?;
    let modes = s.u.modes.clone();
    let q = s.v.zero_mode();
    let mut integ = Integrator::new(&modes, IntegratorConfig::nlw(config.dt, config.wick_c))?;
    let mut det = HittingDetector::new(0.0, s.u.zero_mode(), config.delta, q)?;
    let steps = (config.t_max / config.dt).ceil() as usize;
    let mut times = vec![0.0];
    let mut series = vec![s.u.zero_mode()];
    let mut norms = vec![perp_sobolev_norm(&s.u, -config.epsilon)];
    for n in 1..=steps {
        integ.nlw_step(&mut s);
        let t = n as f64 * config.dt;
        let x = s.u.zero_mode();
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("zero mode at step {n} of shot {shot}")));
        }
        times.push(t);
        series.push(x);
        norms.push(perp_sobolev_norm(&s.u, -config.epsilon));
        if det.push(t, x) {
            break;
        }
    }
    let record = det.record();
    let (envelope, diagnostics) = if record.outcome == Outcome::Transmitted {
        let env = sinh_envelope_check(&record, &times, &series, config.delta, config.beta);
        // The run stops at the first sample past τ₊.
        let at_tau = *norms.last().expect("non-empty");
        let diag = SaddleDiagnostics {
            norm_at_tau: at_tau,
            envelope: norms.iter().cloned().fold(0.0, f64::max),
            ratio: at_tau / config.beta.powf(-0.5 + config.epsilon),
        };
        (Some(env), Some(diag))
    } else {
        (None, None)
    };
    Ok(ShotResult { record, envelope, diagnostics })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionEstimate {
    pub beta: f64,
    pub p_hat: f64,
    pub wilson: (f64, f64),
    pub bounds: (f64, f64),
    pub transmitted: usize,
    pub recrossed: usize,
    pub timed_out: usize,
    /// Fraction of transmitted shots failing the envelope check.
    pub envelope_violations: f64,
    /// 95th percentile of the oscillatory ratio over transmitted shots.
    pub ratio_p95: f64,
    pub mean_q: (f64, f64),
    pub warning: Option<String>,
    pub shots: Vec<ShotResult>,
}

/// Shoots `config.shots` independent saddle samples (shot `i` uses stream `i`).
pub fn estimate_transmission(config: &TransmissionConfig) -> Result<TransmissionEstimate> {
    config.validate()?;
    let shots: Vec<ShotResult> =
        (0..config.shots as u64).into_par_iter().map(|i| run_shot(config, i)).collect::<Result<Vec<_>>>()?;
    summarize(config.beta, shots)
}

pub fn summarize(beta: f64, shots: Vec<ShotResult>) -> Result<TransmissionEstimate> {
    let count = |o: Outcome| shots.iter().filter(|s| s.record.outcome == o).count();
    let (transmitted, recrossed, timed_out) = (count(Outcome::Transmitted), count(Outcome::Recrossed), count(Outcome::TimedOut));
    let decided = transmitted + recrossed;
    if decided == 0 {
        return Err(Error::Degenerate("every shot timed out".into()));
    }
    let p_hat = transmitted as f64 / decided as f64;
    let warning = (timed_out as f64 > 0.01 * shots.len() as f64)
        .then(|| format!("{timed_out} of {} shots timed out and were excluded", shots.len()));
    let checks: Vec<&EnvelopeCheck> = shots.iter().filter_map(|s| s.envelope.as_ref()).collect();
    let envelope_violations =
        if checks.is_empty() { 0.0 } else { checks.iter().filter(|c| !c.pass).count() as f64 / checks.len() as f64 };
    let mut ratios: Vec<f64> = shots.iter().filter_map(|s| s.diagnostics.map(|d| d.ratio)).collect();
    ratios.sort_by(|a, b| a.total_cmp(b));
    let ratio_p95 = if ratios.is_empty() { f64::NAN } else { ratios[((ratios.len() as f64 * 0.95) as usize).min(ratios.len() - 1)] };
    let qs: Vec<f64> = shots.iter().map(|s| s.record.q).collect();
    Ok(TransmissionEstimate {
        beta,
        p_hat,
        wilson: wilson(transmitted, decided, Z95),
        bounds: correction_bounds(p_hat)?,
        transmitted,
        recrossed,
        timed_out,
        envelope_violations,
        ratio_p95,
        mean_q: mean_se(&qs),
        warning,
        shots,
    })
}

/// Estimates over a list of inverse temperatures sharing the rest of `base`.
pub fn transmission_table(base: &TransmissionConfig, betas: &[f64], wick_c: impl Fn(f64) -> f64) -> Result<Vec<TransmissionEstimate>> {
    betas
        .iter()
        .map(|&beta| {
            let t_max = base.t_max.max(2.0 / base.delta.sqrt() * beta.ln());
            estimate_transmission(&TransmissionConfig { beta, wick_c: wick_c(beta), t_max, ..*base })
        })
        .collect()
}
