//! Crossing statistics of the zero mode and closed-form Eyring–Kramers
//! rates and hitting times.

use std::f64::consts::PI;

use crate::dynamics::{Integrator, IntegratorConfig, NoiseSource};
use crate::error::{Error, Result};
use crate::gibbs::{sample_white_noise, GibbsConfig, GibbsSampler};
use crate::rng::{stream, uniform};
use crate::spectral::{shell_counts, wick_sum, MassKind, ModeSet, PhaseState, SpectralField, TorusSpec};
use crate::stats::mean_se;

/// Level crossings of a sampled signal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CrossingRecord {
    /// Interpolated crossing times, strictly increasing.
    pub times: Vec<f64>,
    /// `+1` for upward, `−1` for downward crossings.
    pub directions: Vec<i8>,
    pub up: usize,
    pub down: usize,
    pub t0: f64,
    /// Observation span `T`.
    pub span: f64,
}

impl CrossingRecord {
    pub fn total(&self) -> usize {
        self.up + self.down
    }

    /// Appends `other` shifted to start where `self` ends.
    pub fn append(&mut self, other: &CrossingRecord) {
        let shift = self.t0 + self.span - other.t0;
        self.times.extend(other.times.iter().map(|t| t + shift));
        self.directions.extend_from_slice(&other.directions);
        self.up += other.up;
        self.down += other.down;
        self.span += other.span;
    }
}

/// Crossings of `level` by the piecewise-linear interpolant of
/// `(times, values)`. Samples equal to the level are skipped, so touching
/// the level without changing side is not a crossing.
pub fn count_crossings(times: &[f64], values: &[f64], level: f64) -> Result<CrossingRecord> {
    if times.len() != values.len() {
        return Err(Error::InvalidArgument("times and values differ in length".into()));
    }
    if times.len() < 2 {
        return Err(Error::InvalidArgument("a series needs at least two samples".into()));
    }
    if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!("time stamps are not increasing at index {}", i + 1)));
    }
    let mut rec = CrossingRecord { t0: times[0], span: times[times.len() - 1] - times[0], ..Default::default() };
    let mut last: Option<usize> = None;
    for (i, &x) in values.iter().enumerate() {
        let s = x - level;
        if s == 0.0 {
            continue;
        }
        if let Some(j) = last {
            let sj = values[j] - level;
            if (sj < 0.0) != (s < 0.0) {
                let t = times[j] + (times[i] - times[j]) * sj / (sj - s);
                rec.times.push(t);
                if s > 0.0 {
                    rec.directions.push(1);
                    rec.up += 1;
                } else {
                    rec.directions.push(-1);
                    rec.down += 1;
                }
            }
        }
        last = Some(i);
    }
    Ok(rec)
}

/// Crossing frequency with its batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateEstimate {
    pub rate: f64,
    pub se: f64,
    pub count: usize,
    /// No crossings were observed.
    pub degenerate: bool,
}

/// Bidirectional crossings per unit time, with the error from `batches`
/// equal time slices (at least 20).
pub fn empirical_rate(record: &CrossingRecord, batches: usize) -> Result<RateEstimate> {
    if !(record.span > 0.0) {
        return Err(Error::InvalidArgument("observation span must be positive".into()));
    }
    let count = record.total();
    if count == 0 {
        return Ok(RateEstimate { rate: 0.0, se: 0.0, count, degenerate: true });
    }
    let b = batches.max(20);
    let width = record.span / b as f64;
    let mut per = vec![0.0; b];
    for &t in &record.times {
        let i = (((t - record.t0) / width) as usize).min(b - 1);
        per[i] += 1.0 / width;
    }
    let se = mean_se(&per).1;
    Ok(RateEstimate { rate: count as f64 / record.span, se, count, degenerate: false })
}

/// `E max{0, v̂(0)} = √(1/(2πβL^d))` under white noise.
pub fn white_noise_mean_factor(beta: f64, spec: TorusSpec) -> f64 {
    (1.0 / (2.0 * PI * beta * spec.volume())).sqrt()
}

/// Which closed form a prediction comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formula {
    /// Renormalized transition frequency in `d ∈ {2, 3}`.
    RenormalizedRate,
    /// Wave-equation transition frequency in `d = 1`.
    WaveRate1d,
    /// Heat-equation mean hitting time in `d = 1` as printed.
    HeatHitting1d,
    /// Heat-equation mean hitting time in `d = 1`, finite-dimensional
    /// Eyring–Kramers normalization.
    HeatHitting1dStandard,
    /// Renormalized heat-equation mean hitting time in `d = 2`.
    HeatHitting2d,
    /// Flux through the saddle from the saddle density.
    TstIdentity,
}

impl Formula {
    pub fn name(self) -> &'static str {
        match self {
            Formula::RenormalizedRate => "renormalized-rate",
            Formula::WaveRate1d => "wave-rate-1d",
            Formula::HeatHitting1d => "heat-hitting-1d",
            Formula::HeatHitting1dStandard => "heat-hitting-1d-standard",
            Formula::HeatHitting2d => "heat-hitting-2d",
            Formula::TstIdentity => "tst-identity",
        }
    }
}

/// `prefactor · exp(exponent)`; a rate or, for hitting formulas, a time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatePrediction {
    pub formula: Formula,
    pub prefactor: f64,
    pub exponent: f64,
    pub rate: f64,
}

impl RatePrediction {
    fn new(formula: Formula, prefactor: f64, exponent: f64) -> Self {
        RatePrediction { formula, prefactor, exponent, rate: prefactor * exponent.exp() }
    }
}

/// `½ log((y + 2)/|y − 1|)` for `y = C_L|k|²`.
fn half_log_ratio(y: f64) -> f64 {
    0.5 * ((y + 2.0) / (y - 1.0).abs()).ln()
}

/// `log ∏_{k ∈ K_N} √((C_L|k|² + 2)/|C_L|k|² − 1|)`.
pub fn log_prefactor_product(spec: TorusSpec) -> f64 {
    let c_l = spec.c_l();
    shell_counts(spec)
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(k2, &n)| n as f64 * half_log_ratio(c_l * k2 as f64))
        .sum()
}

pub fn prefactor_product(spec: TorusSpec) -> f64 {
    log_prefactor_product(spec).exp()
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("beta = {beta} must be positive and finite")))
    }
}

/// `L^d · C_N` at `β = 1` for the negative mass.
fn renormalization_sum(spec: TorusSpec) -> f64 {
    wick_sum(spec, MassKind::NegativeUnit)
}

/// `(1/2π) ∏_{K_N} √((C_L|k|²+2)/|C_L|k|²−1|) · exp(−3C_N L^d/2) · exp(−βL^d/4)`.
pub fn rate_main(beta: f64, spec: TorusSpec) -> Result<RatePrediction> {
    check_beta(beta)?;
    if !(spec.d == 2 || spec.d == 3) {
        return Err(Error::InvalidArgument(format!("renormalized rate needs d = 2 or 3, got {}", spec.d)));
    }
    let log_pref = log_prefactor_product(spec) - 1.5 * renormalization_sum(spec) - (2.0 * PI).ln();
    Ok(RatePrediction::new(Formula::RenormalizedRate, log_pref.exp(), -beta * spec.volume() / 4.0))
}

/// `log ∏_{k ∈ Z} √((C_L k² + 2)/|C_L k² − 1|)` in `d = 1` to absolute
/// accuracy `tol`.
///
/// For `k ≠ 0` the logarithm is split as `3/(2(y−1)) + r(y)` with
/// `|r(y)| ≤ 5/(y−1)²`; the first part is summed in closed form through
/// `Σ_{k∈Z} 1/(k² − a²) = −π cot(πa)/a` and `r` is summed until the
/// analytic tail bound drops below `tol`.
pub fn log_wave_product_1d(l: f64, tol: f64) -> (f64, u64) {
    let c_l = (2.0 * PI / l).powi(2);
    let a = l / (2.0 * PI);
    let sum_all = -PI / (PI * a).tan() / a / c_l;
    let sum_nonzero = sum_all + 1.0;
    let mut log = 0.5 * 2f64.ln() + 1.5 * sum_nonzero;
    let mut k: u64 = 1;
    loop {
        let y = c_l * (k * k) as f64;
        log += 2.0 * (half_log_ratio(y) - 1.5 / (y - 1.0));
        // Σ_{j>k} 2·5/(C_L j² − 1)² ≤ 10 ∫_k^∞ dx/(C_L x² − 1)² ≤ 10k/(3(C_L k² − 1)²).
        let yk = c_l * (k * k) as f64 - 1.0;
        let tail = 10.0 * k as f64 / (3.0 * yk * yk);
        if tail < tol {
            return (log, k);
        }
        k += 1;
    }
}

/// `(1/2π) ∏_{k∈Z} √((C_L k²+2)/|C_L k²−1|) · exp(−βL/4)`.
pub fn rate_nlw_1d(beta: f64, spec: TorusSpec) -> Result<RatePrediction> {
    check_beta(beta)?;
    require_d(spec, 1)?;
    let (log, _) = log_wave_product_1d(spec.l, 1e-12);
    Ok(RatePrediction::new(Formula::WaveRate1d, (log - (2.0 * PI).ln()).exp(), -beta * spec.l / 4.0))
}

fn require_d(spec: TorusSpec, d: usize) -> Result<()> {
    if spec.d == d {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("formula needs d = {d}, got {}", spec.d)))
    }
}

/// `√2 π ∏_{k∈Z} √(|C_L k²−1|/(C_L k²+2)) · exp(β/4)`, as printed.
pub fn hitting_time_she_1d(beta: f64, spec: TorusSpec) -> Result<RatePrediction> {
    check_beta(beta)?;
    require_d(spec, 1)?;
    let (log, _) = log_wave_product_1d(spec.l, 1e-12);
    Ok(RatePrediction::new(Formula::HeatHitting1d, 2f64.sqrt() * PI * (-log).exp(), beta / 4.0))
}

/// `2π / |λ₀| · √(|det Hess_saddle| / det Hess_min) · exp(βL/4)`, the
/// finite-dimensional Eyring–Kramers normalization of the same quantity.
pub fn hitting_time_she_1d_standard(beta: f64, spec: TorusSpec) -> Result<RatePrediction> {
    check_beta(beta)?;
    require_d(spec, 1)?;
    let (log, _) = log_wave_product_1d(spec.l, 1e-12);
    Ok(RatePrediction::new(Formula::HeatHitting1dStandard, 2.0 * PI * (-log).exp(), beta * spec.l / 4.0))
}

/// `2π √(∏_{K_N} |C_L|k|²−1|/(C_L|k|²+2)) · exp(3C_N L²/2) · exp(βL²/4)`.
pub fn hitting_time_she_2d(beta: f64, spec: TorusSpec) -> Result<RatePrediction> {
    check_beta(beta)?;
    require_d(spec, 2)?;
    let log_pref = (2.0 * PI).ln() - log_prefactor_product(spec) + 1.5 * renormalization_sum(spec);
    Ok(RatePrediction::new(Formula::HeatHitting2d, log_pref.exp(), beta * spec.volume() / 4.0))
}

/// One row of the renormalized prefactor table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrefactorRow {
    pub spec: TorusSpec,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrefactorTable {
    pub rows: Vec<PrefactorRow>,
    pub min: f64,
    pub max: f64,
    /// `|q_{next} − q|` between consecutive rows.
    pub differences: Vec<f64>,
}

/// `q_N = ∏_{0<|k|≤N} √((C_L|k|²+2)/(C_L|k|²−1)) · exp(−3C_N L^d/2)`.
pub fn renormalized_prefactor(spec: TorusSpec) -> Result<f64> {
    if !(spec.d == 2 || spec.d == 3) {
        return Err(Error::InvalidArgument(format!("renormalized prefactor needs d = 2 or 3, got {}", spec.d)));
    }
    let c_l = spec.c_l();
    let log: f64 = shell_counts(spec)
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &n)| n > 0)
        .map(|(k2, &n)| {
            let y = c_l * k2 as f64;
            n as f64 * (0.5 * (3.0 / (y - 1.0)).ln_1p() - 1.5 / (y - 1.0))
        })
        .sum();
    Ok(log.exp())
}

pub fn renormalized_prefactor_bound(specs: &[TorusSpec]) -> Result<PrefactorTable> {
    let rows = specs
        .iter()
        .map(|&spec| renormalized_prefactor(spec).map(|q| PrefactorRow { spec, q }))
        .collect::<Result<Vec<_>>>()?;
    let min = rows.iter().map(|r| r.q).fold(f64::INFINITY, f64::min);
    let max = rows.iter().map(|r| r.q).fold(f64::NEG_INFINITY, f64::max);
    let differences = rows.windows(2).map(|w| (w[1].q - w[0].q).abs()).collect();
    Ok(PrefactorTable { rows, min, max, differences })
}

/// `2 √(1/(2πβL^d)) · ratio`.
pub fn tst_identity_rate(saddle_ratio: f64, beta: f64, spec: TorusSpec) -> Result<RatePrediction> {
    check_beta(beta)?;
    if !(saddle_ratio > 0.0) {
        return Err(Error::InvalidArgument(format!("saddle ratio {saddle_ratio} must be positive")));
    }
    Ok(RatePrediction::new(Formula::TstIdentity, 2.0 * white_noise_mean_factor(beta, spec) * saddle_ratio, 0.0))
}

/// Stationary crossing experiment: wave-equation segments of length
/// `segment`, each started from a fresh white-noise velocity, glued by a
/// Metropolis test on the energy so that Gibbs × white noise is preserved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossingRunConfig {
    pub spec: TorusSpec,
    pub beta: f64,
    pub wick_c: f64,
    pub dt: f64,
    pub segment: f64,
    /// Total observed time across all replicas.
    pub total_time: f64,
    /// Unobserved segments per replica before counting.
    pub burn_in: usize,
    pub replicas: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossingRun {
    pub record: CrossingRecord,
    pub acceptance: f64,
    pub segments: usize,
}

/// Runs the stationary crossing experiment; replica `r` uses stream `r`.
pub fn stationary_crossings(cfg: &CrossingRunConfig) -> Result<CrossingRun> {
    use rayon::prelude::*;
    check_beta(cfg.beta)?;
    if !(cfg.segment >= cfg.dt && cfg.total_time > 0.0 && cfg.replicas > 0) {
        return Err(Error::InvalidArgument("segment, total time and replica count must be positive".into()));
    }
    let steps = (cfg.segment / cfg.dt).round() as usize;
    let per_replica = (cfg.total_time / cfg.segment / cfg.replicas as f64).ceil() as usize;
    let modes = ModeSet::new(cfg.spec);
    let runs = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<(CrossingRecord, usize)> {
            let mut rng = stream(cfg.seed, r as u64);
            let mut gibbs = GibbsSampler::new(
                GibbsConfig { flip_every: 10, ..GibbsConfig::phi4(cfg.spec, cfg.beta, cfg.wick_c) },
                &SpectralField::constant(&modes, 1.0),
                None,
                false,
            )?;
            gibbs.tune(2000, 0.6, &mut rng);
            let mut u = gibbs.state();
            let mut integ = Integrator::new(&modes, IntegratorConfig::nlw(cfg.dt, cfg.wick_c))?;
            let times: Vec<f64> = (0..=steps).map(|i| i as f64 * cfg.dt).collect();
            let mut values = vec![0.0; steps + 1];
            let mut record = CrossingRecord::default();
            let mut accepted = 0;
            for seg in 0..cfg.burn_in + per_replica {
                let mut s = PhaseState { u: u.clone(), v: sample_white_noise(&modes, cfg.beta, &mut rng) };
                let h0 = integ.energy(&s);
                values[0] = s.u.zero_mode();
                for v in values.iter_mut().skip(1) {
                    integ.nlw_step(&mut s);
                    *v = s.u.zero_mode();
                }
                let h1 = integ.energy(&s);
                if !h1.is_finite() {
                    return Err(Error::NonFinite(format!("energy after segment {seg}")));
                }
                if seg >= cfg.burn_in {
                    let rec = count_crossings(&times, &values, 0.0)?;
                    if record.span == 0.0 {
                        record = rec;
                    } else {
                        record.append(&rec);
                    }
                }
                let log_a = -cfg.beta * (h1 - h0);
                if log_a >= 0.0 || uniform(&mut rng) < log_a.exp() {
                    u = s.u;
                    if seg >= cfg.burn_in {
                        accepted += 1;
                    }
                }
                if uniform(&mut rng) < 0.5 {
                    u = u.scaled(-1.0);
                }
            }
            Ok((record, accepted))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut record = CrossingRecord::default();
    let mut accepted = 0;
    for (rec, acc) in runs {
        if record.span == 0.0 {
            record = rec;
        } else {
            record.append(&rec);
        }
        accepted += acc;
    }
    let segments = per_replica * cfg.replicas;
    Ok(CrossingRun { record, acceptance: accepted as f64 / segments as f64, segments })
}

/// Mean first hitting time of `{û(0) ≤ −(1−δ)}` by the heat equation
/// started at `u ≡ 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HittingConfig {
    pub spec: TorusSpec,
    pub beta: f64,
    pub wick_c: f64,
    pub delta: f64,
    pub dt: f64,
    pub runs: usize,
    pub max_time: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HittingSample {
    pub times: Vec<f64>,
    pub timeouts: usize,
    pub mean: f64,
    pub se: f64,
}

pub fn she_hitting_times(cfg: &HittingConfig) -> Result<HittingSample> {
    use rayon::prelude::*;
    check_beta(cfg.beta)?;
    let modes = ModeSet::new(cfg.spec);
    let target = -(1.0 - cfg.delta);
    let outcomes = (0..cfg.runs)
        .into_par_iter()
        .map(|r| -> Result<Option<f64>> {
            let mut noise = NoiseSource::new(stream(cfg.seed, r as u64));
            let mut integ = Integrator::new(&modes, IntegratorConfig::she(cfg.dt, cfg.beta, cfg.wick_c))?;
            let mut u = SpectralField::constant(&modes, 1.0);
            let max_steps = (cfg.max_time / cfg.dt).ceil() as usize;
            let mut prev = u.zero_mode();
            for n in 1..=max_steps {
                integ.she_step(&mut u, &mut noise);
                let z = u.zero_mode();
                if !z.is_finite() {
                    return Err(Error::NonFinite(format!("zero mode at step {n} of run {r}")));
                }
                if z <= target {
                    let frac = (prev - target) / (prev - z);
                    return Ok(Some((n as f64 - 1.0 + frac) * cfg.dt));
                }
                prev = z;
            }
            Ok(None)
        })
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let timeouts = outcomes.len() - times.len();
    if times.is_empty() {
        return Err(Error::Degenerate("no run reached the target well".into()));
    }
    let (mean, se) = mean_se(&times);
    Ok(HittingSample { times, timeouts, mean, se })
}
