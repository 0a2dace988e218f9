//! Stochastic-control representation of `−log E e^{−V(φ)}` for the
//! truncated Gaussian free field: the `ρ_t`/`σ_t` schedule, the `J_t` and
//! `I_T` operators, drift strategies and a Monte-Carlo oracle.
//!
//! Brownian coefficients follow `E|B^k_t|² = t/L^d`, so `φ_T = I_T[dB]` has
//! covariance `ρ_T(k)²/(L^d(±m² + C_L|k|²))` and a drift `v` costs
//! `½∫ L^d Σ_k |v̂_t(k)|² dt`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::spectral::{fill_gaussian, Complex64, MassKind, ModeSet, PointwiseKernel, SpectralField, TorusSpec};
use crate::stats::mean_se;

/// Bump profile: 1 on `s ≤ 1`, 0 on `s ≥ 2`, quintic in between with
/// vanishing first and second derivatives at both ends.
pub fn rho_profile(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let x = s - 1.0;
        1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

fn rho_profile_derivative(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        0.0
    } else {
        let x = s - 1.0;
        -30.0 * x * x * (1.0 - x) * (1.0 - x)
    }
}

fn bracket(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// Time grid and per-mode schedule on a torus.
#[derive(Clone, Debug)]
pub struct RhoSchedule {
    pub modes: Arc<ModeSet>,
    pub mass_kind: MassKind,
    pub t_end: f64,
    /// Grid points per doubling of `⟨t⟩`.
    pub per_octave: usize,
    pub times: Vec<f64>,
    /// `σ̄_i(k)/√λ_k` on cell `i`, indexed `[cell][mode]`.
    jbar: Vec<Vec<f64>>,
}

impl RhoSchedule {
    /// Default schedule: `T_end = 2N + 2`, 64 points per octave.
    pub fn new(spec: TorusSpec, mass_kind: MassKind) -> Result<Self> {
        Self::with_grid(spec, mass_kind, 2.0 * spec.n as f64 + 2.0, 64)
    }

    /// Grid geometric in `⟨t⟩`: `ln⟨t_i⟩` uniform with spacing `ln 2 / per_octave`.
    pub fn with_grid(spec: TorusSpec, mass_kind: MassKind, t_end: f64, per_octave: usize) -> Result<Self> {
        spec.validate()?;
        if !(t_end > 0.0) || per_octave == 0 {
            return Err(Error::InvalidArgument("schedule needs a positive end time and grid density".into()));
        }
        let s_end = bracket(t_end).ln();
        let cells = ((s_end / (std::f64::consts::LN_2 / per_octave as f64)).ceil() as usize).max(1);
        let mut times: Vec<f64> =
            (0..=cells).map(|i| ((2.0 * s_end * i as f64 / cells as f64).exp() - 1.0).max(0.0).sqrt()).collect();
        times[cells] = t_end;
        let modes = ModeSet::new(spec);
        let mut sched = RhoSchedule { modes, mass_kind, t_end, per_octave, times, jbar: Vec::new() };
        sched.jbar = (0..cells)
            .map(|i| {
                let (t0, t1) = (sched.times[i], sched.times[i + 1]);
                sched
                    .modes
                    .k2
                    .iter()
                    .map(|&k2| {
                        let lam = mass_kind.eigenvalue(spec.c_l(), k2);
                        if lam <= 0.0 {
                            return 0.0;
                        }
                        let d = sched.rho_t(k2, t1).powi(2) - sched.rho_t(k2, t0).powi(2);
                        (d.max(0.0) / (t1 - t0)).sqrt() / lam.sqrt()
                    })
                    .collect()
            })
            .collect();
        Ok(sched)
    }

    pub fn spec(&self) -> TorusSpec {
        self.modes.spec
    }

    pub fn cells(&self) -> usize {
        self.times.len() - 1
    }

    /// `ρ_t(k) = ρ(2⟨k⟩/⟨t⟩)`.
    pub fn rho_t(&self, k2: u32, t: f64) -> f64 {
        rho_profile(2.0 * bracket((k2 as f64).sqrt()) / bracket(t))
    }

    /// `σ_t(k)² = ∂_t ρ_t(k)²`.
    pub fn sigma_sq(&self, k2: u32, t: f64) -> f64 {
        let kb = bracket((k2 as f64).sqrt());
        let tb = bracket(t);
        let s = 2.0 * kb / tb;
        let ds_dt = -2.0 * kb * t / (tb * tb * tb);
        (2.0 * rho_profile(s) * rho_profile_derivative(s) * ds_dt).max(0.0)
    }

    /// Cell-averaged `σ̄_i(k)/√λ_k`.
    pub fn jbar(&self, cell: usize) -> &[f64] {
        &self.jbar[cell]
    }

    /// Cell-averaged `σ̄_i(k)`.
    pub fn sigma_bar(&self, cell: usize, mode: usize) -> f64 {
        let lam = self.mass_kind.eigenvalue(self.spec().c_l(), self.modes.k2[mode]);
        self.jbar[cell][mode] * lam.max(0.0).sqrt()
    }

    /// `λ_k = ±m² + C_L|k|²` of the zero mode.
    pub fn zero_eigenvalue(&self) -> f64 {
        self.mass_kind.eigenvalue(self.spec().c_l(), 0)
    }

    /// Pointwise variance of `φ_T`: `Σ_k ρ_T(k)²/(L^d λ_k)`.
    pub fn field_variance(&self) -> f64 {
        let spec = self.spec();
        self.modes
            .k2
            .iter()
            .filter(|&&k2| self.mass_kind.admits(k2))
            .map(|&k2| self.rho_t(k2, self.t_end).powi(2) / (spec.volume() * self.mass_kind.eigenvalue(spec.c_l(), k2)))
            .sum()
    }
}

/// `max_k |∫₀^T σ_t(k)² dt − ρ_T(k)²|` for `|k|² ∈ k2_list` with Simpson's
/// rule on every grid cell, for all grid end points `T`.
pub fn sigma_identity_check(schedule: &RhoSchedule, k2_list: &[u32]) -> f64 {
    let mut worst: f64 = 0.0;
    for &k2 in k2_list {
        let mut acc = 0.0;
        for w in schedule.times.windows(2) {
            let (a, b) = (w[0], w[1]);
            let m = 0.5 * (a + b);
            acc += (b - a) / 6.0 * (schedule.sigma_sq(k2, a) + 4.0 * schedule.sigma_sq(k2, m) + schedule.sigma_sq(k2, b));
            worst = worst.max((acc - schedule.rho_t(k2, b).powi(2)).abs());
        }
    }
    worst
}

/// `Ĵ_t[g](k) = σ_t(k) 1_{λ_k>0} ĝ(k)/√λ_k`.
pub fn apply_jt(g: &SpectralField, t: f64, schedule: &RhoSchedule) -> SpectralField {
    let c_l = schedule.spec().c_l();
    let mut out = g.clone();
    for (c, &k2) in out.c.iter_mut().zip(&g.modes.k2) {
        let lam = schedule.mass_kind.eigenvalue(c_l, k2);
        *c *= if lam > 0.0 { schedule.sigma_sq(k2, t).sqrt() / lam.sqrt() } else { 0.0 };
    }
    out
}

/// `sup_k ⟨k⟩^{1−s} σ_t(k)/√λ_k`, the norm of `J_t: H^{r−1+s} → H^r`.
pub fn jt_operator_norm(schedule: &RhoSchedule, t: f64, s: f64) -> f64 {
    let c_l = schedule.spec().c_l();
    schedule
        .modes
        .k2
        .iter()
        .filter(|&&k2| schedule.mass_kind.eigenvalue(c_l, k2) > 0.0)
        .map(|&k2| (1.0 + k2 as f64).powf(0.5 * (1.0 - s)) * schedule.sigma_sq(k2, t).sqrt() / schedule.mass_kind.eigenvalue(c_l, k2).sqrt())
        .fold(0.0, f64::max)
}

/// Brownian increments on the schedule's cells, `[cell][mode]`.
#[derive(Clone, Debug)]
pub struct BrownianPath {
    pub increments: Vec<Vec<Complex64>>,
}

impl BrownianPath {
    pub fn sample(schedule: &RhoSchedule, rng: &mut Rng) -> Self {
        let vol = schedule.spec().volume();
        let increments = schedule
            .times
            .windows(2)
            .map(|w| {
                let var = (w[1] - w[0]) / vol;
                let mut c = vec![Complex64::new(0.0, 0.0); schedule.modes.len()];
                fill_gaussian(&schedule.modes, &mut c, rng, |_| var);
                c
            })
            .collect();
        BrownianPath { increments }
    }
}

/// `I_T[dB] = Σ_i J̄_i ΔB_i` (Itô sum).
pub fn integrate_path(schedule: &RhoSchedule, path: &BrownianPath) -> SpectralField {
    let mut out = SpectralField::zeros(&schedule.modes);
    for (i, inc) in path.increments.iter().enumerate() {
        for ((o, b), j) in out.c.iter_mut().zip(inc).zip(schedule.jbar(i)) {
            *o += b * *j;
        }
    }
    out
}

/// `I_T[v] = Σ_i J̄_i v_i Δt_i` for a drift given cell by cell.
pub fn integrate_drift(schedule: &RhoSchedule, drift: &[Vec<Complex64>]) -> SpectralField {
    let mut out = SpectralField::zeros(&schedule.modes);
    for (i, v) in drift.iter().enumerate() {
        let dt = schedule.times[i + 1] - schedule.times[i];
        for ((o, x), j) in out.c.iter_mut().zip(v).zip(schedule.jbar(i)) {
            *o += x * (*j * dt);
        }
    }
    out
}

/// Test potentials on the truncated field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Potential {
    Zero,
    /// `c · φ̂(0)`.
    Linear { c: f64 },
    /// `λ ∫ :φ⁴:` ordered with the variance of `φ_T`.
    WickQuartic { lambda: f64 },
    /// `β ∫ (φ² − 1)²/4`.
    DoubleWell { beta: f64 },
}

/// Evaluates potentials, reusing a dealiasing kernel.
pub struct PotentialEvaluator {
    potential: Potential,
    kernel: PointwiseKernel,
    wick_c: f64,
    volume: f64,
}

impl PotentialEvaluator {
    pub fn new(potential: Potential, schedule: &RhoSchedule) -> Self {
        PotentialEvaluator {
            potential,
            kernel: PointwiseKernel::new(&schedule.modes, 4),
            wick_c: schedule.field_variance(),
            volume: schedule.spec().volume(),
        }
    }

    pub fn eval(&mut self, phi: &SpectralField) -> f64 {
        match self.potential {
            Potential::Zero => 0.0,
            Potential::Linear { c } => c * phi.zero_mode(),
            Potential::WickQuartic { lambda } => lambda * self.volume * self.kernel.wick_mean(&phi.c, 4, self.wick_c),
            Potential::DoubleWell { beta } => {
                let m4 = self.kernel.wick_mean(&phi.c, 4, 0.0);
                let m2: f64 = phi.c.iter().map(|c| c.norm_sqr()).sum();
                beta * self.volume * (m4 - 2.0 * m2 + 1.0) / 4.0
            }
        }
    }
}

/// Drift families acting on the zero mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    Zero,
    /// Deterministic drift with `I_T[v](0) = a`.
    ConstantShift { a: f64 },
    /// `v_t(0) = θ σ_t(0) √λ₀ (target · sgn X_t − X_t)` where `X_t` is the
    /// controlled zero mode built from the past.
    Feedback { theta: f64, target: f64 },
    /// As `Feedback` but with the sign of the uncontrolled terminal zero
    /// mode, which is not adapted.
    LeakedFeedback { theta: f64, target: f64 },
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Strategy::Zero => "zero".into(),
            Strategy::ConstantShift { a } => format!("constant-shift({a})"),
            Strategy::Feedback { theta, target } => format!("feedback({theta},{target})"),
            Strategy::LeakedFeedback { theta, target } => format!("leaked-feedback({theta},{target})"),
        }
    }
}

fn sgn(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Objective sample `V(φ_T + I_T[v]) + ½∫ L^d |v̂_t|² dt` on one path.
pub fn path_objective(schedule: &RhoSchedule, strategy: Strategy, path: &BrownianPath, eval: &mut PotentialEvaluator) -> f64 {
    let z = schedule.modes.zero;
    let vol = schedule.spec().volume();
    let lam0 = schedule.zero_eigenvalue().max(0.0);
    let phi = integrate_path(schedule, path);
    let leak = phi.zero_mode();
    let mut x = 0.0;
    let mut shift = 0.0;
    let mut cost = 0.0;
    for (i, inc) in path.increments.iter().enumerate() {
        let dt = schedule.times[i + 1] - schedule.times[i];
        let j0 = schedule.jbar(i)[z];
        let sig = j0 * lam0.sqrt();
        let v = match strategy {
            Strategy::Zero => 0.0,
            Strategy::ConstantShift { a } => a * sig * lam0.sqrt(),
            Strategy::Feedback { theta, target } => theta * sig * lam0.sqrt() * (target * sgn(x) - x),
            Strategy::LeakedFeedback { theta, target } => theta * sig * lam0.sqrt() * (target * sgn(leak) - x),
        };
        cost += 0.5 * vol * v * v * dt;
        shift += j0 * v * dt;
        x += j0 * (v * dt + inc[z].re);
    }
    let mut field = phi;
    field.c[z].re += shift;
    eval.eval(&field) + cost
}

/// Monte-Carlo mean and standard error of the control objective. Paths are
/// drawn in chunks of 256; chunk `c` uses stream `c`, so different
/// strategies with the same seed see the same paths.
pub fn bd_objective(schedule: &RhoSchedule, potential: Potential, strategy: Strategy, n_paths: usize, seed: u64) -> Result<(f64, f64)> {
    let samples = objective_samples(schedule, potential, strategy, n_paths, seed)?;
    Ok(mean_se(&samples))
}

const CHUNK: usize = 256;

pub fn objective_samples(schedule: &RhoSchedule, potential: Potential, strategy: Strategy, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    let chunks = n_paths.div_ceil(CHUNK);
    let out: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let mut eval = PotentialEvaluator::new(potential, schedule);
            let len = CHUNK.min(n_paths - c * CHUNK);
            (0..len)
                .map(|_| {
                    let path = BrownianPath::sample(schedule, &mut rng);
                    path_objective(schedule, strategy, &path, &mut eval)
                })
                .collect()
        })
        .collect();
    let flat: Vec<f64> = out.into_iter().flatten().collect();
    if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("objective sample {i}")));
    }
    Ok(flat)
}

/// `−log E e^{−V(φ)}` by direct sampling of the field with covariance
/// `ρ_T(k)²/(L^d λ_k)`, with a delete-one jackknife standard error.
pub fn log_partition_oracle(schedule: &RhoSchedule, potential: Potential, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    let spec = schedule.spec();
    let modes = schedule.modes.clone();
    let chunks = n_samples.div_ceil(CHUNK);
    let vals: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream(seed, c as u64);
            let mut eval = PotentialEvaluator::new(potential, schedule);
            let len = CHUNK.min(n_samples - c * CHUNK);
            let modes = modes.clone();
            (0..len)
                .map(move |_| {
                    let mut f = SpectralField::zeros(&modes);
                    fill_gaussian(&modes, &mut f.c, &mut rng, |i| {
                        let k2 = modes.k2[i];
                        if schedule.mass_kind.admits(k2) {
                            schedule.rho_t(k2, schedule.t_end).powi(2)
                                / (spec.volume() * schedule.mass_kind.eigenvalue(spec.c_l(), k2))
                        } else {
                            0.0
                        }
                    });
                    eval.eval(&f)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("potential sample".into()));
    }
    let vmin = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = vals.iter().map(|v| (-(v - vmin)).exp()).collect();
    let n = w.len() as f64;
    let total: f64 = w.iter().sum();
    let est = vmin - (total / n).ln();
    let loo: Vec<f64> = w.iter().map(|wi| vmin - ((total - wi) / (n - 1.0)).ln()).collect();
    let mean_loo = loo.iter().sum::<f64>() / n;
    let var = (n - 1.0) / n * loo.iter().map(|x| (x - mean_loo).powi(2)).sum::<f64>();
    Ok((est, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantDriftOptimum {
    pub a: f64,
    pub objective: f64,
    pub se: f64,
    /// The coarse scan was unimodal on the bracket.
    pub unimodal: bool,
    pub scan: Vec<(f64, f64)>,
}

/// Minimizes the constant-shift objective over `a ∈ [lo, hi]`: coarse scan
/// on `points` values, then golden-section search between the neighbours of
/// the coarse minimum. All evaluations share the same paths.
pub fn optimize_constant_drift(
    schedule: &RhoSchedule,
    potential: Potential,
    bracket: (f64, f64),
    points: usize,
    n_paths: usize,
    seed: u64,
) -> Result<ConstantDriftOptimum> {
    let (lo, hi) = bracket;
    if !(hi > lo) || points < 3 {
        return Err(Error::InvalidArgument("bracket must be non-empty with at least 3 scan points".into()));
    }
    let f = |a: f64| bd_objective(schedule, potential, Strategy::ConstantShift { a }, n_paths, seed).map(|r| r.0);
    let grid: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let scan: Vec<(f64, f64)> = grid.iter().map(|&a| f(a).map(|v| (a, v))).collect::<Result<_>>()?;
    let best = (0..points).min_by(|&i, &j| scan[i].1.total_cmp(&scan[j].1)).expect("non-empty");
    let unimodal = scan[..=best].windows(2).all(|w| w[1].1 <= w[0].1) && scan[best..].windows(2).all(|w| w[1].1 >= w[0].1);
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(points - 1)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > 1e-4 * (1.0 + a.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let a_opt = 0.5 * (a + b);
    let (mut a_best, mut obj) = (a_opt, f(a_opt)?);
    if scan[best].1 < obj {
        a_best = scan[best].0;
        obj = scan[best].1;
    }
    let (objective, se) = bd_objective(schedule, potential, Strategy::ConstantShift { a: a_best }, n_paths, seed)?;
    debug_assert!((objective - obj).abs() < 1e-12 * (1.0 + obj.abs()));
    Ok(ConstantDriftOptimum { a: a_best, objective, se, unimodal, scan })
}

/// Objective and standard error of `strategy` minus the oracle, with the
/// combined error, for sandwich checks.
#[derive(Clone, Debug, PartialEq)]
pub struct SandwichRow {
    pub potential: Potential,
    pub strategy: Strategy,
    pub objective: f64,
    pub se: f64,
    pub oracle: f64,
    pub oracle_se: f64,
}

impl SandwichRow {
    /// `objective ≥ oracle − 3 × combined s.e.`
    pub fn holds(&self) -> bool {
        self.objective >= self.oracle - 3.0 * (self.se * self.se + self.oracle_se * self.oracle_se).sqrt()
    }
}
