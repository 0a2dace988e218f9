//! Time integration of the truncated wave, damped stochastic wave and heat
//! equations with Wick-renormalized cubic drift.
//!
//! All schemes treat the linear part `∂ₜₜû = (1 − C_L|k|²)û` (or its
//! parabolic analogue) exactly per mode and add the nonlinear force
//! `−P_N(u³) + 3C u` as a kick.

use std::io::{self, Read, Write};
use std::sync::Arc;

use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::rng::{normal, Rng};
use crate::spectral::{Complex64, ModeSet, PhaseState, PointwiseKernel, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    NlwSplitting,
    SdnlwExponential,
    SheExponential,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    /// Damping `γ`; zero for the undamped wave equation.
    pub gamma: f64,
    /// Inverse temperature; `f64::INFINITY` switches the noise off.
    pub beta: f64,
    /// Wick constant `C` entering the force `−P_N(u³) + 3C u`.
    pub wick_c: f64,
    /// Whether the cubic force is active.
    pub nonlinear: bool,
}

impl IntegratorConfig {
    pub fn nlw(dt: f64, wick_c: f64) -> Self {
        IntegratorConfig { dt, scheme: Scheme::NlwSplitting, gamma: 0.0, beta: f64::INFINITY, wick_c, nonlinear: true }
    }

    pub fn sdnlw(dt: f64, gamma: f64, beta: f64, wick_c: f64) -> Self {
        IntegratorConfig { dt, scheme: Scheme::SdnlwExponential, gamma, beta, wick_c, nonlinear: true }
    }

    pub fn she(dt: f64, beta: f64, wick_c: f64) -> Self {
        IntegratorConfig { dt, scheme: Scheme::SheExponential, gamma: 0.0, beta, wick_c, nonlinear: true }
    }

    pub fn linear(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta = {} must be positive", self.beta)));
        }
        match self.scheme {
            Scheme::NlwSplitting if self.gamma != 0.0 => {
                Err(Error::InvalidArgument("the wave-equation scheme requires gamma = 0".into()))
            }
            Scheme::SdnlwExponential if !(self.gamma > 0.0) => {
                Err(Error::InvalidArgument("the damped scheme requires gamma > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Gaussian forcing with Hermitian-paired increments.
pub struct NoiseSource {
    pub rng: Rng,
}

impl NoiseSource {
    pub fn new(rng: Rng) -> Self {
        NoiseSource { rng }
    }

    /// Per-mode scale `√(2γ/(βL^d))` of the damped wave forcing.
    pub fn sdnlw_scale(gamma: f64, beta: f64, volume: f64) -> f64 {
        (2.0 * gamma / (beta * volume)).sqrt()
    }
}

/// Per-mode propagator of `(u, v)` over one step, row-major 2×2.
fn wave_propagator(a: f64, t: f64) -> [f64; 4] {
    if a < 0.0 {
        let w = (-a).sqrt();
        let (s, c) = (w * t).sin_cos();
        [c, s / w, -w * s, c]
    } else if a > 0.0 {
        let k = a.sqrt();
        let (s, c) = ((k * t).sinh(), (k * t).cosh());
        [c, s / k, k * s, c]
    } else {
        [1.0, t, 0.0, 1.0]
    }
}

/// Exact transition of `du = v dt, dv = (a u − γ v) dt + dW` with
/// `E dW² = dt`: propagator and Cholesky factor `(l11, l21, l22)` of the
/// increment covariance, by Van Loan's block exponential.
fn ou_transition(a: f64, gamma: f64, t: f64) -> ([f64; 4], [f64; 3]) {
    #[rustfmt::skip]
    let block = Matrix4::new(
        0.0, -1.0, 0.0, 0.0,
        -a, gamma, 0.0, 1.0,
        0.0, 0.0, 0.0, a,
        0.0, 0.0, 1.0, -gamma,
    ) * t;
    let f = block.exp();
    // F22 = exp(Aᵀ t), F12 = ∫ ..., Σ = F22ᵀ F12.
    let e = [f[(2, 2)], f[(3, 2)], f[(2, 3)], f[(3, 3)]];
    let f12 = [f[(0, 2)], f[(0, 3)], f[(1, 2)], f[(1, 3)]];
    let s11 = e[0] * f12[0] + e[1] * f12[2];
    let s12 = e[0] * f12[1] + e[1] * f12[3];
    let s22 = e[2] * f12[1] + e[3] * f12[3];
    let l11 = s11.max(0.0).sqrt();
    let l21 = if l11 > 0.0 { s12 / l11 } else { 0.0 };
    let l22 = (s22 - l21 * l21).max(0.0).sqrt();
    (e, [l11, l21, l22])
}

/// Stepper state: dealiased kernel, per-mode linear factors and buffers.
pub struct Integrator {
    pub modes: Arc<ModeSet>,
    pub config: IntegratorConfig,
    kernel: PointwiseKernel,
    force: Vec<Complex64>,
    force_at: Vec<Complex64>,
    force_valid: bool,
    lin: Vec<[f64; 4]>,
    chol: Vec<[f64; 3]>,
    she: Vec<[f64; 3]>,
    noise_scale: f64,
}

impl Integrator {
    pub fn new(modes: &Arc<ModeSet>, config: IntegratorConfig) -> Result<Self> {
        config.validate()?;
        let spec = modes.spec;
        let c_l = spec.c_l();
        let vol = spec.volume();
        let dt = config.dt;
        let a: Vec<f64> = modes.k2.iter().map(|&k2| 1.0 - c_l * k2 as f64).collect();
        let noiseless = config.beta.is_infinite();
        let (lin, chol, she, noise_scale) = match config.scheme {
            Scheme::NlwSplitting => (a.iter().map(|&ak| wave_propagator(ak, dt)).collect(), Vec::new(), Vec::new(), 0.0),
            Scheme::SdnlwExponential => {
                let (lin, chol) = a.iter().map(|&ak| ou_transition(ak, config.gamma, dt)).unzip();
                let scale = if noiseless { 0.0 } else { NoiseSource::sdnlw_scale(config.gamma, config.beta, vol) };
                (lin, chol, Vec::new(), scale)
            }
            Scheme::SheExponential => {
                let she = a
                    .iter()
                    .map(|&ak| {
                        let e = (ak * dt).exp();
                        let phi = (ak * dt).exp_m1() / ak;
                        let var = (2.0 * ak * dt).exp_m1() / (2.0 * ak);
                        [e, phi, var.sqrt()]
                    })
                    .collect();
                let scale = if noiseless { 0.0 } else { (2.0 / (config.beta * vol)).sqrt() };
                (Vec::new(), Vec::new(), she, scale)
            }
        };
        let len = modes.len();
        Ok(Integrator {
            modes: modes.clone(),
            config,
            kernel: PointwiseKernel::cubic(modes),
            force: vec![Complex64::new(0.0, 0.0); len],
            force_at: vec![Complex64::new(0.0, 0.0); len],
            force_valid: false,
            lin,
            chol,
            she,
            noise_scale,
        })
    }

    /// Force `−P_N(u³) + 3C u` at `u`, reusing the previous evaluation when
    /// the position has not changed.
    fn update_force(&mut self, u: &[Complex64]) {
        if !self.config.nonlinear {
            return;
        }
        if self.force_valid && self.force_at.as_slice() == u {
            return;
        }
        self.kernel.force_into(u, self.config.wick_c, &mut self.force);
        self.force_at.copy_from_slice(u);
        self.force_valid = true;
    }

    fn kick(&mut self, s: &mut PhaseState, h: f64) {
        if !self.config.nonlinear {
            return;
        }
        self.update_force(&s.u.c);
        for (v, f) in s.v.c.iter_mut().zip(&self.force) {
            *v += f * h;
        }
    }

    fn linear_flow(&self, s: &mut PhaseState) {
        for ((u, v), m) in s.u.c.iter_mut().zip(s.v.c.iter_mut()).zip(&self.lin) {
            let (u0, v0) = (*u, *v);
            *u = u0 * m[0] + v0 * m[1];
            *v = u0 * m[2] + v0 * m[3];
        }
    }

    /// One Strang step: half kick, exact linear flow, half kick.
    pub fn nlw_step(&mut self, s: &mut PhaseState) {
        let h = 0.5 * self.config.dt;
        self.kick(s, h);
        self.linear_flow(s);
        self.kick(s, h);
    }

    /// Half kick, exact damped linear flow with its exact Gaussian
    /// increment, half kick.
    pub fn sdnlw_step(&mut self, s: &mut PhaseState, noise: &mut NoiseSource) {
        let h = 0.5 * self.config.dt;
        self.kick(s, h);
        self.linear_flow(s);
        if self.noise_scale > 0.0 {
            let modes = self.modes.clone();
            let sc = self.noise_scale;
            let rng = &mut noise.rng;
            let z = modes.zero;
            let l = self.chol[z];
            let (g1, g2) = (normal(rng), normal(rng));
            s.u.c[z].re += sc * l[0] * g1;
            s.v.c[z].re += sc * (l[1] * g1 + l[2] * g2);
            let half = std::f64::consts::FRAC_1_SQRT_2 * sc;
            for &i in &modes.positive {
                let l = self.chol[i];
                let (a1, a2, b1, b2) = (normal(rng), normal(rng), normal(rng), normal(rng));
                let du = Complex64::new(l[0] * a1, l[0] * b1) * half;
                let dv = Complex64::new(l[1] * a1 + l[2] * a2, l[1] * b1 + l[2] * b2) * half;
                let j = modes.neg[i];
                s.u.c[i] += du;
                s.v.c[i] += dv;
                s.u.c[j] += du.conj();
                s.v.c[j] += dv.conj();
            }
        }
        self.kick(s, h);
    }

    /// Exponential Euler step of the heat equation.
    pub fn she_step(&mut self, u: &mut SpectralField, noise: &mut NoiseSource) {
        if self.config.nonlinear {
            self.kernel.force_into(&u.c, self.config.wick_c, &mut self.force);
        }
        let nl = self.config.nonlinear;
        for (i, c) in u.c.iter_mut().enumerate() {
            let [e, phi, _] = self.she[i];
            *c = *c * e + if nl { self.force[i] * phi } else { Complex64::new(0.0, 0.0) };
        }
        if self.noise_scale > 0.0 {
            let modes = self.modes.clone();
            let sc = self.noise_scale;
            let rng = &mut noise.rng;
            let z = modes.zero;
            u.c[z].re += sc * self.she[z][2] * normal(rng);
            let half = std::f64::consts::FRAC_1_SQRT_2 * sc;
            for &i in &modes.positive {
                let s = self.she[i][2] * half;
                let d = Complex64::new(s * normal(rng), s * normal(rng));
                u.c[i] += d;
                u.c[modes.neg[i]] += d.conj();
            }
        }
    }

    /// Advances `s` by one step of the configured scheme. The heat equation
    /// evolves `s.u` and leaves `s.v` untouched.
    pub fn step(&mut self, s: &mut PhaseState, noise: Option<&mut NoiseSource>) {
        match self.config.scheme {
            Scheme::NlwSplitting => self.nlw_step(s),
            Scheme::SdnlwExponential => self.sdnlw_step(s, noise.expect("damped scheme needs a noise source")),
            Scheme::SheExponential => self.she_step(&mut s.u, noise.expect("heat scheme needs a noise source")),
        }
    }

    /// `H_N(u, v) = ∫ ½v² + ½|∇u|² − ½u² + ¼u⁴ − (3C/2)u² dx`.
    pub fn energy(&mut self, s: &PhaseState) -> f64 {
        let quartic = self.kernel.quartic_mean(&s.u.c);
        energy_from_parts(&self.modes, self.config.wick_c, s, quartic)
    }
}

fn energy_from_parts(modes: &ModeSet, wick_c: f64, s: &PhaseState, quartic_mean: f64) -> f64 {
    let c_l = modes.spec.c_l();
    let mut quad = 0.0;
    for ((u, v), &k2) in s.u.c.iter().zip(&s.v.c).zip(&modes.k2) {
        quad += 0.5 * v.norm_sqr() + 0.5 * (c_l * k2 as f64 - 1.0 - 3.0 * wick_c) * u.norm_sqr();
    }
    modes.spec.volume() * (quad + 0.25 * quartic_mean)
}

/// Energy of `s` with Wick constant `wick_c`.
pub fn energy(s: &PhaseState, wick_c: f64) -> f64 {
    let mut kernel = PointwiseKernel::cubic(&s.u.modes);
    let q = kernel.quartic_mean(&s.u.c);
    energy_from_parts(&s.u.modes, wick_c, s, q)
}

/// One wave-equation step with a freshly built integrator.
pub fn nlw_step(state: &PhaseState, config: IntegratorConfig) -> Result<PhaseState> {
    let mut integ = Integrator::new(&state.u.modes, config)?;
    let mut s = state.clone();
    integ.nlw_step(&mut s);
    Ok(s)
}

/// One damped stochastic wave step with a freshly built integrator.
pub fn sdnlw_step(state: &PhaseState, config: IntegratorConfig, noise: &mut NoiseSource) -> Result<PhaseState> {
    let mut integ = Integrator::new(&state.u.modes, config)?;
    let mut s = state.clone();
    integ.sdnlw_step(&mut s, noise);
    Ok(s)
}

/// One heat-equation step with a freshly built integrator.
pub fn she_step(u: &SpectralField, config: IntegratorConfig, noise: &mut NoiseSource) -> Result<SpectralField> {
    let mut integ = Integrator::new(&u.modes, config)?;
    let mut out = u.clone();
    integ.she_step(&mut out, noise);
    Ok(out)
}

/// Callback fed after every step.
pub trait Observer {
    fn observe(&mut self, step: usize, t: f64, state: &PhaseState) -> std::result::Result<(), String>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub record_energy: bool,
    /// Keep a full snapshot every this many steps.
    pub snapshot_every: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { record_energy: true, snapshot_every: None }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub zero_mode: Vec<f64>,
    pub energy: Vec<f64>,
    pub snapshots: Vec<(f64, PhaseState)>,
}

/// Integrates `initial` over `horizon` (an integer number of steps),
/// feeding the observers after each step.
pub fn run(
    initial: &PhaseState,
    integ: &mut Integrator,
    horizon: f64,
    mut noise: Option<&mut NoiseSource>,
    options: RunOptions,
    observers: &mut [&mut dyn Observer],
) -> Result<(Trajectory, PhaseState)> {
    let dt = integ.config.dt;
    let steps_f = horizon / dt;
    let steps = steps_f.round();
    if (steps_f - steps).abs() > 1e-9 * steps.max(1.0) || steps < 0.0 {
        return Err(Error::InvalidArgument(format!("horizon {horizon} is not an integer multiple of dt = {dt}")));
    }
    let steps = steps as usize;
    let mut s = initial.clone();
    let mut traj = Trajectory { dt, ..Default::default() };
    let record = |traj: &mut Trajectory, integ: &mut Integrator, n: usize, s: &PhaseState| {
        traj.times.push(n as f64 * dt);
        traj.zero_mode.push(s.u.zero_mode());
        if options.record_energy {
            let e = integ.energy(s);
            traj.energy.push(e);
        }
        if let Some(every) = options.snapshot_every {
            if every > 0 && n.is_multiple_of(every) {
                traj.snapshots.push((n as f64 * dt, s.clone()));
            }
        }
    };
    record(&mut traj, integ, 0, &s);
    for n in 1..=steps {
        integ.step(&mut s, noise.as_deref_mut());
        record(&mut traj, integ, n, &s);
        for obs in observers.iter_mut() {
            obs.observe(n, n as f64 * dt, &s).map_err(|message| Error::Observer { step: n, message })?;
        }
    }
    Ok((traj, s))
}

/// Magic bytes of the binary zero-mode series.
pub const TRAJECTORY_MAGIC: [u8; 8] = *b"KWTRAJ\0\x01";

/// Writes a zero-mode series: magic (8 bytes), layout version `u32`,
/// reserved `u32`, 32-byte configuration hash, sample count `u64`, start
/// time `f64`, step `f64`, then the samples. Everything little-endian.
pub fn write_series<W: Write>(mut w: W, hash: &[u8; 32], t0: f64, dt: f64, values: &[f64]) -> io::Result<()> {
    w.write_all(&TRAJECTORY_MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(hash)?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    w.write_all(&t0.to_le_bytes())?;
    w.write_all(&dt.to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Header and samples of a binary zero-mode series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFile {
    pub hash: [u8; 32],
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

pub fn read_series<R: Read>(mut r: R) -> io::Result<SeriesFile> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != TRAJECTORY_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "not a trajectory file"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != 1 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "unsupported trajectory layout"));
    }
    r.read_exact(&mut b4)?;
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let t0 = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let dt = f64::from_le_bytes(b8);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    Ok(SeriesFile { hash, t0, dt, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::spectral::{fill_gaussian, TorusSpec};

    fn modes(d: usize, n: usize) -> Arc<ModeSet> {
        ModeSet::new(TorusSpec::new(d, 1.0, n).unwrap())
    }

    fn random_state(m: &Arc<ModeSet>, seed: u64, scale: f64) -> PhaseState {
        let mut s = PhaseState::zeros(m);
        let mut rng = stream(seed, 0);
        let c_l = m.spec.c_l();
        fill_gaussian(m, &mut s.u.c, &mut rng, |i| scale / (2.0 + c_l * m.k2[i] as f64));
        fill_gaussian(m, &mut s.v.c, &mut rng, |_| scale);
        s
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig { gamma: 0.1, ..IntegratorConfig::nlw(0.01, 0.0) }.validate().is_err());
        assert!(IntegratorConfig::sdnlw(0.01, 0.0, 1.0, 0.0).validate().is_err());
        assert!(IntegratorConfig::nlw(0.0, 0.0).validate().is_err());
    }

    #[test]
    fn linearized_zero_mode_grows_like_sinh() {
        let m = modes(1, 4);
        let q = 1e-3;
        let mut s = PhaseState::zeros(&m);
        s.v.c[m.zero].re = q;
        let dt = 0.01;
        let mut integ = Integrator::new(&m, IntegratorConfig::nlw(dt, 0.0).linear()).unwrap();
        for _ in 0..300 {
            integ.nlw_step(&mut s);
        }
        assert!((s.u.zero_mode() - q * 3.0f64.sinh()).abs() < 1e-12);
        // The nonlinear flow agrees to O(q³).
        let mut s2 = PhaseState::zeros(&m);
        s2.v.c[m.zero].re = q;
        let mut integ = Integrator::new(&m, IntegratorConfig::nlw(dt, 0.0)).unwrap();
        for _ in 0..300 {
            integ.nlw_step(&mut s2);
        }
        assert!((s2.u.zero_mode() / (q * 3.0f64.sinh()) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn oscillatory_mode_moves_on_circle() {
        let m = modes(1, 3);
        let c_l = m.spec.c_l();
        let w = (c_l * 4.0 - 1.0).sqrt();
        let mut s = PhaseState::zeros(&m);
        s.u.set([2, 0, 0], Complex64::new(0.3, -0.1));
        let i = m.index_of([2, 0, 0]).unwrap();
        let radius = |s: &PhaseState| (w * w * s.u.c[i].norm_sqr() + s.v.c[i].norm_sqr()).sqrt();
        let r0 = radius(&s);
        let mut integ = Integrator::new(&m, IntegratorConfig::nlw(0.013, 0.0).linear()).unwrap();
        for _ in 0..1000 {
            integ.nlw_step(&mut s);
        }
        assert!((radius(&s) - r0).abs() < 1e-12);
        assert!(s.u.is_hermitian(1e-14));
    }

    #[test]
    fn strang_is_second_order() {
        // Reference: the same scheme at dt/16 (Richardson oracle); the
        // error ratio per halving approaches 4.
        let m = modes(1, 4);
        let s0 = random_state(&m, 4, 0.5);
        let t_end = 1.0;
        let solve = |dt: f64| {
            let mut s = s0.clone();
            let mut integ = Integrator::new(&m, IntegratorConfig::nlw(dt, 0.1)).unwrap();
            for _ in 0..(t_end / dt).round() as usize {
                integ.nlw_step(&mut s);
            }
            s
        };
        let dt = 0.02;
        let reference = solve(dt / 16.0);
        let e1 = solve(dt).u.max_abs_diff(&reference.u);
        let e2 = solve(dt / 2.0).u.max_abs_diff(&reference.u);
        let e3 = solve(dt / 4.0).u.max_abs_diff(&reference.u);
        let r1 = e1 / e2;
        let r2 = e2 / e3;
        assert!((3.3..4.8).contains(&r1) && (3.3..4.8).contains(&r2), "{r1} {r2}");
    }

    #[test]
    fn reversibility() {
        let m = modes(1, 8);
        let s0 = random_state(&m, 5, 0.2);
        let mut s = s0.clone();
        let mut integ = Integrator::new(&m, IntegratorConfig::nlw(0.005, 0.05)).unwrap();
        for _ in 0..10_000 {
            integ.nlw_step(&mut s);
        }
        s.v = s.v.scaled(-1.0);
        for _ in 0..10_000 {
            integ.nlw_step(&mut s);
        }
        s.v = s.v.scaled(-1.0);
        assert!(s.u.max_abs_diff(&s0.u) < 1e-8 && s.v.max_abs_diff(&s0.v) < 1e-8);
    }

    #[test]
    fn scalar_map_preserves_volume() {
        let m = modes(1, 0);
        let mut rng = stream(6, 0);
        let mut integ = Integrator::new(&m, IntegratorConfig::nlw(0.01, 0.0)).unwrap();
        let mut map = |u: f64, v: f64| {
            let mut s = PhaseState::zeros(&m);
            s.u.c[0].re = u;
            s.v.c[0].re = v;
            integ.nlw_step(&mut s);
            (s.u.c[0].re, s.v.c[0].re)
        };
        for _ in 0..20 {
            let (u, v) = (2.0 * normal(&mut rng), normal(&mut rng));
            let h = 1e-5;
            let (a1, b1) = map(u + h, v);
            let (a0, b0) = map(u - h, v);
            let (c1, d1) = map(u, v + h);
            let (c0, d0) = map(u, v - h);
            let j = ((a1 - a0) * (d1 - d0) - (b1 - b0) * (c1 - c0)) / (4.0 * h * h);
            assert!((j - 1.0).abs() < 1e-9, "{j}");
        }
    }

    #[test]
    fn energy_examples() {
        let m = modes(2, 3);
        assert_eq!(energy(&PhaseState::zeros(&m), 0.0), 0.0);
        let mut s = PhaseState::zeros(&m);
        s.u = SpectralField::constant(&m, 1.0);
        assert!((energy(&s, 0.0) + m.spec.volume() / 4.0).abs() < 1e-14);
        let s = random_state(&m, 7, 0.3);
        let mut integ = Integrator::new(&m, IntegratorConfig::nlw(0.01, 0.2)).unwrap();
        assert!((integ.energy(&s) - energy(&s, 0.2)).abs() < 1e-13);
    }

    #[test]
    fn energy_conserved_to_second_order() {
        let m = modes(1, 4);
        let s0 = random_state(&m, 8, 0.5);
        let drift = |dt: f64| {
            let mut s = s0.clone();
            let mut integ = Integrator::new(&m, IntegratorConfig::nlw(dt, 0.0)).unwrap();
            let e0 = integ.energy(&s);
            let mut worst: f64 = 0.0;
            for _ in 0..(2.0 / dt) as usize {
                integ.nlw_step(&mut s);
                worst = worst.max((integ.energy(&s) - e0).abs());
            }
            worst
        };
        let ratio = drift(0.01) / drift(0.005);
        assert!((3.0..5.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn sdnlw_small_gamma_close_to_nlw() {
        let m = modes(1, 3);
        let s0 = random_state(&m, 9, 0.3);
        let base = nlw_step(&s0, IntegratorConfig::nlw(0.01, 0.0)).unwrap();
        let mut noise = NoiseSource::new(stream(1, 1));
        let d1 = sdnlw_step(&s0, IntegratorConfig::sdnlw(0.01, 1e-3, f64::INFINITY, 0.0), &mut noise).unwrap();
        let d2 = sdnlw_step(&s0, IntegratorConfig::sdnlw(0.01, 1e-4, f64::INFINITY, 0.0), &mut noise).unwrap();
        let e1 = d1.v.max_abs_diff(&base.v);
        let e2 = d2.v.max_abs_diff(&base.v);
        assert!(e1 > 0.0 && (e1 / e2 - 10.0).abs() < 0.5);
    }

    #[test]
    fn ou_transition_matches_stationary_law() {
        // For a stable mode the stationary covariance diag(1/(2γω²), 1/(2γ))
        // is invariant: P Σ∞ Pᵀ + Σ(dt) = Σ∞.
        let (a, g, t) = (-40.0, 0.7, 0.05);
        let (p, l) = ou_transition(a, g, t);
        let s_inf = [1.0 / (2.0 * g * -a), 1.0 / (2.0 * g)];
        let s11 = p[0] * p[0] * s_inf[0] + p[1] * p[1] * s_inf[1] + l[0] * l[0];
        let s12 = p[0] * p[2] * s_inf[0] + p[1] * p[3] * s_inf[1] + l[0] * l[1];
        let s22 = p[2] * p[2] * s_inf[0] + p[3] * p[3] * s_inf[1] + l[1] * l[1] + l[2] * l[2];
        assert!((s11 - s_inf[0]).abs() < 1e-12 && s12.abs() < 1e-12 && (s22 - s_inf[1]).abs() < 1e-12);
        // The undamped limit reproduces the rotation.
        let (p0, _) = ou_transition(a, 1e-12, t);
        let r = wave_propagator(a, t);
        assert!(p0.iter().zip(&r).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn she_noiseless_decays_oscillatory_modes() {
        let m = modes(1, 4);
        let mut u = random_state(&m, 10, 0.5).u.project_perp();
        let mut noise = NoiseSource::new(stream(0, 0));
        let mut integ = Integrator::new(&m, IntegratorConfig::she(0.01, f64::INFINITY, 0.0).linear()).unwrap();
        let mut prev = u.sobolev_norm(0.0);
        for _ in 0..50 {
            integ.she_step(&mut u, &mut noise);
            let now = u.sobolev_norm(0.0);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn run_contracts() {
        let m = modes(1, 4);
        let s0 = random_state(&m, 11, 0.3);
        let mut integ = Integrator::new(&m, IntegratorConfig::nlw(0.01, 0.0)).unwrap();
        let (traj, end) = run(&s0, &mut integ, 0.0, None, RunOptions::default(), &mut []).unwrap();
        assert_eq!(traj.zero_mode.len(), 1);
        assert_eq!(end, s0);
        assert!(run(&s0, &mut integ, 0.015, None, RunOptions::default(), &mut []).is_err());

        let go = |seed| {
            let m = modes(1, 4);
            let mut integ = Integrator::new(&m, IntegratorConfig::sdnlw(0.01, 0.5, 4.0, 0.0)).unwrap();
            let mut noise = NoiseSource::new(stream(seed, 0));
            run(&random_state(&m, 1, 0.3), &mut integ, 1.0, Some(&mut noise), RunOptions::default(), &mut [])
                .unwrap()
                .0
                .zero_mode
        };
        assert_eq!(go(3), go(3));
        assert_ne!(go(3), go(4));

        struct Fail;
        impl Observer for Fail {
            fn observe(&mut self, step: usize, _: f64, _: &PhaseState) -> std::result::Result<(), String> {
                if step == 5 {
                    Err("stop".into())
                } else {
                    Ok(())
                }
            }
        }
        let err = run(&s0, &mut integ, 0.1, None, RunOptions::default(), &mut [&mut Fail]).unwrap_err();
        assert_eq!(err, Error::Observer { step: 5, message: "stop".into() });
    }

    #[test]
    fn series_round_trip() {
        let values = vec![0.5, -1.25, f64::MIN_POSITIVE, 3.0e300];
        let hash = [7u8; 32];
        let mut buf = Vec::new();
        write_series(&mut buf, &hash, 0.0, 0.01, &values).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 32 + 8 + 8 + 8 + 8 * values.len());
        let back = read_series(buf.as_slice()).unwrap();
        assert_eq!(back, SeriesFile { hash, t0: 0.0, dt: 0.01, values });
        assert!(read_series(&b"nonsense-bytes"[..]).is_err());
    }
}
