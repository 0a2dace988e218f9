//! Sampling the truncated φ⁴ Gibbs measure and white-noise velocities, and
//! estimating the zero-mode density at the saddle by umbrella sampling.
//!
//! Densities are taken with respect to Lebesgue measure on the real
//! coordinates `û(0)`, `Re û(k)`, `Im û(k)` for `k` lexicographically
//! positive.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{normal, stream, uniform, Rng};
use crate::spectral::{
    fill_gaussian, hermite, Complex64, MassKind, ModeSet, PhaseState, PointwiseKernel, SpectralField, TorusSpec,
};
use crate::stats::{mean_se, SamplerDiagnostics};

/// Independent Gaussian free field with `E|û(k)|² = 1/(βL^d(±m² + C_L|k|²))`;
/// the zero mode is zero for the negative mass.
pub fn sample_gff(modes: &Arc<ModeSet>, beta: f64, mass_kind: MassKind, rng: &mut Rng) -> SpectralField {
    let spec = modes.spec;
    let (c_l, vol) = (spec.c_l(), spec.volume());
    let mut f = SpectralField::zeros(modes);
    fill_gaussian(modes, &mut f.c, rng, |i| {
        let k2 = modes.k2[i];
        if mass_kind.admits(k2) {
            1.0 / (beta * vol * mass_kind.eigenvalue(c_l, k2))
        } else {
            0.0
        }
    });
    f
}

/// White noise truncated to `K_N`: every mode has `E|v̂(k)|² = 1/(βL^d)`.
pub fn sample_white_noise(modes: &Arc<ModeSet>, beta: f64, rng: &mut Rng) -> SpectralField {
    let var = 1.0 / (beta * modes.spec.volume());
    let mut f = SpectralField::zeros(modes);
    fill_gaussian(modes, &mut f.c, rng, |_| var);
    f
}

/// `βH(u) = (β/4)∫:u⁴: + (β/2)∫(−u² + |∇u|²)` with Wick constant `wick_c`.
pub fn potential_energy(u: &SpectralField, beta: f64, wick_c: f64) -> f64 {
    let mut kernel = PointwiseKernel::cubic(&u.modes);
    let quartic = kernel.wick_mean(&u.c, 4, wick_c);
    let c_l = u.spec().c_l();
    let quad: f64 = u.c.iter().zip(&u.modes.k2).map(|(c, &k2)| (c_l * k2 as f64 - 1.0) * c.norm_sqr()).sum();
    beta * u.spec().volume() * (0.25 * quartic + 0.5 * quad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Proposal {
    /// Preconditioned Metropolis-adjusted Langevin with step `h`.
    Mala { h: f64 },
    /// Preconditioned Hamiltonian Monte Carlo.
    Hmc { eps: f64, steps: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GibbsConfig {
    pub spec: TorusSpec,
    pub beta: f64,
    /// Quadratic part `±m² − Δ`; `NegativeUnit` is the double-well measure.
    pub mass_kind: MassKind,
    /// Weight of `¼∫:u⁴:` (1 for φ⁴, 0 for the Gaussian measure).
    pub quartic: f64,
    pub wick_c: f64,
    pub proposal: Proposal,
    /// Propose `u ↦ −u` every this many steps (0 disables).
    pub flip_every: usize,
}

impl GibbsConfig {
    pub fn phi4(spec: TorusSpec, beta: f64, wick_c: f64) -> Self {
        GibbsConfig {
            spec,
            beta,
            mass_kind: MassKind::NegativeUnit,
            quartic: 1.0,
            wick_c,
            proposal: Proposal::Mala { h: 0.5 },
            flip_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta = {} must be positive and finite", self.beta)));
        }
        let ok = match self.proposal {
            Proposal::Mala { h } => h > 0.0,
            Proposal::Hmc { eps, steps } => eps > 0.0 && steps > 0,
        };
        if !ok {
            return Err(Error::InvalidArgument("proposal scale must be positive".into()));
        }
        Ok(())
    }
}

/// Harmonic bias `½ κ (û(0) − center)²` added to `βH`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bias {
    pub center: f64,
    pub stiffness: f64,
}

/// Metropolis chain on the coefficient coordinates.
pub struct GibbsSampler {
    pub config: GibbsConfig,
    pub modes: Arc<ModeSet>,
    pub bias: Option<Bias>,
    /// Keep `û(0)` fixed (saddle-conditioned sampling).
    pub freeze_zero: bool,
    kernel: PointwiseKernel,
    /// Preconditioner (proposal variance per coordinate).
    precond: Vec<f64>,
    x: Vec<f64>,
    u_val: f64,
    grad: Vec<f64>,
    field: SpectralField,
    h3: Vec<Complex64>,
    pub accepted: usize,
    pub proposed: usize,
    steps: usize,
}

impl GibbsSampler {
    pub fn new(config: GibbsConfig, initial: &SpectralField, bias: Option<Bias>, freeze_zero: bool) -> Result<Self> {
        config.validate()?;
        let modes = initial.modes.clone();
        let (c_l, vol) = (config.spec.c_l(), config.spec.volume());
        let mut precond = Vec::with_capacity(modes.len());
        let kappa = bias.map_or(0.0, |b| b.stiffness);
        precond.push(1.0 / (2.0 * config.beta * vol + kappa));
        for &i in &modes.positive {
            let p = 1.0 / (2.0 * config.beta * vol * (2.0 + c_l * modes.k2[i] as f64));
            precond.push(p);
            precond.push(p);
        }
        let kernel = PointwiseKernel::cubic(&modes);
        let mut s = GibbsSampler {
            config,
            modes: modes.clone(),
            bias,
            freeze_zero,
            kernel,
            precond,
            x: to_coords(initial),
            u_val: 0.0,
            grad: vec![0.0; modes.len()],
            field: initial.clone(),
            h3: vec![Complex64::new(0.0, 0.0); modes.len()],
            accepted: 0,
            proposed: 0,
            steps: 0,
        };
        let x = s.x.clone();
        let mut g = vec![0.0; x.len()];
        s.u_val = s.evaluate(&x, &mut g);
        if !s.u_val.is_finite() {
            return Err(Error::NonFinite("initial energy".into()));
        }
        s.grad = g;
        Ok(s)
    }

    pub fn state(&self) -> SpectralField {
        from_coords(&self.modes, &self.x)
    }

    pub fn zero_mode(&self) -> f64 {
        self.x[0]
    }

    /// Current target value `βH + bias`.
    pub fn energy(&self) -> f64 {
        self.u_val
    }

    /// Target `U(x)` and its gradient.
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let cfg = self.config;
        let (c_l, vol) = (cfg.spec.c_l(), cfg.spec.volume());
        let mu = match cfg.mass_kind {
            MassKind::NegativeUnit => -1.0,
            MassKind::PositivePlusTwo => 2.0,
        };
        write_coords(&self.modes, x, &mut self.field.c);
        let quartic = if cfg.quartic != 0.0 {
            let q = self.kernel.wick_mean(&self.field.c, 4, cfg.wick_c);
            self.kernel.wick_power_into(&self.field.c, 3, cfg.wick_c, &mut self.h3);
            q
        } else {
            0.0
        };
        let bv = cfg.beta * vol;
        let mut quad = 0.0;
        let z = self.modes.zero;
        let a0 = x[0];
        quad += 0.5 * mu * a0 * a0;
        grad[0] = bv * (mu * a0 + cfg.quartic * self.h3[z].re);
        for (p, &i) in self.modes.positive.iter().enumerate() {
            let lam = mu + c_l * self.modes.k2[i] as f64;
            let (re, im) = (x[1 + 2 * p], x[2 + 2 * p]);
            quad += lam * (re * re + im * im);
            grad[1 + 2 * p] = 2.0 * bv * (lam * re + cfg.quartic * self.h3[i].re);
            grad[2 + 2 * p] = 2.0 * bv * (lam * im + cfg.quartic * self.h3[i].im);
        }
        let mut u = bv * (quad + 0.25 * cfg.quartic * quartic);
        if let Some(b) = self.bias {
            u += 0.5 * b.stiffness * (a0 - b.center).powi(2);
            grad[0] += b.stiffness * (a0 - b.center);
        }
        if self.freeze_zero {
            grad[0] = 0.0;
        }
        u
    }

    /// One Metropolis step; returns whether the proposal was accepted.
    pub fn step(&mut self, rng: &mut Rng) -> bool {
        self.steps += 1;
        if self.config.flip_every > 0 && self.steps.is_multiple_of(self.config.flip_every) {
            return self.flip(rng);
        }
        let acc = match self.config.proposal {
            Proposal::Mala { h } => self.mala(h, rng),
            Proposal::Hmc { eps, steps } => self.hmc(eps, steps, rng),
        };
        self.proposed += 1;
        if acc {
            self.accepted += 1;
        }
        acc
    }

    #[allow(clippy::needless_range_loop)]
    fn mala(&mut self, h: f64, rng: &mut Rng) -> bool {
        let n = self.x.len();
        let start = usize::from(self.freeze_zero);
        let mut y = self.x.clone();
        for i in start..n {
            y[i] = self.x[i] - 0.5 * h * self.precond[i] * self.grad[i] + (h * self.precond[i]).sqrt() * normal(rng);
        }
        let mut gy = vec![0.0; n];
        let uy = self.evaluate(&y, &mut gy);
        if !uy.is_finite() {
            return false;
        }
        let mut log_q = 0.0;
        for i in start..n {
            let fwd = y[i] - self.x[i] + 0.5 * h * self.precond[i] * self.grad[i];
            let bwd = self.x[i] - y[i] + 0.5 * h * self.precond[i] * gy[i];
            log_q += (fwd * fwd - bwd * bwd) / (2.0 * h * self.precond[i]);
        }
        let log_a = self.u_val - uy + log_q;
        if log_a >= 0.0 || uniform(rng) < log_a.exp() {
            self.x = y;
            self.u_val = uy;
            self.grad = gy;
            true
        } else {
            false
        }
    }

    fn hmc(&mut self, eps: f64, steps: usize, rng: &mut Rng) -> bool {
        let n = self.x.len();
        let start = usize::from(self.freeze_zero);
        let mut p: Vec<f64> = (0..n).map(|i| if i < start { 0.0 } else { normal(rng) / self.precond[i].sqrt() }).collect();
        let kinetic = |p: &[f64], m: &[f64]| 0.5 * p.iter().zip(m).map(|(a, b)| a * a * b).sum::<f64>();
        let h0 = self.u_val + kinetic(&p, &self.precond);
        let mut y = self.x.clone();
        let mut g = self.grad.clone();
        let mut uy = self.u_val;
        for _ in 0..steps {
            for i in start..n {
                p[i] -= 0.5 * eps * g[i];
                y[i] += eps * self.precond[i] * p[i];
            }
            uy = self.evaluate(&y, &mut g);
            if !uy.is_finite() {
                return false;
            }
            for i in start..n {
                p[i] -= 0.5 * eps * g[i];
            }
        }
        let h1 = uy + kinetic(&p, &self.precond);
        let log_a = h0 - h1;
        if log_a >= 0.0 || uniform(rng) < log_a.exp() {
            self.x = y;
            self.u_val = uy;
            self.grad = g;
            true
        } else {
            false
        }
    }

    /// Proposes the global sign flip `u ↦ −u`.
    pub fn flip(&mut self, rng: &mut Rng) -> bool {
        let y: Vec<f64> = self.x.iter().map(|v| -v).collect();
        let mut gy = vec![0.0; y.len()];
        let uy = self.evaluate(&y, &mut gy);
        let log_a = self.u_val - uy;
        if uy.is_finite() && (log_a >= 0.0 || uniform(rng) < log_a.exp()) {
            self.x = y;
            self.u_val = uy;
            self.grad = gy;
            true
        } else {
            false
        }
    }

    /// Adapts the MALA step towards acceptance `target` over `steps` steps.
    pub fn tune(&mut self, steps: usize, target: f64, rng: &mut Rng) {
        let Proposal::Mala { mut h } = self.config.proposal else {
            for _ in 0..steps {
                self.step(rng);
            }
            return;
        };
        for n in 0..steps {
            let acc = self.mala(h, rng);
            let rate = 1.0 / (1.0 + n as f64).sqrt();
            h *= (rate * (f64::from(u8::from(acc)) - target)).exp();
            h = h.clamp(1e-4, 4.0);
        }
        self.config.proposal = Proposal::Mala { h };
    }
}

/// Real coordinates: `û(0)`, then `(Re û(k), Im û(k))` for positive `k`.
pub fn to_coords(f: &SpectralField) -> Vec<f64> {
    let m = &f.modes;
    let mut x = Vec::with_capacity(m.len());
    x.push(f.c[m.zero].re);
    for &i in &m.positive {
        x.push(f.c[i].re);
        x.push(f.c[i].im);
    }
    x
}

fn write_coords(m: &ModeSet, x: &[f64], c: &mut [Complex64]) {
    c[m.zero] = Complex64::new(x[0], 0.0);
    for (p, &i) in m.positive.iter().enumerate() {
        let z = Complex64::new(x[1 + 2 * p], x[2 + 2 * p]);
        c[i] = z;
        c[m.neg[i]] = z.conj();
    }
}

pub fn from_coords(m: &Arc<ModeSet>, x: &[f64]) -> SpectralField {
    let mut f = SpectralField::zeros(m);
    write_coords(m, x, &mut f.c);
    f
}

/// One Metropolis step of a chain started at `state`.
pub fn mcmc_step(state: &SpectralField, config: GibbsConfig, rng: &mut Rng) -> Result<(SpectralField, bool)> {
    let mut s = GibbsSampler::new(config, state, None, false)?;
    let acc = s.step(rng);
    Ok((s.state(), acc))
}

/// Saddle-conditioned phase point: `û(0) = 0` with the oscillatory modes
/// drawn by a chain started from the negative-mass Gaussian, and white-noise
/// velocity whose zero mode is replaced by `|g|/√(βL^d)`.
pub fn sample_conditioned_saddle(config: GibbsConfig, burn_in: usize, rng: &mut Rng) -> Result<PhaseState> {
    let modes = ModeSet::new(config.spec);
    let u0 = sample_gff(&modes, config.beta, MassKind::NegativeUnit, rng);
    let mut s = GibbsSampler::new(config, &u0, None, true)?;
    for _ in 0..burn_in {
        s.step(rng);
    }
    let mut v = sample_white_noise(&modes, config.beta, rng);
    let q = normal(rng).abs() / (config.beta * config.spec.volume()).sqrt();
    v.c[modes.zero] = Complex64::new(q.max(f64::MIN_POSITIVE), 0.0);
    PhaseState::new(s.state(), v)
}

/// Stream of saddle-conditioned samples from one persistent chain.
pub struct SaddleSampler {
    chain: GibbsSampler,
    thin: usize,
    modes: Arc<ModeSet>,
}

impl SaddleSampler {
    pub fn new(config: GibbsConfig, burn_in: usize, thin: usize, rng: &mut Rng) -> Result<Self> {
        let modes = ModeSet::new(config.spec);
        let u0 = sample_gff(&modes, config.beta, MassKind::NegativeUnit, rng);
        let mut chain = GibbsSampler::new(config, &u0, None, true)?;
        chain.tune(burn_in, 0.6, rng);
        Ok(SaddleSampler { chain, thin: thin.max(1), modes })
    }

    pub fn next(&mut self, rng: &mut Rng) -> PhaseState {
        for _ in 0..self.thin {
            self.chain.step(rng);
        }
        let beta = self.chain.config.beta;
        let mut v = sample_white_noise(&self.modes, beta, rng);
        let q = normal(rng).abs() / (beta * self.modes.spec.volume()).sqrt();
        v.c[self.modes.zero] = Complex64::new(q.max(f64::MIN_POSITIVE), 0.0);
        PhaseState { u: self.chain.state(), v }
    }

    pub fn diagnostics(&self) -> (usize, usize) {
        (self.chain.accepted, self.chain.proposed)
    }
}

/// One umbrella window: bias parameters and the recorded zero-mode samples.
#[derive(Clone, Debug, PartialEq)]
pub struct UmbrellaWindow {
    pub center: f64,
    pub stiffness: f64,
    pub samples: Vec<f64>,
    pub diagnostics: SamplerDiagnostics,
}

impl UmbrellaWindow {
    pub fn bias_energy(&self, x: f64) -> f64 {
        0.5 * self.stiffness * (x - self.center).powi(2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UmbrellaPlan {
    pub centers: Vec<f64>,
    /// Stiffness of every biased window.
    pub stiffness: f64,
    /// Add an unbiased window (stiffness 0, sign flips enabled).
    pub unbiased: bool,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub seed: u64,
}

impl UmbrellaPlan {
    /// Windows every `spacing` over `[−1.5, 1.5]`, with stiffness chosen so
    /// the biased zero mode has standard deviation about `width` even at the
    /// saddle.
    pub fn covering(config: &GibbsConfig, spacing: f64, width: f64, samples: usize, seed: u64) -> Self {
        let count = (3.0 / spacing).round() as usize;
        let centers = (0..=count).map(|i| -1.5 + 3.0 * i as f64 / count as f64).collect();
        let stiffness = config.beta * config.spec.volume() * (1.0 + 3.0 * config.wick_c) + 1.0 / (width * width);
        UmbrellaPlan { centers, stiffness, unbiased: true, burn_in: 2000, samples, thin: 2, seed }
    }
}

/// Runs the windows of `plan` in parallel (window `i` uses stream `i`).
pub fn run_umbrella(config: &GibbsConfig, plan: &UmbrellaPlan) -> Result<Vec<UmbrellaWindow>> {
    let mut specs: Vec<(f64, f64)> = plan.centers.iter().map(|&c| (c, plan.stiffness)).collect();
    if plan.unbiased {
        specs.push((0.0, 0.0));
    }
    let modes = ModeSet::new(config.spec);
    specs
        .par_iter()
        .enumerate()
        .map(|(w, &(center, stiffness))| {
            let mut rng = stream(plan.seed, w as u64);
            let mut cfg = *config;
            let bias = if stiffness > 0.0 {
                Some(Bias { center, stiffness })
            } else {
                if cfg.flip_every == 0 {
                    cfg.flip_every = 10;
                }
                None
            };
            let mut u0 = sample_gff(&modes, cfg.beta, MassKind::PositivePlusTwo, &mut rng).project_perp();
            let start = if stiffness > 0.0 { center } else { 1.0 };
            u0.c[modes.zero] = Complex64::new(start, 0.0);
            let mut chain = GibbsSampler::new(cfg, &u0, bias, false)?;
            chain.tune(plan.burn_in, 0.6, &mut rng);
            chain.accepted = 0;
            chain.proposed = 0;
            let mut samples = Vec::with_capacity(plan.samples);
            for _ in 0..plan.samples {
                for _ in 0..plan.thin {
                    chain.step(&mut rng);
                }
                samples.push(chain.zero_mode());
            }
            let diagnostics = SamplerDiagnostics::from_series(chain.accepted, chain.proposed, &samples);
            Ok(UmbrellaWindow { center, stiffness, samples, diagnostics })
        })
        .collect()
}

/// Histogram grid for the reweighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WhamGrid {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

impl Default for WhamGrid {
    fn default() -> Self {
        WhamGrid { lo: -3.0, hi: 3.0, width: 0.0025 }
    }
}

/// Self-consistent histogram reweighting; returns the normalized bin
/// probabilities of the unbiased zero-mode marginal.
pub fn wham(windows: &[(&UmbrellaWindow, &[f64])], grid: WhamGrid) -> Result<Vec<f64>> {
    let bins = ((grid.hi - grid.lo) / grid.width).round() as usize;
    let nw = windows.len();
    let mut counts = vec![0.0; bins];
    let mut totals = vec![0.0; nw];
    for (i, (_, samples)) in windows.iter().enumerate() {
        for &x in samples.iter() {
            let b = ((x - grid.lo) / grid.width).floor();
            if b >= 0.0 && (b as usize) < bins {
                counts[b as usize] += 1.0;
                totals[i] += 1.0;
            }
        }
    }
    if totals.contains(&0.0) {
        return Err(Error::Reweighting("a window has no samples inside the histogram range".into()));
    }
    let bias: Vec<Vec<f64>> = windows
        .iter()
        .map(|(w, _)| (0..bins).map(|j| (-w.bias_energy(grid.lo + (j as f64 + 0.5) * grid.width)).exp()).collect())
        .collect();
    let mut f = vec![0.0; nw];
    let mut p = vec![0.0; bins];
    for iter in 0..200_000 {
        let ef: Vec<f64> = f.iter().map(|v: &f64| v.exp()).collect();
        for j in 0..bins {
            if counts[j] == 0.0 {
                p[j] = 0.0;
                continue;
            }
            let denom: f64 = (0..nw).map(|i| totals[i] * ef[i] * bias[i][j]).sum();
            p[j] = counts[j] / denom;
        }
        let norm: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= norm);
        let mut change: f64 = 0.0;
        for i in 0..nw {
            let z: f64 = (0..bins).map(|j| p[j] * bias[i][j]).sum();
            if z <= 0.0 {
                return Err(Error::Reweighting(format!("window {i} has no overlap with the estimated density")));
            }
            let fi = -z.ln();
            change = change.max((fi - f[i]).abs());
            f[i] = fi;
        }
        if change < 1e-11 && iter > 2 {
            return Ok(p);
        }
    }
    Err(Error::Reweighting("self-consistency iteration did not converge".into()))
}

/// Histogram overlap `Σ min(p_i, p_j)` between consecutive biased windows on
/// bins of width 0.05.
pub fn window_overlaps(windows: &[UmbrellaWindow]) -> Vec<f64> {
    let mut biased: Vec<&UmbrellaWindow> = windows.iter().filter(|w| w.stiffness > 0.0).collect();
    biased.sort_by(|a, b| a.center.total_cmp(&b.center));
    let hist = |w: &UmbrellaWindow| {
        let mut h = vec![0.0; 160];
        for &x in &w.samples {
            let b = ((x + 4.0) / 0.05).floor();
            if (0.0..160.0).contains(&b) {
                h[b as usize] += 1.0 / w.samples.len() as f64;
            }
        }
        h
    };
    biased.windows(2).map(|p| hist(p[0]).iter().zip(hist(p[1]).iter()).map(|(a, b)| a.min(*b)).sum()).collect()
}

/// Saddle density estimate with its batch standard error.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleRatio {
    pub ratio: f64,
    pub se: f64,
    pub batches: Vec<f64>,
    pub overlaps: Vec<f64>,
}

/// Zero-mode density at `x0` from bin masses within `±half` of `x0`.
pub fn density_at(p: &[f64], grid: WhamGrid, x0: f64, half: f64) -> f64 {
    let lo = ((x0 - half - grid.lo) / grid.width).round() as usize;
    let hi = ((x0 + half - grid.lo) / grid.width).round() as usize;
    p[lo..hi].iter().sum::<f64>() / (2.0 * half)
}

/// Density of `û(0)` at zero under the normalized Gibbs measure, from
/// umbrella windows reweighted jointly, with a 10-block standard error.
pub fn estimate_saddle_ratio(windows: &[UmbrellaWindow]) -> Result<SaddleRatio> {
    estimate_density(windows, 0.0)
}

/// Density of `û(0)` at `x0` from the umbrella windows.
pub fn estimate_density(windows: &[UmbrellaWindow], x0: f64) -> Result<SaddleRatio> {
    let grid = WhamGrid::default();
    let half = 0.01;
    let overlaps = window_overlaps(windows);
    if let Some((i, &o)) = overlaps.iter().enumerate().find(|(_, &o)| o < 0.01) {
        return Err(Error::Reweighting(format!("windows {i} and {} overlap by only {o:.4}; overlaps: {overlaps:?}", i + 1)));
    }
    let all: Vec<(&UmbrellaWindow, &[f64])> = windows.iter().map(|w| (w, w.samples.as_slice())).collect();
    let ratio = density_at(&wham(&all, grid)?, grid, x0, half);
    const BLOCKS: usize = 10;
    let batches: Vec<f64> = (0..BLOCKS)
        .into_par_iter()
        .map(|b| {
            let part: Vec<(&UmbrellaWindow, &[f64])> = windows
                .iter()
                .map(|w| {
                    let n = w.samples.len() / BLOCKS;
                    (w, &w.samples[b * n..(b + 1) * n])
                })
                .collect();
            wham(&part, grid).map(|p| density_at(&p, grid, x0, half))
        })
        .collect::<Result<Vec<f64>>>()?;
    let se = mean_se(&batches).1;
    Ok(SaddleRatio { ratio, se, batches, overlaps })
}

/// Kernel-free saddle density from an unbiased chain: fraction of samples
/// within `±half` of zero divided by `2·half`.
pub fn naive_saddle_density(samples: &[f64], half: f64) -> (f64, f64) {
    let hits: Vec<f64> = samples.iter().map(|&x| if x.abs() < half { 1.0 / (2.0 * half) } else { 0.0 }).collect();
    crate::stats::batch_means(&hits, 20)
}

/// Quadratic-energy and `∫:u^j:` helpers on a field.
pub fn wick_integral(u: &SpectralField, j: usize, wick_c: f64) -> f64 {
    let mut kernel = PointwiseKernel::new(&u.modes, j.max(1));
    u.spec().volume() * kernel.wick_mean(&u.c, j, wick_c)
}

/// Pointwise change of Wick ordering `:φ²:_{C'} = :φ²:_C − (C' − C)` on a grid.
pub fn reorder_square(values: &[f64], c: f64, c_prime: f64) -> Vec<f64> {
    values.iter().map(|&x| hermite(2, x, c) - (c_prime - c)).collect()
}
