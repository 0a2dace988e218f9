//! Invariance checks for the truncated wave flow: pushforward of
//! Gibbs × white-noise samples and long-run energy drift.

use rayon::prelude::*;

use crate::dynamics::{Integrator, IntegratorConfig};
use crate::error::{Error, Result};
use crate::gibbs::{sample_gff, sample_white_noise, GibbsConfig, GibbsSampler};
use crate::rng::{substream, Rng};
use crate::spectral::{MassKind, ModeSet, PhaseState, PointwiseKernel, TorusSpec};
use crate::stats::{ks_two_sample, regression_slope};

pub const OBSERVABLE_NAMES: [&str; 4] = ["zero_mode", "u_l2_sq", "u_l4_4", "v_l2_sq"];

/// `û(0)`, `‖u‖²_{L²}`, `‖u‖⁴_{L⁴}`, `‖v‖²_{L²}`.
pub fn observables(s: &PhaseState, kernel: &mut PointwiseKernel) -> [f64; 4] {
    let vol = s.u.spec().volume();
    [s.u.zero_mode(), s.u.l2_sq(), vol * kernel.quartic_mean(&s.u.c), s.v.l2_sq()]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvarianceConfig {
    pub spec: TorusSpec,
    pub beta: f64,
    pub wick_c: f64,
    pub dt: f64,
    /// Flow time applied to the pushed sample.
    pub horizon: f64,
    /// Samples per group.
    pub samples: usize,
    /// Independent chains per group.
    pub replicas: usize,
    pub burn_in: usize,
    /// Chain steps between recorded samples.
    pub thin: usize,
    pub seed: u64,
}

impl InvarianceConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta = {} must be positive and finite", self.beta)));
        }
        if !(self.dt > 0.0 && self.horizon >= 0.0) || self.samples < 2 || self.replicas == 0 || self.thin == 0 {
            return Err(Error::InvalidArgument("invariance test needs dt > 0, horizon ≥ 0, samples ≥ 2, replicas and thin ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservableTest {
    pub name: &'static str,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceReport {
    pub tests: Vec<ObservableTest>,
    pub acceptance: f64,
}

impl InvarianceReport {
    pub fn min_p(&self) -> f64 {
        self.tests.iter().map(|t| t.p_value).fold(1.0, f64::min)
    }

    pub fn pass(&self, alpha: f64) -> bool {
        self.tests.iter().all(|t| t.p_value >= alpha)
    }
}

fn gibbs_states(cfg: &InvarianceConfig, group: u64) -> Result<(Vec<PhaseState>, f64)> {
    let modes = ModeSet::new(cfg.spec);
    let per = cfg.samples.div_ceil(cfg.replicas);
    let gibbs = GibbsConfig { flip_every: 10, ..GibbsConfig::phi4(cfg.spec, cfg.beta, cfg.wick_c) };
    let parts = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<(Vec<PhaseState>, usize, usize)> {
            let mut rng: Rng = substream(cfg.seed, group, r as u64);
            let u0 = sample_gff(&modes, cfg.beta, MassKind::PositivePlusTwo, &mut rng);
            let mut chain = GibbsSampler::new(gibbs, &u0, None, false)?;
            chain.tune(cfg.burn_in, 0.6, &mut rng);
            let (a0, p0) = (chain.accepted, chain.proposed);
            let states = (0..per)
                .map(|_| {
                    for _ in 0..cfg.thin {
                        chain.step(&mut rng);
                    }
                    PhaseState { u: chain.state(), v: sample_white_noise(&modes, cfg.beta, &mut rng) }
                })
                .collect();
            Ok((states, chain.accepted - a0, chain.proposed - p0))
        })
        .collect::<Result<Vec<_>>>()?;
    let (acc, prop) = parts.iter().fold((0, 0), |(a, p), x| (a + x.1, p + x.2));
    let mut states: Vec<PhaseState> = parts.into_iter().flat_map(|x| x.0).collect();
    states.truncate(cfg.samples);
    Ok((states, acc as f64 / prop.max(1) as f64))
}

/// Two-sample tests of the observables between NLW-pushed samples (group 0)
/// and fresh samples (group 1). Chain `r` of group `g` uses substream `(g, r)`.
pub fn pushforward_invariance(cfg: &InvarianceConfig) -> Result<InvarianceReport> {
    cfg.validate()?;
    let modes = ModeSet::new(cfg.spec);
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let integ_cfg = IntegratorConfig::nlw(cfg.dt, cfg.wick_c);
    let (pushed, acc_a) = gibbs_states(cfg, 0)?;
    let (fresh, acc_b) = gibbs_states(cfg, 1)?;
    let pushed = pushed
        .into_par_iter()
        .map(|mut s| -> Result<PhaseState> {
            let mut integ = Integrator::new(&modes, integ_cfg)?;
            for _ in 0..steps {
                integ.nlw_step(&mut s);
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut kernel = PointwiseKernel::new(&modes, 4);
    let oa: Vec<[f64; 4]> = pushed.iter().map(|s| observables(s, &mut kernel)).collect();
    let ob: Vec<[f64; 4]> = fresh.iter().map(|s| observables(s, &mut kernel)).collect();
    if oa.iter().chain(&ob).flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("invariance observable".into()));
    }
    let tests = (0..4)
        .map(|j| {
            let a: Vec<f64> = oa.iter().map(|o| o[j]).collect();
            let b: Vec<f64> = ob.iter().map(|o| o[j]).collect();
            let (statistic, p_value) = ks_two_sample(&a, &b);
            ObservableTest { name: OBSERVABLE_NAMES[j], statistic, p_value }
        })
        .collect();
    Ok(InvarianceReport { tests, acceptance: 0.5 * (acc_a + acc_b) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyDrift {
    /// Least-squares slope of `H(t)`.
    pub slope: f64,
    pub horizon: f64,
    pub mean_energy: f64,
    /// `|slope|·T/|H|`.
    pub relative: f64,
    pub max_deviation: f64,
}

/// Energy along one NLW trajectory of `steps` steps from a Gibbs ×
/// white-noise start, recorded every `record_every` steps.
pub fn energy_drift(
    spec: TorusSpec,
    beta: f64,
    wick_c: f64,
    dt: f64,
    steps: usize,
    record_every: usize,
    seed: u64,
) -> Result<EnergyDrift> {
    let modes = ModeSet::new(spec);
    let mut rng = substream(seed, 0, 0);
    let gibbs = GibbsConfig { flip_every: 10, ..GibbsConfig::phi4(spec, beta, wick_c) };
    let u0 = sample_gff(&modes, beta, MassKind::PositivePlusTwo, &mut rng);
    let mut chain = GibbsSampler::new(gibbs, &u0, None, false)?;
    chain.tune(2000, 0.6, &mut rng);
    let mut s = PhaseState { u: chain.state(), v: sample_white_noise(&modes, beta, &mut rng) };
    let mut integ = Integrator::new(&modes, IntegratorConfig::nlw(dt, wick_c))?;
    let every = record_every.max(1);
    let mut t = vec![0.0];
    let mut h = vec![integ.energy(&s)];
    for n in 1..=steps {
        integ.nlw_step(&mut s);
        if n % every == 0 || n == steps {
            t.push(n as f64 * dt);
            h.push(integ.energy(&s));
        }
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("energy".into()));
    }
    let (slope, _) = regression_slope(&t, &h);
    let horizon = steps as f64 * dt;
    let mean_energy = h.iter().sum::<f64>() / h.len() as f64;
    let max_deviation = h.iter().map(|x| (x - h[0]).abs()).fold(0.0, f64::max);
    Ok(EnergyDrift { slope, horizon, mean_energy, relative: slope.abs() * horizon / mean_energy.abs(), max_deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{model_wick_constant, SpectralField};

    #[test]
    fn observables_examples() {
        let m = ModeSet::new(TorusSpec::new(2, 2.0, 3).unwrap());
        let mut k = PointwiseKernel::new(&m, 4);
        let s = PhaseState { u: SpectralField::constant(&m, 2.0), v: SpectralField::constant(&m, -1.0) };
        let o = observables(&s, &mut k);
        assert_eq!(o[0], 2.0);
        assert!((o[1] - 16.0).abs() < 1e-12 && (o[2] - 64.0).abs() < 1e-10 && (o[3] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn pushforward_passes_in_1d() {
        let spec = TorusSpec::new(1, 1.0, 8).unwrap();
        let cfg = InvarianceConfig {
            spec,
            beta: 2.0,
            wick_c: 0.0,
            dt: 0.01,
            horizon: 10.0,
            samples: 1000,
            replicas: 20,
            burn_in: 1000,
            thin: 20,
            seed: 5,
        };
        let r = pushforward_invariance(&cfg).unwrap();
        assert!(r.pass(0.01), "{r:?}");
        assert_eq!(pushforward_invariance(&cfg).unwrap(), r);
    }

    #[test]
    fn pushforward_detects_wrong_flow() {
        // A flow with the wrong velocity scale breaks invariance.
        let spec = TorusSpec::new(1, 1.0, 4).unwrap();
        let cfg = InvarianceConfig {
            spec,
            beta: 2.0,
            wick_c: 0.0,
            dt: 0.01,
            horizon: 0.0,
            samples: 800,
            replicas: 8,
            burn_in: 500,
            thin: 10,
            seed: 6,
        };
        let (a, _) = gibbs_states(&cfg, 0).unwrap();
        let (b, _) = gibbs_states(&cfg, 1).unwrap();
        let m = ModeSet::new(spec);
        let mut k = PointwiseKernel::new(&m, 4);
        let va: Vec<f64> = a.iter().map(|s| 1.3 * observables(s, &mut k)[3]).collect();
        let vb: Vec<f64> = b.iter().map(|s| observables(s, &mut k)[3]).collect();
        assert!(ks_two_sample(&va, &vb).1 < 0.01);
    }

    #[test]
    fn energy_drift_small() {
        let spec = TorusSpec::new(2, 1.0, 4).unwrap();
        let c = model_wick_constant(spec, 4.0, true);
        let d = energy_drift(spec, 4.0, c, 0.005, 20_000, 10, 1).unwrap();
        assert!(d.relative < 1e-4, "{d:?}");
    }
}
