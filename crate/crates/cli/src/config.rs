//! Strict JSON experiment configuration: every violation is collected with
//! its path, unknown keys are rejected, and the canonical form re-parses to
//! the same value.

use std::collections::BTreeSet;
use std::fmt;

use kramers_core::spectral::{model_wick_constant, MassKind, ModeSet, TorusSpec};
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Prefactor,
    SampleGibbs,
    Simulate,
    TstRate,
    Transmission,
    Variational,
    Renorm3d,
    InvarianceTest,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Prefactor,
        ExperimentKind::SampleGibbs,
        ExperimentKind::Simulate,
        ExperimentKind::TstRate,
        ExperimentKind::Transmission,
        ExperimentKind::Variational,
        ExperimentKind::Renorm3d,
        ExperimentKind::InvarianceTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Prefactor => "prefactor",
            ExperimentKind::SampleGibbs => "sample-gibbs",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::TstRate => "tst-rate",
            ExperimentKind::Transmission => "transmission",
            ExperimentKind::Variational => "variational",
            ExperimentKind::Renorm3d => "renorm3d",
            ExperimentKind::InvarianceTest => "invariance-test",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TorusSection {
    pub d: usize,
    pub l: f64,
    pub n: usize,
}

impl TorusSection {
    pub fn spec(&self) -> TorusSpec {
        TorusSpec { d: self.d, l: self.l, n: self.n }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelSection {
    pub beta: f64,
    /// Wick-order the cubic term (default: on for `d ≥ 2`).
    pub renormalize: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    Mala,
    Hmc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SamplerSection {
    pub proposal: ProposalKind,
    /// MALA step `h` or HMC leapfrog step.
    pub step: f64,
    pub leapfrog: usize,
    pub flip_every: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub chains: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrefactorParams {
    pub n_values: Vec<usize>,
    pub betas: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Nlw,
    Sdnlw,
    She,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimulateParams {
    pub scheme: SchemeKind,
    pub dt: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub record_every: usize,
    pub burn_in: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TstRateParams {
    pub dt: f64,
    pub segment: f64,
    pub total_time: f64,
    pub burn_in: usize,
    pub replicas: usize,
    pub batches: usize,
    pub umbrella_spacing: f64,
    pub umbrella_width: f64,
    pub umbrella_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransmissionParams {
    pub betas: Vec<f64>,
    pub delta: f64,
    pub dt: f64,
    pub t_max: f64,
    pub shots: usize,
    pub burn_in: usize,
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialSpec {
    Zero,
    Linear { c: f64 },
    WickQuartic { lambda: f64 },
    DoubleWell { beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeedbackSpec {
    pub theta: f64,
    pub target: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassSpec {
    Positive,
    Negative,
}

impl MassSpec {
    pub fn kind(self) -> MassKind {
        match self {
            MassSpec::Positive => MassKind::PositivePlusTwo,
            MassSpec::Negative => MassKind::NegativeUnit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationalParams {
    pub mass: MassSpec,
    pub potentials: Vec<PotentialSpec>,
    pub feedback: Vec<FeedbackSpec>,
    pub paths: usize,
    pub oracle_samples: usize,
    pub bracket: [f64; 2],
    pub scan_points: usize,
    pub per_octave: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Renorm3dParams {
    pub n_values: Vec<usize>,
    pub per_octave: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InvarianceParams {
    pub dt: f64,
    pub horizon: f64,
    pub samples: usize,
    pub replicas: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub alpha: f64,
    pub energy_steps: usize,
    pub energy_record_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Params {
    Prefactor(PrefactorParams),
    SampleGibbs(SamplerSection),
    Simulate(SimulateParams),
    TstRate(TstRateParams),
    Transmission(TransmissionParams),
    Variational(VariationalParams),
    Renorm3d(Renorm3dParams),
    InvarianceTest(InvarianceParams),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub torus: TorusSection,
    pub model: ModelSection,
    /// Sampler used for Gibbs initial data and saddle samples.
    pub sampler: SamplerSection,
    #[serde(flatten)]
    pub params: Params,
}

impl ExperimentConfig {
    pub fn spec(&self) -> TorusSpec {
        self.torus.spec()
    }

    pub fn wick_c(&self) -> f64 {
        self.wick_c_at(self.model.beta)
    }

    pub fn wick_c_at(&self, beta: f64) -> f64 {
        model_wick_constant(self.spec(), beta, self.model.renormalize)
    }

    /// Canonical JSON value with every default filled in.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Compact canonical text (keys sorted).
    pub fn canonical(&self) -> String {
        serde_json::to_string(&self.to_value()).expect("config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {}: {}", if v.path.is_empty() { "<root>" } else { &v.path }, v.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Default)]
struct Ctx {
    violations: Vec<Violation>,
}

impl Ctx {
    fn err(&mut self, path: &str, message: impl Into<String>) {
        self.violations.push(Violation { path: path.to_string(), message: message.into() });
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// A JSON object being consumed key by key.
struct Obj<'v> {
    map: Option<&'v Map<String, Value>>,
    path: String,
    used: BTreeSet<&'static str>,
}

impl<'v> Obj<'v> {
    fn new(ctx: &mut Ctx, v: Option<&'v Value>, path: String) -> Self {
        let map = match v {
            Some(Value::Object(m)) => Some(m),
            Some(_) => {
                ctx.err(&path, "expected an object");
                None
            }
            None => None,
        };
        Obj { map, path, used: BTreeSet::new() }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'v Value> {
        self.used.insert(key);
        self.map.and_then(|m| m.get(key)).filter(|v| !v.is_null())
    }

    fn child(&mut self, ctx: &mut Ctx, key: &'static str) -> Obj<'v> {
        let v = self.raw(key);
        Obj::new(ctx, v, join(&self.path, key))
    }

    fn missing(&self, ctx: &mut Ctx, key: &str) {
        if self.map.is_some() {
            ctx.err(&join(&self.path, key), "required key is missing");
        }
    }

    fn f64_or(&mut self, ctx: &mut Ctx, key: &'static str, default: Option<f64>) -> f64 {
        match self.raw(key) {
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => x,
                _ => {
                    ctx.err(&join(&self.path, key), "expected a finite number");
                    f64::NAN
                }
            },
            None => default.unwrap_or_else(|| {
                self.missing(ctx, key);
                f64::NAN
            }),
        }
    }

    fn f64(&mut self, ctx: &mut Ctx, key: &'static str) -> f64 {
        self.f64_or(ctx, key, None)
    }

    fn u64_or(&mut self, ctx: &mut Ctx, key: &'static str, default: Option<u64>) -> u64 {
        match self.raw(key) {
            Some(v) => v.as_u64().unwrap_or_else(|| {
                ctx.err(&join(&self.path, key), "expected a non-negative integer");
                0
            }),
            None => default.unwrap_or_else(|| {
                self.missing(ctx, key);
                0
            }),
        }
    }

    fn usize_or(&mut self, ctx: &mut Ctx, key: &'static str, default: Option<usize>) -> usize {
        self.u64_or(ctx, key, default.map(|d| d as u64)) as usize
    }

    fn bool_or(&mut self, ctx: &mut Ctx, key: &'static str, default: bool) -> bool {
        match self.raw(key) {
            Some(Value::Bool(b)) => *b,
            Some(_) => {
                ctx.err(&join(&self.path, key), "expected true or false");
                default
            }
            None => default,
        }
    }

    fn choice<T: Copy>(&mut self, ctx: &mut Ctx, key: &'static str, options: &[(&str, T)], default: T) -> T {
        match self.raw(key) {
            Some(Value::String(s)) => options.iter().find(|(n, _)| n == s).map(|(_, t)| *t).unwrap_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                ctx.err(&join(&self.path, key), format!("unknown value {s:?}, expected one of {}", names.join(", ")));
                default
            }),
            Some(_) => {
                ctx.err(&join(&self.path, key), "expected a string");
                default
            }
            None => default,
        }
    }

    fn array(&mut self, ctx: &mut Ctx, key: &'static str) -> Option<(&'v Vec<Value>, String)> {
        let path = join(&self.path, key);
        match self.raw(key) {
            Some(Value::Array(a)) => Some((a, path)),
            Some(_) => {
                ctx.err(&path, "expected an array");
                None
            }
            None => None,
        }
    }

    fn f64_list(&mut self, ctx: &mut Ctx, key: &'static str, default: Vec<f64>) -> Vec<f64> {
        let Some((a, path)) = self.array(ctx, key) else { return default };
        a.iter()
            .enumerate()
            .map(|(i, v)| match v.as_f64() {
                Some(x) if x.is_finite() => x,
                _ => {
                    ctx.err(&format!("{path}[{i}]"), "expected a finite number");
                    f64::NAN
                }
            })
            .collect()
    }

    fn usize_list(&mut self, ctx: &mut Ctx, key: &'static str, default: Vec<usize>) -> Vec<usize> {
        let Some((a, path)) = self.array(ctx, key) else { return default };
        a.iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_u64().map(|x| x as usize).unwrap_or_else(|| {
                    ctx.err(&format!("{path}[{i}]"), "expected a non-negative integer");
                    0
                })
            })
            .collect()
    }

    fn finish(self, ctx: &mut Ctx) {
        if let Some(m) = self.map {
            for k in m.keys() {
                if !self.used.contains(k.as_str()) {
                    let allowed: Vec<&str> = self.used.iter().copied().collect();
                    ctx.err(&join(&self.path, k), format!("unknown key (allowed: {})", allowed.join(", ")));
                }
            }
        }
    }
}

fn check(ctx: &mut Ctx, ok: bool, path: &str, message: impl Into<String>) {
    if !ok {
        ctx.err(path, message);
    }
}

fn positive(ctx: &mut Ctx, x: f64, path: &str) {
    check(ctx, x.is_nan() || x > 0.0, path, format!("must be positive, got {x}"));
}

fn at_least(ctx: &mut Ctx, x: usize, min: usize, path: &str) {
    check(ctx, x >= min, path, format!("must be at least {min}, got {x}"));
}

fn step_dt(ctx: &mut Ctx, dt: f64, path: &str) {
    check(ctx, dt.is_nan() || (dt > 0.0 && dt <= 0.01), path, format!("dt = {dt} must lie in (0, 0.01]"));
}

const PROPOSALS: [(&str, ProposalKind); 2] = [("mala", ProposalKind::Mala), ("hmc", ProposalKind::Hmc)];
const SCHEMES: [(&str, SchemeKind); 3] = [("nlw", SchemeKind::Nlw), ("sdnlw", SchemeKind::Sdnlw), ("she", SchemeKind::She)];
const MASSES: [(&str, MassSpec); 2] = [("positive", MassSpec::Positive), ("negative", MassSpec::Negative)];

fn parse_sampler(ctx: &mut Ctx, mut o: Obj<'_>) -> SamplerSection {
    let s = SamplerSection {
        proposal: o.choice(ctx, "proposal", &PROPOSALS, ProposalKind::Mala),
        step: o.f64_or(ctx, "step", Some(0.5)),
        leapfrog: o.usize_or(ctx, "leapfrog", Some(8)),
        flip_every: o.usize_or(ctx, "flip_every", Some(10)),
        burn_in: o.usize_or(ctx, "burn_in", Some(2000)),
        samples: o.usize_or(ctx, "samples", Some(1000)),
        thin: o.usize_or(ctx, "thin", Some(10)),
        chains: o.usize_or(ctx, "chains", Some(4)),
    };
    let p = o.path.clone();
    positive(ctx, s.step, &join(&p, "step"));
    at_least(ctx, s.leapfrog, 1, &join(&p, "leapfrog"));
    at_least(ctx, s.thin, 1, &join(&p, "thin"));
    at_least(ctx, s.chains, 1, &join(&p, "chains"));
    o.finish(ctx);
    s
}

fn parse_potential(ctx: &mut Ctx, v: &Value, path: String) -> PotentialSpec {
    let mut o = Obj::new(ctx, Some(v), path);
    let kinds = [("zero", 0u8), ("linear", 1), ("wick-quartic", 2), ("double-well", 3)];
    if o.map.is_some() && o.map.and_then(|m| m.get("kind")).is_none() {
        o.missing(ctx, "kind");
    }
    let p = match o.choice(ctx, "kind", &kinds, 0) {
        0 => PotentialSpec::Zero,
        1 => PotentialSpec::Linear { c: o.f64(ctx, "c") },
        2 => PotentialSpec::WickQuartic { lambda: o.f64(ctx, "lambda") },
        _ => PotentialSpec::DoubleWell { beta: o.f64(ctx, "beta") },
    };
    o.finish(ctx);
    p
}

fn parse_params(ctx: &mut Ctx, kind: ExperimentKind, mut o: Obj<'_>, torus: TorusSection, model: ModelSection) -> Params {
    let p = o.path.clone();
    let params = match kind {
        ExperimentKind::Prefactor => {
            let q = PrefactorParams {
                n_values: o.usize_list(ctx, "n_values", vec![torus.n]),
                betas: o.f64_list(ctx, "betas", vec![model.beta]),
            };
            for (i, b) in q.betas.iter().enumerate() {
                positive(ctx, *b, &format!("{}[{i}]", join(&p, "betas")));
            }
            check(ctx, !q.n_values.is_empty(), &join(&p, "n_values"), "must not be empty");
            Params::Prefactor(q)
        }
        ExperimentKind::SampleGibbs => {
            let s = parse_sampler(ctx, o);
            return Params::SampleGibbs(s);
        }
        ExperimentKind::Simulate => {
            let s = SimulateParams {
                scheme: o.choice(ctx, "scheme", &SCHEMES, SchemeKind::Nlw),
                dt: o.f64_or(ctx, "dt", Some(0.005)),
                gamma: o.f64_or(ctx, "gamma", Some(0.0)),
                horizon: o.f64(ctx, "horizon"),
                record_every: o.usize_or(ctx, "record_every", Some(1)),
                burn_in: o.usize_or(ctx, "burn_in", Some(2000)),
            };
            step_dt(ctx, s.dt, &join(&p, "dt"));
            check(ctx, s.horizon.is_nan() || s.horizon >= 0.0, &join(&p, "horizon"), "must be non-negative");
            if !s.horizon.is_nan() && s.dt > 0.0 {
                let steps = s.horizon / s.dt;
                check(ctx, (steps - steps.round()).abs() <= 1e-9 * steps.max(1.0), &join(&p, "horizon"), "must be an integer multiple of dt");
            }
            check(ctx, s.scheme != SchemeKind::Sdnlw || s.gamma > 0.0, &join(&p, "gamma"), "sdnlw needs gamma > 0");
            at_least(ctx, s.record_every, 1, &join(&p, "record_every"));
            Params::Simulate(s)
        }
        ExperimentKind::TstRate => {
            let t = TstRateParams {
                dt: o.f64_or(ctx, "dt", Some(0.005)),
                segment: o.f64_or(ctx, "segment", Some(5.0)),
                total_time: o.f64(ctx, "total_time"),
                burn_in: o.usize_or(ctx, "burn_in", Some(2)),
                replicas: o.usize_or(ctx, "replicas", Some(8)),
                batches: o.usize_or(ctx, "batches", Some(20)),
                umbrella_spacing: o.f64_or(ctx, "umbrella_spacing", Some(0.2)),
                umbrella_width: o.f64_or(ctx, "umbrella_width", Some(0.1)),
                umbrella_samples: o.usize_or(ctx, "umbrella_samples", Some(40_000)),
            };
            step_dt(ctx, t.dt, &join(&p, "dt"));
            check(ctx, t.segment.is_nan() || t.dt.is_nan() || t.segment >= t.dt, &join(&p, "segment"), "must be at least dt");
            positive(ctx, t.total_time, &join(&p, "total_time"));
            at_least(ctx, t.replicas, 1, &join(&p, "replicas"));
            at_least(ctx, t.batches, 20, &join(&p, "batches"));
            positive(ctx, t.umbrella_spacing, &join(&p, "umbrella_spacing"));
            positive(ctx, t.umbrella_width, &join(&p, "umbrella_width"));
            at_least(ctx, t.umbrella_samples, 100, &join(&p, "umbrella_samples"));
            Params::TstRate(t)
        }
        ExperimentKind::Transmission => {
            let t = TransmissionParams {
                betas: o.f64_list(ctx, "betas", vec![model.beta]),
                delta: o.f64_or(ctx, "delta", Some(0.2)),
                dt: o.f64_or(ctx, "dt", Some(0.005)),
                t_max: o.f64_or(ctx, "t_max", Some(50.0)),
                shots: o.usize_or(ctx, "shots", Some(500)),
                burn_in: o.usize_or(ctx, "burn_in", Some(200)),
                epsilon: o.f64_or(ctx, "epsilon", Some(0.1)),
            };
            for (i, b) in t.betas.iter().enumerate() {
                positive(ctx, *b, &format!("{}[{i}]", join(&p, "betas")));
            }
            check(ctx, t.delta.is_nan() || (t.delta > 0.0 && t.delta < 0.5), &join(&p, "delta"), "must lie in (0, 1/2)");
            step_dt(ctx, t.dt, &join(&p, "dt"));
            positive(ctx, t.t_max, &join(&p, "t_max"));
            at_least(ctx, t.shots, 1, &join(&p, "shots"));
            check(ctx, t.epsilon.is_nan() || t.epsilon >= 0.0, &join(&p, "epsilon"), "must be non-negative");
            Params::Transmission(t)
        }
        ExperimentKind::Variational => {
            let potentials = match o.array(ctx, "potentials") {
                Some((a, path)) => a.iter().enumerate().map(|(i, v)| parse_potential(ctx, v, format!("{path}[{i}]"))).collect(),
                None => vec![
                    PotentialSpec::Linear { c: 0.8 },
                    PotentialSpec::WickQuartic { lambda: 0.5 },
                    PotentialSpec::DoubleWell { beta: 4.0 },
                ],
            };
            let feedback = match o.array(ctx, "feedback") {
                Some((a, path)) => a
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let mut f = Obj::new(ctx, Some(v), format!("{path}[{i}]"));
                        let s = FeedbackSpec { theta: f.f64(ctx, "theta"), target: f.f64(ctx, "target") };
                        f.finish(ctx);
                        s
                    })
                    .collect(),
                None => vec![FeedbackSpec { theta: 1.0, target: 1.0 }, FeedbackSpec { theta: 3.0, target: 1.0 }],
            };
            let bracket = o.f64_list(ctx, "bracket", vec![-2.0, 2.0]);
            let v = VariationalParams {
                mass: o.choice(ctx, "mass", &MASSES, MassSpec::Positive),
                potentials,
                feedback,
                paths: o.usize_or(ctx, "paths", Some(50_000)),
                oracle_samples: o.usize_or(ctx, "oracle_samples", Some(400_000)),
                bracket: if bracket.len() == 2 { [bracket[0], bracket[1]] } else { [f64::NAN, f64::NAN] },
                scan_points: o.usize_or(ctx, "scan_points", Some(21)),
                per_octave: o.usize_or(ctx, "per_octave", Some(64)),
            };
            check(ctx, bracket.len() == 2 && (bracket.len() != 2 || bracket[0] < bracket[1]), &join(&p, "bracket"), "must be [lo, hi] with lo < hi");
            at_least(ctx, v.paths, 2, &join(&p, "paths"));
            at_least(ctx, v.oracle_samples, 2, &join(&p, "oracle_samples"));
            at_least(ctx, v.scan_points, 3, &join(&p, "scan_points"));
            at_least(ctx, v.per_octave, 1, &join(&p, "per_octave"));
            if torus.spec().validate().is_ok() {
                let dim = ModeSet::new(torus.spec()).len();
                check(ctx, dim <= 9, "torus.n", format!("the variational oracle needs at most 9 real dimensions, got {dim}"));
            }
            Params::Variational(v)
        }
        ExperimentKind::Renorm3d => {
            let r = Renorm3dParams {
                n_values: o.usize_list(ctx, "n_values", vec![torus.n]),
                per_octave: o.usize_or(ctx, "per_octave", Some(64)),
            };
            check(ctx, torus.d == 3, "torus.d", "renorm3d needs d = 3");
            check(ctx, !r.n_values.is_empty(), &join(&p, "n_values"), "must not be empty");
            at_least(ctx, r.per_octave, 1, &join(&p, "per_octave"));
            Params::Renorm3d(r)
        }
        ExperimentKind::InvarianceTest => {
            let i = InvarianceParams {
                dt: o.f64_or(ctx, "dt", Some(0.01)),
                horizon: o.f64_or(ctx, "horizon", Some(10.0)),
                samples: o.usize_or(ctx, "samples", Some(1000)),
                replicas: o.usize_or(ctx, "replicas", Some(20)),
                burn_in: o.usize_or(ctx, "burn_in", Some(1000)),
                thin: o.usize_or(ctx, "thin", Some(20)),
                alpha: o.f64_or(ctx, "alpha", Some(0.01)),
                energy_steps: o.usize_or(ctx, "energy_steps", Some(1_000_000)),
                energy_record_every: o.usize_or(ctx, "energy_record_every", Some(100)),
            };
            step_dt(ctx, i.dt, &join(&p, "dt"));
            check(ctx, i.horizon.is_nan() || i.horizon >= 0.0, &join(&p, "horizon"), "must be non-negative");
            at_least(ctx, i.samples, 2, &join(&p, "samples"));
            at_least(ctx, i.replicas, 1, &join(&p, "replicas"));
            at_least(ctx, i.thin, 1, &join(&p, "thin"));
            check(ctx, i.alpha.is_nan() || (i.alpha > 0.0 && i.alpha < 1.0), &join(&p, "alpha"), "must lie in (0, 1)");
            at_least(ctx, i.energy_record_every, 1, &join(&p, "energy_record_every"));
            Params::InvarianceTest(i)
        }
    };
    o.finish(ctx);
    params
}

/// Parses and validates a configuration. `kind` (from the command line)
/// takes precedence; an `experiment` key in the file must agree with it.
pub fn parse_config(text: &str, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError {
        violations: vec![Violation { path: String::new(), message: format!("malformed JSON: {e}") }],
    })?;
    parse_value(&value, kind)
}

pub fn parse_value(value: &Value, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, ConfigError> {
    let mut ctx = Ctx::default();
    let mut root = Obj::new(&mut ctx, Some(value), String::new());
    let named = match root.raw("experiment") {
        Some(Value::String(s)) => match ExperimentKind::from_name(s) {
            Some(k) => Some(k),
            None => {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                ctx.err("experiment", format!("unknown experiment {s:?}, expected one of {}", names.join(", ")));
                None
            }
        },
        Some(_) => {
            ctx.err("experiment", "expected a string");
            None
        }
        None => None,
    };
    if let (Some(a), Some(b)) = (kind, named) {
        check(&mut ctx, a == b, "experiment", format!("file declares {:?} but the subcommand is {:?}", b.name(), a.name()));
    }
    let kind = match kind.or(named) {
        Some(k) => k,
        None => {
            ctx.err("experiment", "required key is missing");
            return Err(ConfigError { violations: ctx.violations });
        }
    };
    let seed = root.u64_or(&mut ctx, "seed", Some(0));

    let mut t = root.child(&mut ctx, "torus");
    if t.map.is_none() && value.get("torus").is_none() {
        ctx.err("torus", "required key is missing");
    }
    let torus = TorusSection { d: t.usize_or(&mut ctx, "d", None), l: t.f64(&mut ctx, "l"), n: t.usize_or(&mut ctx, "n", None) };
    t.finish(&mut ctx);
    check(&mut ctx, (1..=3).contains(&torus.d), "torus.d", format!("d = {} must be 1, 2 or 3", torus.d));
    check(
        &mut ctx,
        torus.l.is_nan() || (torus.l > 0.0 && torus.l < 2.0 * std::f64::consts::PI),
        "torus.l",
        format!("L = {} must satisfy 0 < L < 2π", torus.l),
    );
    check(&mut ctx, torus.n <= 256, "torus.n", format!("N = {} exceeds the supported maximum 256", torus.n));

    let mut m = root.child(&mut ctx, "model");
    if value.get("model").is_none() {
        ctx.err("model", "required key is missing");
    }
    let model = ModelSection { beta: m.f64(&mut ctx, "beta"), renormalize: m.bool_or(&mut ctx, "renormalize", torus.d >= 2) };
    m.finish(&mut ctx);
    positive(&mut ctx, model.beta, "model.beta");

    let s = root.child(&mut ctx, "sampler");
    let sampler = parse_sampler(&mut ctx, s);

    let section = root.child(&mut ctx, kind.name());
    let params = parse_params(&mut ctx, kind, section, torus, model);
    // Sections of other experiments are unknown keys.
    root.finish(&mut ctx);
    if ctx.violations.is_empty() {
        Ok(ExperimentConfig { experiment: kind, seed, torus, model, sampler, params })
    } else {
        Err(ConfigError { violations: ctx.violations })
    }
}
