//! Runs one configured experiment and collects its tables and headline
//! numbers.

use kramers_core::dynamics::{run, write_series, Integrator, IntegratorConfig, NoiseSource, RunOptions};
use kramers_core::gibbs::{
    estimate_saddle_ratio, potential_energy, run_umbrella, sample_gff, wick_integral, GibbsConfig, GibbsSampler, Proposal,
    UmbrellaPlan,
};
use kramers_core::invariance::{energy_drift, pushforward_invariance, InvarianceConfig};
use kramers_core::renorm3d::{c_diff, delta_leading, gamma_diff_table, ChaosSumConfig, MAX_TRIPLE_N};
use kramers_core::rng::{splitmix64, stream};
use kramers_core::spectral::{MassKind, ModeSet, PhaseState, TorusSpec};
use kramers_core::stats::{batch_means, mean_se, SamplerDiagnostics};
use kramers_core::transmission::{transmission_table, TransmissionConfig};
use kramers_core::tst::{
    empirical_rate, hitting_time_she_1d, hitting_time_she_1d_standard, hitting_time_she_2d, rate_main, rate_nlw_1d,
    renormalized_prefactor, stationary_crossings, tst_identity_rate, CrossingRunConfig, RatePrediction,
};
use kramers_core::variational::{
    bd_objective, log_partition_oracle, optimize_constant_drift, Potential, RhoSchedule, SandwichRow, Strategy,
};
use kramers_core::Result;
use rayon::prelude::*;

use crate::config::{
    ExperimentConfig, InvarianceParams, Params, PotentialSpec, PrefactorParams, ProposalKind, Renorm3dParams, SamplerSection,
    SchemeKind, SimulateParams, TransmissionParams, TstRateParams, VariationalParams,
};
use crate::output::{sha256_bytes, Cell, ResultEntry, Table};

pub const EMPIRICAL: &str = "empirical";

/// Everything an experiment produces.
#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub results: Vec<ResultEntry>,
    pub notes: Vec<String>,
    /// Extra binary files `(name, bytes)`.
    pub files: Vec<(String, Vec<u8>)>,
}

fn gibbs_config(cfg: &ExperimentConfig, s: &SamplerSection) -> GibbsConfig {
    let proposal = match s.proposal {
        ProposalKind::Mala => Proposal::Mala { h: s.step },
        ProposalKind::Hmc => Proposal::Hmc { eps: s.step, steps: s.leapfrog },
    };
    GibbsConfig { proposal, flip_every: s.flip_every, ..GibbsConfig::phi4(cfg.spec(), cfg.model.beta, cfg.wick_c()) }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.spec().validate()?;
    match &cfg.params {
        Params::Prefactor(p) => prefactor(cfg, p),
        Params::SampleGibbs(s) => sample_gibbs(cfg, s),
        Params::Simulate(p) => simulate(cfg, p),
        Params::TstRate(p) => tst_rate(cfg, p),
        Params::Transmission(p) => transmission(cfg, p),
        Params::Variational(p) => variational(cfg, p),
        Params::Renorm3d(p) => renorm3d(cfg, p),
        Params::InvarianceTest(p) => invariance(cfg, p),
    }
}

fn prediction_row(t: &mut Table, spec: TorusSpec, beta: f64, r: &RatePrediction) {
    t.push(
        vec![spec.d.into(), spec.l.into(), spec.n.into(), beta.into(), r.prefactor.into(), r.exponent.into(), r.rate.into()],
        r.formula.name(),
    );
}

fn prefactor(cfg: &ExperimentConfig, p: &PrefactorParams) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut rates = Table::new("rates", &["d", "l", "n", "beta", "prefactor", "exponent", "value"]);
    let mut q = Table::new("prefactor", &["d", "l", "n", "q"]);
    let base = cfg.spec();
    for &n in &p.n_values {
        let spec = base.with_n(n);
        for &beta in &p.betas {
            let preds = match spec.d {
                1 => vec![rate_nlw_1d(beta, spec)?, hitting_time_she_1d(beta, spec)?, hitting_time_she_1d_standard(beta, spec)?],
                2 => vec![rate_main(beta, spec)?, hitting_time_she_2d(beta, spec)?],
                _ => vec![rate_main(beta, spec)?],
            };
            for r in &preds {
                prediction_row(&mut rates, spec, beta, r);
            }
        }
        if spec.d >= 2 {
            q.push(vec![spec.d.into(), spec.l.into(), n.into(), renormalized_prefactor(spec)?.into()], "renormalized-prefactor");
        }
    }
    let qs: Vec<f64> = q.rows.iter().filter_map(|r| if let Cell::Float(x) = r[3] { Some(x) } else { None }).collect();
    if !qs.is_empty() {
        out.results.push(ResultEntry::new("q_min", qs.iter().copied().fold(f64::INFINITY, f64::min), None, "renormalized-prefactor"));
        out.results.push(ResultEntry::new("q_max", qs.iter().copied().fold(0.0, f64::max), None, "renormalized-prefactor"));
    }
    out.tables.push(rates);
    out.tables.push(q);
    Ok(out)
}

fn sample_gibbs(cfg: &ExperimentConfig, s: &SamplerSection) -> Result<Outcome> {
    let g = gibbs_config(cfg, s);
    let modes = ModeSet::new(cfg.spec());
    let beta = cfg.model.beta;
    let wick_c = cfg.wick_c();
    let chains = (0..s.chains)
        .into_par_iter()
        .map(|c| -> Result<(Vec<[f64; 5]>, usize, usize)> {
            let mut rng = stream(cfg.seed, c as u64);
            let u0 = sample_gff(&modes, beta, MassKind::PositivePlusTwo, &mut rng);
            let mut chain = GibbsSampler::new(g, &u0, None, false)?;
            chain.tune(s.burn_in, 0.6, &mut rng);
            let (a0, p0) = (chain.accepted, chain.proposed);
            let mut rows = Vec::with_capacity(s.samples);
            for _ in 0..s.samples {
                for _ in 0..s.thin {
                    chain.step(&mut rng);
                }
                let u = chain.state();
                rows.push([
                    u.zero_mode(),
                    potential_energy(&u, beta, wick_c),
                    wick_integral(&u, 2, wick_c),
                    wick_integral(&u, 3, wick_c),
                    wick_integral(&u, 4, wick_c),
                ]);
            }
            Ok((rows, chain.accepted - a0, chain.proposed - p0))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Outcome::default();
    let mut t = Table::new("samples", &["chain", "sample", "zero_mode", "potential_energy", "wick_2", "wick_3", "wick_4"]);
    let mut zero = Vec::new();
    let (mut acc, mut prop) = (0, 0);
    let mut per_chain_abs = Vec::new();
    for (c, (rows, a, p)) in chains.iter().enumerate() {
        acc += a;
        prop += p;
        for (i, r) in rows.iter().enumerate() {
            t.push(vec![c.into(), i.into(), r[0].into(), r[1].into(), r[2].into(), r[3].into(), r[4].into()], EMPIRICAL);
            zero.push(r[0]);
        }
        per_chain_abs.push(rows.iter().map(|r| r[0].abs()).collect::<Vec<_>>());
    }
    let first = per_chain_abs.first().cloned().unwrap_or_default();
    let diag = SamplerDiagnostics::from_series(acc, prop, &first);
    let (m, se) = batch_means(&zero, 20);
    let abs: Vec<f64> = zero.iter().map(|x| x.abs()).collect();
    let (ma, sa) = batch_means(&abs, 20);
    out.results.push(ResultEntry::new("acceptance", diag.acceptance, None, EMPIRICAL));
    out.results.push(ResultEntry::new("iat_abs_zero_mode", diag.iat, None, EMPIRICAL));
    out.results.push(ResultEntry::new("ess_per_chain", diag.ess, None, EMPIRICAL));
    out.results.push(ResultEntry::new("mean_zero_mode", m, Some(se), EMPIRICAL));
    out.results.push(ResultEntry::new("mean_abs_zero_mode", ma, Some(sa), EMPIRICAL));
    for (j, name) in [(1, "mean_potential_energy"), (2, "mean_wick_2"), (3, "mean_wick_3"), (4, "mean_wick_4")] {
        let col: Vec<f64> = chains.iter().flat_map(|c| c.0.iter().map(move |r| r[j])).collect();
        let (v, e) = mean_se(&col);
        out.results.push(ResultEntry::new(name, v, Some(e), EMPIRICAL));
    }
    out.tables.push(t);
    Ok(out)
}

fn simulate(cfg: &ExperimentConfig, p: &SimulateParams) -> Result<Outcome> {
    let modes = ModeSet::new(cfg.spec());
    let beta = cfg.model.beta;
    let wick_c = cfg.wick_c();
    let mut rng = stream(cfg.seed, 0);
    let mut chain = GibbsSampler::new(gibbs_config(cfg, &cfg.sampler), &sample_gff(&modes, beta, MassKind::PositivePlusTwo, &mut rng), None, false)?;
    chain.tune(p.burn_in, 0.6, &mut rng);
    let initial = PhaseState { u: chain.state(), v: kramers_core::gibbs::sample_white_noise(&modes, beta, &mut rng) };
    let ic = match p.scheme {
        SchemeKind::Nlw => IntegratorConfig::nlw(p.dt, wick_c),
        SchemeKind::Sdnlw => IntegratorConfig::sdnlw(p.dt, p.gamma, beta, wick_c),
        SchemeKind::She => IntegratorConfig::she(p.dt, beta, wick_c),
    };
    let mut integ = Integrator::new(&modes, ic)?;
    let mut noise = NoiseSource::new(stream(cfg.seed, 1));
    let noise = if p.scheme == SchemeKind::Nlw { None } else { Some(&mut noise) };
    let (traj, _) = run(&initial, &mut integ, p.horizon, noise, RunOptions { record_energy: true, snapshot_every: None }, &mut [])?;
    let mut out = Outcome::default();
    let mut t = Table::new("trajectory", &["step", "t", "zero_mode", "energy"]);
    for i in (0..traj.times.len()).step_by(p.record_every) {
        t.push(vec![i.into(), traj.times[i].into(), traj.zero_mode[i].into(), traj.energy[i].into()], EMPIRICAL);
    }
    let hash = sha256_bytes(&cfg.canonical());
    let mut bin = Vec::new();
    write_series(&mut bin, &hash, 0.0, traj.dt, &traj.zero_mode).map_err(|e| kramers_core::Error::InvalidArgument(e.to_string()))?;
    out.files.push(("trajectory.bin".into(), bin));
    let h0 = traj.energy[0];
    let h_end = *traj.energy.last().unwrap_or(&h0);
    let max_dev = traj.energy.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max);
    out.results.push(ResultEntry::new("steps", (traj.times.len() - 1) as f64, None, EMPIRICAL));
    out.results.push(ResultEntry::new("initial_energy", h0, None, EMPIRICAL));
    out.results.push(ResultEntry::new("final_energy", h_end, None, EMPIRICAL));
    out.results.push(ResultEntry::new("max_energy_deviation", max_dev, None, EMPIRICAL));
    out.results.push(ResultEntry::new("final_zero_mode", *traj.zero_mode.last().unwrap_or(&0.0), None, EMPIRICAL));
    out.tables.push(t);
    Ok(out)
}

fn tst_rate(cfg: &ExperimentConfig, p: &TstRateParams) -> Result<Outcome> {
    let spec = cfg.spec();
    let beta = cfg.model.beta;
    let wick_c = cfg.wick_c();
    let run = stationary_crossings(&CrossingRunConfig {
        spec,
        beta,
        wick_c,
        dt: p.dt,
        segment: p.segment,
        total_time: p.total_time,
        burn_in: p.burn_in,
        replicas: p.replicas,
        seed: cfg.seed,
    })?;
    let emp = empirical_rate(&run.record, p.batches)?;
    let g = gibbs_config(cfg, &cfg.sampler);
    let plan = UmbrellaPlan::covering(&g, p.umbrella_spacing, p.umbrella_width, p.umbrella_samples, splitmix64(cfg.seed));
    let ratio = estimate_saddle_ratio(&run_umbrella(&g, &plan)?)?;
    let identity = tst_identity_rate(ratio.ratio, beta, spec)?;
    let formula = if spec.d == 1 { rate_nlw_1d(beta, spec)? } else { rate_main(beta, spec)? };
    let identity_se = identity.rate * ratio.se / ratio.ratio;

    let mut out = Outcome::default();
    let mut t = Table::new("tst_rate", &["quantity", "value", "se"]);
    t.push(vec!["empirical_rate".into(), emp.rate.into(), emp.se.into()], EMPIRICAL);
    t.push(vec!["crossings".into(), emp.count.into(), Cell::Missing], EMPIRICAL);
    t.push(vec!["saddle_ratio".into(), ratio.ratio.into(), ratio.se.into()], EMPIRICAL);
    t.push(vec!["tst_identity_rate".into(), identity.rate.into(), identity_se.into()], identity.formula.name());
    t.push(vec!["formula_rate".into(), formula.rate.into(), Cell::Missing], formula.formula.name());
    t.push(vec!["empirical_over_identity".into(), (emp.rate / identity.rate).into(), Cell::Missing], EMPIRICAL);
    t.push(vec!["empirical_over_formula".into(), (emp.rate / formula.rate).into(), Cell::Missing], EMPIRICAL);
    out.results.push(ResultEntry::new("empirical_rate", emp.rate, Some(emp.se), EMPIRICAL));
    out.results.push(ResultEntry::new("crossings", emp.count as f64, None, EMPIRICAL));
    out.results.push(ResultEntry::new("acceptance", run.acceptance, None, EMPIRICAL));
    out.results.push(ResultEntry::new("tst_identity_rate", identity.rate, Some(identity_se), identity.formula.name()));
    out.results.push(ResultEntry::new("formula_rate", formula.rate, None, formula.formula.name()));
    out.results.push(ResultEntry::new("empirical_over_formula", emp.rate / formula.rate, Some(emp.se / formula.rate), EMPIRICAL));
    if emp.degenerate {
        out.notes.push("no crossings observed; the empirical rate is degenerate".into());
    }
    if let Some(min) = ratio.overlaps.iter().copied().reduce(f64::min) {
        if min < 0.03 {
            out.notes.push(format!("weak umbrella window overlap {min:.3}"));
        }
    }
    out.tables.push(t);
    Ok(out)
}

fn transmission(cfg: &ExperimentConfig, p: &TransmissionParams) -> Result<Outcome> {
    let base = TransmissionConfig {
        spec: cfg.spec(),
        beta: cfg.model.beta,
        wick_c: cfg.wick_c(),
        delta: p.delta,
        dt: p.dt,
        t_max: p.t_max,
        shots: p.shots,
        burn_in: p.burn_in,
        epsilon: p.epsilon,
        seed: cfg.seed,
    };
    let rows = transmission_table(&base, &p.betas, |b| cfg.wick_c_at(b))?;
    let mut out = Outcome::default();
    let mut t = Table::new(
        "transmission",
        &[
            "beta", "p_hat", "wilson_lo", "wilson_hi", "bound_lo", "bound_hi", "transmitted", "recrossed", "timed_out",
            "envelope_violations", "ratio_p95", "mean_q", "mean_q_se",
        ],
    );
    for r in &rows {
        t.push(
            vec![
                r.beta.into(),
                r.p_hat.into(),
                r.wilson.0.into(),
                r.wilson.1.into(),
                r.bounds.0.into(),
                r.bounds.1.into(),
                r.transmitted.into(),
                r.recrossed.into(),
                r.timed_out.into(),
                r.envelope_violations.into(),
                r.ratio_p95.into(),
                r.mean_q.0.into(),
                r.mean_q.1.into(),
            ],
            EMPIRICAL,
        );
        out.results.push(ResultEntry::new(format!("p_hat[beta={}]", r.beta), r.p_hat, None, EMPIRICAL));
        if let Some(w) = &r.warning {
            out.notes.push(format!("beta = {}: {w}", r.beta));
        }
    }
    out.tables.push(t);
    Ok(out)
}

fn potential(p: PotentialSpec) -> Potential {
    match p {
        PotentialSpec::Zero => Potential::Zero,
        PotentialSpec::Linear { c } => Potential::Linear { c },
        PotentialSpec::WickQuartic { lambda } => Potential::WickQuartic { lambda },
        PotentialSpec::DoubleWell { beta } => Potential::DoubleWell { beta },
    }
}

fn potential_name(p: PotentialSpec) -> String {
    match p {
        PotentialSpec::Zero => "zero".into(),
        PotentialSpec::Linear { c } => format!("linear({c})"),
        PotentialSpec::WickQuartic { lambda } => format!("wick-quartic({lambda})"),
        PotentialSpec::DoubleWell { beta } => format!("double-well({beta})"),
    }
}

fn variational(cfg: &ExperimentConfig, p: &VariationalParams) -> Result<Outcome> {
    let spec = cfg.spec();
    let sched = RhoSchedule::with_grid(spec, p.mass.kind(), 2.0 * spec.n as f64 + 2.0, p.per_octave)?;
    let mut out = Outcome::default();
    let mut t = Table::new("variational", &["potential", "strategy", "objective", "se", "oracle", "oracle_se", "holds"]);
    let mut all_hold = true;
    for (i, &ps) in p.potentials.iter().enumerate() {
        let pot = potential(ps);
        let seed = splitmix64(cfg.seed.wrapping_add(i as u64));
        let (oracle, oracle_se) = log_partition_oracle(&sched, pot, p.oracle_samples, seed)?;
        let opt = optimize_constant_drift(&sched, pot, (p.bracket[0], p.bracket[1]), p.scan_points, p.paths, seed ^ 1)?;
        let mut strategies = vec![Strategy::Zero, Strategy::ConstantShift { a: opt.a }];
        strategies.extend(p.feedback.iter().map(|f| Strategy::Feedback { theta: f.theta, target: f.target }));
        for strategy in strategies {
            // Fresh paths so the optimized shift is not scored on its own sample.
            let (objective, se) = bd_objective(&sched, pot, strategy, p.paths, seed ^ 2)?;
            let row = SandwichRow { potential: pot, strategy, objective, se, oracle, oracle_se };
            all_hold &= row.holds();
            t.push(
                vec![potential_name(ps).into(), strategy.name().into(), objective.into(), se.into(), oracle.into(), oracle_se.into(), row.holds().into()],
                EMPIRICAL,
            );
        }
        out.results.push(ResultEntry::new(format!("log_partition[{}]", potential_name(ps)), oracle, Some(oracle_se), EMPIRICAL));
        out.results.push(ResultEntry::new(format!("optimal_shift[{}]", potential_name(ps)), opt.a, None, EMPIRICAL));
        if !opt.unimodal {
            out.notes.push(format!("{}: constant-shift scan is not unimodal", potential_name(ps)));
        }
    }
    out.results.push(ResultEntry::new("sandwich_holds", if all_hold { 1.0 } else { 0.0 }, None, EMPIRICAL));
    out.tables.push(t);
    Ok(out)
}

fn renorm3d(cfg: &ExperimentConfig, p: &Renorm3dParams) -> Result<Outcome> {
    let spec = cfg.spec();
    let beta = cfg.model.beta;
    let chaos = ChaosSumConfig { per_octave: p.per_octave };
    let rows = gamma_diff_table(spec, &p.n_values, chaos)?;
    let mut out = Outcome::default();
    let mut t = Table::new("renorm3d", &["n", "gamma_plus", "gamma_minus", "diff", "increment", "delta_plus", "delta_minus"]);
    for r in &rows {
        let s = spec.with_n(r.n);
        let (dp, dm) = if r.n <= MAX_TRIPLE_N {
            (Some(delta_leading(s, MassKind::PositivePlusTwo, beta, chaos)?), Some(delta_leading(s, MassKind::NegativeUnit, beta, chaos)?))
        } else {
            (None, None)
        };
        t.push(
            vec![r.n.into(), r.gamma_plus.into(), r.gamma_minus.into(), r.diff.into(), r.increment.into(), dp.into(), dm.into()],
            "chaos-sum",
        );
    }
    let cd = c_diff(spec)?;
    let mut c = Table::new("c_diff", &["quantity", "value"]);
    c.push(vec!["c_diff".into(), cd.value.into()], "wick-sum");
    c.push(vec!["oscillatory".into(), cd.oscillatory.into()], "wick-sum");
    c.push(vec!["bound".into(), cd.bound.into()], "lattice-bound");
    out.results.push(ResultEntry::new("c_diff", cd.value, None, "wick-sum"));
    out.results.push(ResultEntry::new("c_diff_bound", cd.bound, None, "lattice-bound"));
    if let Some(last) = rows.last() {
        out.results.push(ResultEntry::new("gamma_diff", last.diff, None, "chaos-sum"));
    }
    let max_inc = rows.iter().filter_map(|r| r.increment).map(f64::abs).fold(0.0, f64::max);
    out.results.push(ResultEntry::new("max_abs_increment", max_inc, None, "chaos-sum"));
    out.tables.push(t);
    out.tables.push(c);
    Ok(out)
}

fn invariance(cfg: &ExperimentConfig, p: &InvarianceParams) -> Result<Outcome> {
    let spec = cfg.spec();
    let beta = cfg.model.beta;
    let wick_c = cfg.wick_c();
    let report = pushforward_invariance(&InvarianceConfig {
        spec,
        beta,
        wick_c,
        dt: p.dt,
        horizon: p.horizon,
        samples: p.samples,
        replicas: p.replicas,
        burn_in: p.burn_in,
        thin: p.thin,
        seed: cfg.seed,
    })?;
    let mut out = Outcome::default();
    let mut t = Table::new("invariance", &["observable", "ks_statistic", "p_value", "pass"]);
    for o in &report.tests {
        t.push(vec![o.name.into(), o.statistic.into(), o.p_value.into(), (o.p_value >= p.alpha).into()], EMPIRICAL);
    }
    out.results.push(ResultEntry::new("min_p_value", report.min_p(), None, EMPIRICAL));
    out.results.push(ResultEntry::new("acceptance", report.acceptance, None, EMPIRICAL));
    out.results.push(ResultEntry::new("invariance_pass", if report.pass(p.alpha) { 1.0 } else { 0.0 }, None, EMPIRICAL));
    if p.energy_steps > 0 {
        let d = energy_drift(spec, beta, wick_c, p.dt, p.energy_steps, p.energy_record_every, splitmix64(cfg.seed))?;
        out.results.push(ResultEntry::new("energy_slope", d.slope, None, EMPIRICAL));
        out.results.push(ResultEntry::new("energy_relative_drift", d.relative, None, EMPIRICAL));
        out.results.push(ResultEntry::new("energy_max_deviation", d.max_deviation, None, EMPIRICAL));
    }
    out.tables.push(t);
    Ok(out)
}
