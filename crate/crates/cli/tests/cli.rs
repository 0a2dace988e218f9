use std::fs;
use std::path::Path;
use std::process::Command;

use kramers_core::dynamics::read_series;
use kramers_wave::config::{
    ExperimentConfig, ExperimentKind, FeedbackSpec, MassSpec, ModelSection, Params, PotentialSpec, PrefactorParams, ProposalKind,
    SamplerSection, SchemeKind, SimulateParams, TorusSection, VariationalParams,
};
use kramers_wave::output::{format_f64, sha256_bytes};
use kramers_wave::parse_config;
use proptest::prelude::*;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_kramers-wave");

fn run(dir: &Path, args: &[&str], config: &str) -> std::process::Output {
    let path = dir.join("config.in.json");
    fs::write(&path, config).unwrap();
    Command::new(BIN).args(args).arg("--config").arg(&path).env_remove("KRAMERS_WAVE_THREADS").output().unwrap()
}

const PREFACTOR: &str = r#"{"torus": {"d": 2, "l": 1.0, "n": 8}, "model": {"beta": 4}, "prefactor": {"n_values": [4, 8]}}"#;

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let ok = run(dir.path(), &["prefactor", "--out", out.to_str().unwrap()], PREFACTOR);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let bad = run(dir.path(), &["prefactor", "--out", out.to_str().unwrap()], r#"{"torus": {"d": 2, "l": 7, "n": 8}, "model": {"beta": 4}}"#);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("L = 7 must satisfy 0 < L < 2π"));

    let malformed = run(dir.path(), &["prefactor"], "{not json");
    assert_eq!(malformed.status.code(), Some(2));

    let missing = Command::new(BIN).args(["prefactor", "--config", "/nonexistent/x.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    // The chaos sums refuse sizes beyond their budget at run time.
    let runtime = run(
        dir.path(),
        &["renorm3d", "--out", out.to_str().unwrap()],
        r#"{"torus": {"d": 3, "l": 3, "n": 2}, "model": {"beta": 2}, "renorm3d": {"n_values": [40]}}"#,
    );
    assert_eq!(runtime.status.code(), Some(3), "{}", String::from_utf8_lossy(&runtime.stderr));
}

#[test]
fn every_violation_has_a_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["transmission"],
        r#"{"torus": {"d": 2, "l": 1, "n": 4, "q": 0}, "model": {"beta": 0}, "transmission": {"delta": 0.7, "shots": "many"}, "simulate": {}}"#,
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for p in ["torus.q", "model.beta", "transmission.delta", "transmission.shots", "simulate"] {
        assert!(err.contains(&format!("{p}:")), "{p} not reported in {err}");
    }
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"torus": {"d": 1, "l": 1, "n": 8}, "model": {"beta": 4},
        "sample-gibbs": {"samples": 100, "burn_in": 200, "chains": 3}}"#;
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}"));
        let o = run(dir.path(), &["sample-gibbs", "--seed", "11", "--threads", threads, "--out", out.to_str().unwrap()], cfg);
        assert_eq!(o.status.code(), Some(0));
        outputs.push((fs::read(out.join("samples.csv")).unwrap(), fs::read(out.join("summary.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let other = dir.path().join("o2");
    run(dir.path(), &["sample-gibbs", "--seed", "12", "--out", other.to_str().unwrap()], cfg);
    assert_ne!(fs::read(other.join("samples.csv")).unwrap(), outputs[0].0);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env_out");
    let path = dir.path().join("c.json");
    fs::write(&path, PREFACTOR).unwrap();
    let o = Command::new(BIN)
        .args(["prefactor", "--config", path.to_str().unwrap()])
        .env("KRAMERS_WAVE_OUT", &out)
        .env("KRAMERS_WAVE_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("summary.json").exists());
    let bad = Command::new(BIN).args(["prefactor", "--config", path.to_str().unwrap()]).env("KRAMERS_WAVE_THREADS", "zero").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn csv_and_summary_reparse_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    run(dir.path(), &["prefactor", "--out", out.to_str().unwrap()], PREFACTOR);
    let mut r = csv::Reader::from_path(out.join("prefactor.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().next_back(), Some("provenance"));
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let q: f64 = row[3].parse().unwrap();
        assert_eq!(format_f64(q), &row[3]);
        let n: usize = row[2].parse().unwrap();
        let spec = kramers_core::spectral::TorusSpec::new(2, 1.0, n).unwrap();
        assert_eq!(q, kramers_core::tst::renormalized_prefactor(spec).unwrap());
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let echoed = parse_config(&serde_json::to_string(&summary["config"]).unwrap(), None).unwrap();
    assert_eq!(echoed.canonical(), parse_config(PREFACTOR, Some(ExperimentKind::Prefactor)).unwrap().canonical());
    for r in summary["results"].as_array().unwrap() {
        assert!(r["provenance"].is_string());
    }
}

#[test]
fn trajectory_header_carries_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = r#"{"torus": {"d": 1, "l": 1, "n": 4}, "model": {"beta": 4}, "simulate": {"horizon": 1, "dt": 0.01, "burn_in": 100}}"#;
    let o = run(dir.path(), &["simulate", "--seed", "2", "--out", out.to_str().unwrap()], cfg);
    assert_eq!(o.status.code(), Some(0));
    let s = read_series(fs::File::open(out.join("trajectory.bin")).unwrap()).unwrap();
    let mut parsed = parse_config(cfg, Some(ExperimentKind::Simulate)).unwrap();
    parsed.seed = 2;
    assert_eq!(s.hash, sha256_bytes(&parsed.canonical()));
    assert_eq!(s.values.len(), 101);
    assert_eq!(s.dt, 0.01);
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, any::<f64>().prop_filter("finite", |x| x.is_finite())]
}

fn sampler() -> impl Strategy<Value = SamplerSection> {
    (any::<bool>(), 0.01..2.0f64, 1..20usize, 0..50usize, 0..5000usize, 0..5000usize, 1..50usize, 1..8usize).prop_map(
        |(hmc, step, leapfrog, flip_every, burn_in, samples, thin, chains)| SamplerSection {
            proposal: if hmc { ProposalKind::Hmc } else { ProposalKind::Mala },
            step,
            leapfrog,
            flip_every,
            burn_in,
            samples,
            thin,
            chains,
        },
    )
}

fn potential() -> impl Strategy<Value = PotentialSpec> {
    prop_oneof![
        Just(PotentialSpec::Zero),
        finite().prop_map(|c| PotentialSpec::Linear { c }),
        finite().prop_map(|lambda| PotentialSpec::WickQuartic { lambda }),
        finite().prop_map(|beta| PotentialSpec::DoubleWell { beta }),
    ]
}

fn params() -> impl Strategy<Value = (ExperimentKind, Params, usize)> {
    prop_oneof![
        (prop::collection::vec(0..64usize, 1..5), prop::collection::vec(0.1..100.0f64, 0..4))
            .prop_map(|(n_values, betas)| (ExperimentKind::Prefactor, Params::Prefactor(PrefactorParams { n_values, betas }), 2)),
        sampler().prop_map(|s| (ExperimentKind::SampleGibbs, Params::SampleGibbs(s), 2)),
        (0..3u8, 1..100u32, 1..10_000u32, 1..50usize, 0..1000usize).prop_map(|(scheme, dt_k, steps, record_every, burn_in)| {
            let dt = dt_k as f64 * 1e-4;
            let scheme = [SchemeKind::Nlw, SchemeKind::Sdnlw, SchemeKind::She][scheme as usize];
            let p = SimulateParams { scheme, dt, gamma: 0.5, horizon: steps as f64 * dt, record_every, burn_in };
            (ExperimentKind::Simulate, Params::Simulate(p), 1)
        }),
        (prop::collection::vec(potential(), 0..4), prop::collection::vec((finite(), finite()), 0..3), -5.0..0.0f64, 0.1..5.0f64)
            .prop_map(|(potentials, fb, lo, w)| {
                let p = VariationalParams {
                    mass: MassSpec::Positive,
                    potentials,
                    feedback: fb.into_iter().map(|(theta, target)| FeedbackSpec { theta, target }).collect(),
                    paths: 100,
                    oracle_samples: 100,
                    bracket: [lo, lo + w],
                    scan_points: 5,
                    per_octave: 8,
                };
                (ExperimentKind::Variational, Params::Variational(p), 1)
            }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_emit_parse_is_identity(
        seed in any::<u64>(),
        l in 0.01..6.2f64,
        beta in 0.01..1000.0f64,
        renormalize in any::<bool>(),
        sampler in sampler(),
        (experiment, params, d) in params(),
    ) {
        let n = if d == 1 && experiment == ExperimentKind::Variational { 1 } else { 4 };
        let cfg = ExperimentConfig {
            experiment,
            seed,
            torus: TorusSection { d, l, n },
            model: ModelSection { beta, renormalize },
            sampler,
            params,
        };
        let text = cfg.canonical();
        let back = parse_config(&text, None).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.canonical(), text);
        let pretty = kramers_wave::output::to_json_string(&cfg.to_value());
        prop_assert_eq!(parse_config(&pretty, Some(experiment)).unwrap(), cfg);
    }

    #[test]
    fn floats_reparse_bitwise(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(format_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}
