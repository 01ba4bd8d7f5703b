//! Acceptance suite. Each criterion prints one PASS/FAIL line to stderr
//! (written to the handle directly so it survives output capture).

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use props_cli::{execute, ExperimentConfig, Grid, MethodSpec, TrainOverrides};
use props_core::audit::{audited, ReadPurpose};
use props_core::math::cosine;
use props_core::mechanisms::{
    disagreement_rate, estimate_model_error_raw, props_label, randomized_response, BinaryLabel,
    CombinerParams, RRParams,
};
use props_core::trainers::train_dpo_from;
use props_core::{
    advanced_composition, basic_composition, dpo_gradient, dpo_loss, dpsgd_noise_scale,
    generate_world, partition, privatize_with, run_nonprivate, run_props, run_props_on,
    run_rr_baseline, run_rr_baseline_on, seeded_rng, train_dpo, train_dpsgd, GammaModelMode,
    GaussianMechanismParams, Method, OracleGate, PolicyParams, PreferencePair, PreferenceSample,
    PropsConfig, RunResult, TrainConfig, WorldParams,
};
use rand::Rng;
use rand_distr::StandardNormal;

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let in_time = elapsed <= limit;
    let verdict = if pass && in_time { "PASS" } else { "FAIL" };
    let line = format!(
        "[criterion {id:>2}] {verdict} {name}: {detail} ({:.2}s, limit {}s)\n",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
    assert!(pass && in_time, "{line}");
}

fn truth(samples: &[PreferenceSample]) -> Vec<BinaryLabel> {
    OracleGate::new(samples).labels(ReadPurpose::Evaluation)
}

fn bernoulli_flip(label: BinaryLabel, p: f64, rng: &mut impl Rng) -> BinaryLabel {
    if rng.random::<f64>() < p {
        !label
    } else {
        label
    }
}

#[test]
fn criterion_01_combiner_exactness() {
    let start = Instant::now();
    let grid: Vec<f64> = (1..=9).map(|i| i as f64 * 0.05).collect();
    let labels = [BinaryLabel::Zero, BinaryLabel::One];
    let mut mismatches = 0;
    let mut checked = 0;
    for &ge in &grid {
        for &gm in &grid {
            let params = CombinerParams::new(ge, gm).unwrap();
            for rr in labels {
                for m in labels {
                    // P(l* = v, l_rr, l_model) with a uniform prior; ties go to 1
                    let joint = |v: BinaryLabel| {
                        let p_rr = if rr == v { 1.0 - ge } else { ge };
                        let p_m = if m == v { 1.0 - gm } else { gm };
                        0.5 * p_rr * p_m
                    };
                    let argmax = if joint(BinaryLabel::One) >= joint(BinaryLabel::Zero) {
                        BinaryLabel::One
                    } else {
                        BinaryLabel::Zero
                    };
                    checked += 1;
                    if props_label(rr, m, &params) != argmax {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    report(
        1,
        "combiner exactness",
        mismatches == 0 && checked == 324,
        start.elapsed(),
        Duration::from_secs(1),
        &format!("{mismatches} mismatches over {checked} cases"),
    );
}

#[test]
fn criterion_02_flip_rate_law() {
    let start = Instant::now();
    let n = 200_000;
    let rates = [0.1f64, 0.25, 0.4];
    let mut worst: f64 = 0.0;
    for (i, &ge) in rates.iter().enumerate() {
        for (j, &gm) in rates.iter().enumerate() {
            let mut rng = seeded_rng(7_000 + (3 * i + j) as u64, 0);
            let l_star: Vec<BinaryLabel> = (0..n)
                .map(|_| BinaryLabel::from_bool(rng.random()))
                .collect();
            let rr = RRParams::new(((1.0 - ge) / ge).ln()).unwrap();
            let l_rr = randomized_response(&l_star, &rr, &mut rng);
            let l_m: Vec<BinaryLabel> = l_star
                .iter()
                .map(|&l| bernoulli_flip(l, gm, &mut rng))
                .collect();
            let params = CombinerParams::new(rr.gamma_eps(), gm).unwrap();
            let wrong = (0..n)
                .filter(|&t| props_label(l_rr[t], l_m[t], &params) != l_star[t])
                .count();
            let dev = (wrong as f64 / n as f64 - ge.min(gm)).abs();
            worst = worst.max(dev);
        }
    }
    report(
        2,
        "flip-rate law",
        worst <= 0.01,
        start.elapsed(),
        Duration::from_secs(10),
        &format!("max |rate - min(gamma_eps, gamma_M)| = {worst:.5} (tolerance 0.01)"),
    );
}

fn estimate(n: usize, ge: f64, gm: f64, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed, 4);
    let mut model = Vec::with_capacity(n);
    let mut rr = Vec::with_capacity(n);
    for _ in 0..n {
        let l = BinaryLabel::from_bool(rng.random());
        model.push(bernoulli_flip(l, gm, &mut rng));
        rr.push(bernoulli_flip(l, ge, &mut rng));
    }
    estimate_model_error_raw(disagreement_rate(&model, &rr).unwrap(), ge).unwrap()
}

#[test]
fn criterion_03_estimator_fidelity() {
    let start = Instant::now();
    let mut single: f64 = 0.0;
    let mut bias: f64 = 0.0;
    for gm in [0.1, 0.3] {
        single = single.max((estimate(100_000, 0.25, gm, 31) - gm).abs());
        let mean = (0..100)
            .map(|t| estimate(10_000, 0.25, gm, 9_000 + t))
            .sum::<f64>()
            / 100.0;
        bias = bias.max((mean - gm).abs());
    }
    report(
        3,
        "estimator fidelity",
        single <= 0.01 && bias <= 0.003,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("single-trial error {single:.5} (<= 0.01), mean bias {bias:.5} (<= 0.003)"),
    );
}

#[test]
fn criterion_04_closed_form_accounting() {
    let start = Instant::now();
    let text = include_str!("../../core/tests/fixtures/accounting_oracle.csv");
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let (eps, k, dp, delta) = (f[0], f[1] as u64, f[2], f[3]);
        worst = worst
            .max(rel(basic_composition(eps, k).unwrap(), f[4]))
            .max(rel(advanced_composition(eps, k, dp).unwrap().epsilon, f[5]))
            .max(rel(dpsgd_noise_scale(eps, delta).unwrap(), f[6]));
        points += 1;
    }
    let spot_adv = advanced_composition(0.1, 1, 1e-5).unwrap().epsilon;
    let spot_sigma = dpsgd_noise_scale(1.0, 1e-10).unwrap();
    let spots =
        rel(spot_adv, 0.4898525912188081) <= 1e-12 && rel(spot_sigma, 6.818943390475487) <= 1e-12;
    report(
        4,
        "closed-form accounting",
        points == 100 && worst <= 1e-12 && spots,
        start.elapsed(),
        Duration::from_secs(1),
        &format!("max relative error {worst:.2e} over {points} points; spots {spot_adv} and {spot_sigma}"),
    );
}

fn gaussian_vec(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn criterion_05_gradient_correctness() {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for point in 0..20u64 {
        let mut rng = seeded_rng(500 + point, 0);
        let pairs: Vec<PreferenceSample> = (0..6)
            .map(|i| {
                PreferenceSample::new(
                    i,
                    None,
                    gaussian_vec(10, &mut rng),
                    gaussian_vec(10, &mut rng),
                    BinaryLabel::Zero,
                )
                .unwrap()
            })
            .collect();
        let labels: Vec<BinaryLabel> = (0..6)
            .map(|_| BinaryLabel::from_bool(rng.random()))
            .collect();
        let theta = gaussian_vec(10, &mut rng);
        let beta = 0.5 + 2.0 * rng.random::<f64>();
        let grad = dpo_gradient(
            &PolicyParams::new(theta.clone(), beta).unwrap(),
            &pairs,
            &labels,
        )
        .unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..10 {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[j] += h;
            minus[j] -= h;
            let lp = dpo_loss(&PolicyParams::new(plus, beta).unwrap(), &pairs, &labels).unwrap();
            let lm = dpo_loss(&PolicyParams::new(minus, beta).unwrap(), &pairs, &labels).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            num += (grad[j] - fd).powi(2);
            den += fd * fd;
        }
        worst = worst.max(num.sqrt() / den.sqrt().max(1e-12));
    }
    report(
        5,
        "gradient correctness",
        worst <= 1e-5,
        start.elapsed(),
        Duration::from_secs(5),
        &format!("max relative error {worst:.2e} over 20 points (d = 10)"),
    );
}

/// Maximum-likelihood logistic regression by Newton's method; returns theta
/// for temperature `beta`.
fn logistic_oracle(samples: &[PreferenceSample], labels: &[BinaryLabel], beta: f64) -> Vec<f64> {
    let d = samples[0].phi_1().len();
    let n = samples.len() as f64;
    let rows: Vec<DVector<f64>> = samples
        .iter()
        .zip(labels)
        .map(|(s, l)| {
            let y = if l.is_one() { 1.0 } else { -1.0 };
            DVector::from_iterator(d, s.phi_1().iter().zip(s.phi_2()).map(|(a, b)| y * (a - b)))
        })
        .collect();
    let mut w = DVector::<f64>::zeros(d);
    for _ in 0..100 {
        let mut g = DVector::<f64>::zeros(d);
        let mut hm = DMatrix::<f64>::zeros(d, d);
        for x in &rows {
            let p = 1.0 / (1.0 + w.dot(x).exp());
            g -= x * (p / n);
            hm += x * x.transpose() * (p * (1.0 - p) / n);
        }
        let step = hm
            .cholesky()
            .expect("hessian is positive definite")
            .solve(&g);
        w -= &step;
        if step.norm() < 1e-13 {
            break;
        }
    }
    w.iter().map(|v| v / beta).collect()
}

#[test]
fn criterion_06_nonprivate_recovery() {
    let start = Instant::now();
    let world = generate_world(&WorldParams::default(), &mut seeded_rng(606, 0)).unwrap();
    let labels = truth(&world.samples);
    let config = TrainConfig {
        learning_rate: 0.02,
        batch_size: 128,
        epochs: 40,
        ..TrainConfig::default()
    };
    let fit = train_dpo(&world.samples, &labels, &config).unwrap();
    let oracle = logistic_oracle(&world.samples, &labels, config.beta);
    let to_star = cosine(&fit.theta, world.theta_star());
    let to_oracle = cosine(&fit.theta, &oracle);
    report(
        6,
        "non-private recovery",
        to_star >= 0.95 && to_oracle >= 0.999,
        start.elapsed(),
        Duration::from_secs(30),
        &format!(
            "cosine to theta* {to_star:.5} (>= 0.95), to logistic oracle {to_oracle:.6} (>= 0.999)"
        ),
    );
}

fn props_only(
    world: WorldParams,
    epsilon: f64,
    seeds: u64,
    mode: GammaModelMode,
    train: TrainOverrides,
) -> ExperimentConfig {
    ExperimentConfig {
        world,
        methods: vec![MethodSpec {
            train,
            gamma_model_mode: Some(mode),
            ..MethodSpec::new(Method::Props)
        }],
        epsilons: vec![epsilon],
        stages: vec![2],
        seeds: (0..seeds).collect(),
        output_dir: "unused".into(),
        heldout_fraction: 0.2,
        delta_prime: 1e-5,
    }
}

#[test]
fn criterion_07_gap_trend_in_n2() {
    let start = Instant::now();
    let mut gaps = Vec::new();
    for n2 in [500usize, 2000, 8000] {
        // n = 2 * n2 trains after a 20% hold-out
        let world = WorldParams {
            n: 2 * n2 * 5 / 4,
            beta_gen: 1.0,
            ..WorldParams::default()
        };
        let train = TrainOverrides {
            learning_rate: Some(0.05),
            epochs: Some(60),
            batch_size: Some(256),
            beta: None,
        };
        let config = props_only(world, 5.0, 10, GammaModelMode::Oracle, train);
        let outcome = execute(&config, Grid::Run, None).unwrap();
        assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
        assert!(outcome
            .results
            .iter()
            .all(|r| r.stage_diagnostics[1].n == n2));
        gaps.push(
            outcome.results.iter().map(|r| r.gap).sum::<f64>() / outcome.results.len() as f64,
        );
    }
    let ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]];
    let monotone = gaps[0] >= gaps[1] && gaps[1] >= gaps[2];
    let in_band = ratios.iter().all(|r| (1.3..=3.0).contains(r));
    report(
        7,
        "gap trend in n2",
        monotone && in_band,
        start.elapsed(),
        Duration::from_secs(300),
        &format!(
            "mean gaps {:.4} / {:.4} / {:.4} at n2 = 500 / 2000 / 8000; ratios {:.3}, {:.3} (band [1.3, 3.0])",
            gaps[0], gaps[1], gaps[2], ratios[0], ratios[1]
        ),
    );
}

#[test]
fn criterion_08_props_beats_rr_at_high_privacy() {
    let start = Instant::now();
    let config = ExperimentConfig {
        world: WorldParams {
            n: 10_000,
            ..WorldParams::default()
        },
        methods: vec![MethodSpec::new(Method::Props), MethodSpec::new(Method::Rr)],
        epsilons: vec![0.5],
        stages: vec![2],
        seeds: (0..20).collect(),
        output_dir: "unused".into(),
        heldout_fraction: 0.2,
        delta_prime: 1e-5,
    };
    let outcome = execute(&config, Grid::Run, None).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    let of = |m: Method| -> Vec<&RunResult> {
        outcome.results.iter().filter(|r| r.method == m).collect()
    };
    let (props, rr) = (of(Method::Props), of(Method::Rr));
    assert_eq!(props.len(), 20);
    let mut wins = 0;
    let mut win_tie = 0.0;
    for (p, r) in props.iter().zip(&rr) {
        assert_eq!(p.seeds, r.seeds);
        if p.gap < r.gap {
            wins += 1;
        }
        let vs_rr = p
            .win_tie_loss
            .iter()
            .find(|c| c.opponent == Method::Rr)
            .unwrap();
        win_tie += vs_rr.win_plus_tie;
    }
    win_tie /= 20.0;
    report(
        8,
        "PROPS beats RR at epsilon 0.5",
        wins >= 14 && win_tie >= 0.5,
        start.elapsed(),
        Duration::from_secs(600),
        &format!(
            "smaller gap in {wins}/20 seeds (>= 14), mean win+tie vs RR {win_tie:.3} (>= 0.5)"
        ),
    );
}

#[test]
fn criterion_09_mechanism_off_equivalences() {
    let start = Instant::now();
    let world = generate_world(
        &WorldParams {
            n: 3000,
            ..WorldParams::default()
        },
        &mut seeded_rng(909, 0),
    )
    .unwrap();
    let labels = truth(&world.samples);
    let config = TrainConfig {
        seed: 9,
        ..TrainConfig::default()
    };

    let clean = train_dpo(&world.samples, &labels, &config).unwrap();
    let private = privatize_with(&world.samples, RRParams::disabled(), &mut seeded_rng(9, 1));
    let rr_ok = run_rr_baseline_on(&private, &config).unwrap() == clean;

    let props_config =
        PropsConfig::new(2, f64::INFINITY, config.clone()).with_gamma_mode(GammaModelMode::Oracle);
    let props = run_props_on(
        &private,
        &props_config,
        Some(OracleGate::new(&world.samples)),
    )
    .unwrap();
    let parts = partition(&world.samples, 2).unwrap();
    let stage1 = train_dpo(parts[0], &truth(parts[0]), &props_config.stage_config(1)).unwrap();
    let sequential = train_dpo_from(
        parts[1],
        &truth(parts[1]),
        &props_config.stage_config(2),
        stage1,
    )
    .unwrap();
    let props_ok = props.params == sequential;

    let off = train_dpsgd(
        &world.samples,
        &labels,
        &config,
        &GaussianMechanismParams::disabled(),
    )
    .unwrap();
    let dpsgd_ok = off == clean;
    report(
        9,
        "mechanism-off equivalences",
        rr_ok && props_ok && dpsgd_ok,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("rr bitwise {rr_ok}, props bitwise {props_ok}, dp-sgd bitwise {dpsgd_ok}"),
    );
}

#[test]
fn criterion_10_privacy_dataflow_audit() {
    let start = Instant::now();
    let world = generate_world(
        &WorldParams {
            n: 4000,
            ..WorldParams::default()
        },
        &mut seeded_rng(1010, 0),
    )
    .unwrap();
    let config = TrainConfig::default();
    let (_, rr) =
        audited(|| run_rr_baseline(&world.samples, 0.5, &config, &mut seeded_rng(1, 1)).unwrap());
    let props_config = PropsConfig::new(3, 0.5, config.clone());
    let (_, props) =
        audited(|| run_props(&world.samples, &props_config, &mut seeded_rng(1, 1)).unwrap());
    // a control that must register reads
    let (_, control) = audited(|| run_nonprivate(&world.samples, &config).unwrap());

    let harness = ExperimentConfig {
        world: WorldParams {
            n: 2000,
            ..WorldParams::default()
        },
        methods: vec![MethodSpec::new(Method::Props), MethodSpec::new(Method::Rr)],
        epsilons: vec![0.5, 2.0],
        stages: vec![2],
        seeds: vec![0, 1, 2],
        output_dir: "unused".into(),
        heldout_fraction: 0.2,
        delta_prime: 1e-5,
    };
    let outcome = execute(&harness, Grid::Run, None).unwrap();
    let harness_reads: u64 = outcome.results.iter().map(|r| r.audit.outside_eval()).sum();
    let pass = rr.outside_eval() == 0
        && props.outside_eval() == 0
        && harness_reads == 0
        && outcome.results.len() == 12
        && control.training == 4000;
    report(
        10,
        "privacy dataflow audit",
        pass,
        start.elapsed(),
        Duration::from_secs(60),
        &format!(
            "reads outside eval: rr {}, props {}, harness {harness_reads} over {} runs; control counted {}",
            rr.outside_eval(),
            props.outside_eval(),
            outcome.results.len(),
            control.training
        ),
    );
}

fn strip_runtime(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut r: RunResult = serde_json::from_str(l).unwrap();
            r.runtime_ms = 0;
            serde_json::to_string(&r).unwrap()
        })
        .collect()
}

#[test]
fn criterion_11_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        format!(
            "output_dir = \"{}\"\nepsilons = [0.5, 1.0]\nseeds = [0, 1]\n\
             [world]\nn = 2000\n\
             [[methods]]\nmethod = \"props\"\n[[methods]]\nmethod = \"rr\"\n\
             [[methods]]\nmethod = \"dpsgd\"\n[[methods]]\nmethod = \"nonprivate\"\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let config = ExperimentConfig::load(&cfg).unwrap();
    let results = dir
        .path()
        .join("out")
        .join(format!("results-{}.jsonl", config.hash()));
    let mut runs = Vec::new();
    for jobs in ["1", "4"] {
        let status = Command::new(env!("CARGO_BIN_EXE_props"))
            .args(["run", "--config", cfg.to_str().unwrap(), "--jobs", jobs])
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        runs.push(strip_runtime(&results));
    }
    let identical = runs[0] == runs[1];
    let thetas_identical = runs[0].len() == 14 && identical;
    report(
        11,
        "determinism",
        thetas_identical,
        start.elapsed(),
        Duration::from_secs(60),
        &format!(
            "{} records, byte-identical apart from runtime_ms: {identical}",
            runs[0].len()
        ),
    );
}
