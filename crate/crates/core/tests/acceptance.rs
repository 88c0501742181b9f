// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! binary exits non-zero if any check fails. A positional argument filters
//! checks by substring, `--list` prints their names.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;
use rand_distr::StandardNormal;

use lsdetect::classifiers::{Classifier, LdaModel, QdaModel};
use lsdetect::experiments::{
    dengue_cells, lda_qda_crossover, run_cell, scenario1_groups, scenario2_groups, Cell, CellOutcome, CellSettings,
    ExactPosterior, CROSSOVER_ARL, DENGUE_SCORE_PRIOR,
};
use lsdetect::oc::{
    bernoulli_exact_ect, estimate_run_length, fredholm_expected_stopping, gaussian_shift_lr_density,
    simulate_stopping_times, BinaryChainSpec, DetectorSpec, FredholmProblem, McSettings,
};
use lsdetect::simgen::{presets, replication_rng, true_label_shift_lr, PrevalencePath, SimRng};
use lsdetect::{
    label_shift_ratio, run_mixture_detector, DetectorConfig, DetectorState, Execution, LabelShiftPriors,
    MixtureConfig, MixtureState, Regime, UpdateRule,
};

type Check = (&'static str, fn() -> Result<String, String>);

const CHECKS: [Check; 10] = [
    ("c01_optimal_delay_identity_covariance", c01_optimal_delay),
    ("c02_lda_matches_optimal_large_training_set", c02_lda_large_m),
    ("c03_misspecified_lda_small_training_set", c03_misspecified),
    ("c04_label_shift_violation_swapped_means", c04_violation),
    ("c05_fredholm_against_monte_carlo", c05_fredholm),
    ("c06_binary_chain_against_monte_carlo_and_dp", c06_chain),
    ("c07_mixture_close_to_known_prevalence", c07_mixture),
    ("c08_probability_beats_binarized_scores", c08_thresholds),
    ("c09_property_suites", c09_properties),
    ("c10_lda_qda_crossover", c10_crossover),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (name, _) in CHECKS {
            println!("{name}: test");
        }
        return;
    }
    let filter = args.iter().find(|a| !a.starts_with('-')).cloned().unwrap_or_default();
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in CHECKS {
        if !name.contains(&filter) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let (verdict, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        writeln!(out, "{verdict} {name} [{:.1}s] {detail}", t0.elapsed().as_secs_f64()).unwrap();
        out.flush().unwrap();
    }
    writeln!(out, "acceptance: {} passed, {failed} failed", ran - failed).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}

fn verdict(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn find_cell(groups: &[(String, Vec<Cell>)], group: &str, cell: &str) -> Cell {
    let (_, cells) = groups.iter().find(|(g, _)| g == group).unwrap_or_else(|| panic!("no group {group}"));
    cells.iter().find(|c| c.name == cell).unwrap_or_else(|| panic!("no cell {cell} in {group}")).clone()
}

fn run(cell: &Cell, settings: &CellSettings) -> Result<CellOutcome, String> {
    run_cell(cell, settings).map_err(|e| format!("{}: {e}", cell.name))
}

fn describe(o: &CellOutcome) -> String {
    format!(
        "{} ADD {:.2} (SE {:.2}) at ARL {:.1}",
        o.name, o.oc.add_estimate, o.oc.add_se, o.oc.arl_estimate
    )
}

fn c01_optimal_delay() -> Result<String, String> {
    let groups = scenario1_groups();
    let opt = run(&find_cell(&groups, "scenario1-s1a", "optimal"), &CellSettings::new(500.0, 10_000, 101))?;
    let add = opt.oc.add_estimate;
    verdict((add - 29.0).abs() <= 1.0 && opt.calibrated, format!("{} (expected 29.0 ± 1.0)", describe(&opt)))
}

fn c02_lda_large_m() -> Result<String, String> {
    let groups = scenario1_groups();
    let opt = run(&find_cell(&groups, "scenario1-s1a", "optimal"), &CellSettings::new(500.0, 10_000, 101))?;
    let clf = run(
        &find_cell(&groups, "scenario1-s1a", "classifier m=5000"),
        &CellSettings::new(500.0, 2000, 202).with_classifiers(10),
    )?;
    let diff = clf.oc.add_estimate - opt.oc.add_estimate;
    verdict(
        (clf.oc.add_estimate - 28.8).abs() <= 1.0 && diff.abs() <= 1.5,
        format!("{} (expected 28.8 ± 1.0), minus optimal = {diff:.2} (allowed ±1.5)", describe(&clf)),
    )
}

fn c03_misspecified() -> Result<String, String> {
    let groups = scenario1_groups();
    let opt = run(&find_cell(&groups, "scenario1-s1c", "optimal"), &CellSettings::new(500.0, 2000, 303))?;
    let clf = run(
        &find_cell(&groups, "scenario1-s1c", "classifier m=200"),
        &CellSettings::new(500.0, 2000, 304).with_classifiers(10),
    )?;
    let a = clf.oc.add_estimate;
    verdict(
        (a - 41.9).abs() <= 4.0 && opt.oc.add_estimate < a,
        format!("{} (expected 41.9 ± 4.0); optimal {:.2}", describe(&clf), opt.oc.add_estimate),
    )
}

fn c04_violation() -> Result<String, String> {
    let groups = scenario2_groups();
    let settings = CellSettings::new(500.0, 2000, 404).with_classifiers(10);
    let swapped = run(&find_cell(&groups, "scenario2-s1a-swapped", "classifier"), &settings)?;
    let near = run(&find_cell(&groups, "scenario2-s1a-near", "classifier"), &settings)?;
    let a = swapped.oc.add_estimate;
    verdict(
        (a - 541.0).abs() <= 60.0 && a > near.oc.add_estimate,
        format!(
            "{} (expected 541 ± 60); near-label-shift cell {:.1}",
            describe(&swapped),
            near.oc.add_estimate
        ),
    )
}

fn c05_fredholm() -> Result<String, String> {
    let mu = 1.0;
    let density = gaussian_shift_lr_density(mu, Regime::Pre);
    let sampler = move |_: Regime, _: u64, rng: &mut SimRng| {
        let x: f64 = rng.sample(StandardNormal);
        mu * x - 0.5 * mu * mu
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, log_a) in [2.5f64, 3.75, 5.0].into_iter().enumerate() {
        let a = log_a.exp();
        let solve = |n| {
            fredholm_expected_stopping(&FredholmProblem::new(&density, UpdateRule::Cusum, a, n), 1.0)
                .map_err(|e| e.to_string())
        };
        let (v64, v128) = (solve(64)?, solve(128)?);
        let refine = ((v64 - v128) / v128).abs();
        let spec = DetectorSpec::Recursive(DetectorConfig::cusum(a).map_err(|e| e.to_string())?);
        let mc = estimate_run_length(&spec, &sampler, Regime::Pre, &McSettings::new(200_000, 200_000, 500 + i as u64))
            .map_err(|e| e.to_string())?;
        let z = (v128 - mc.mean) / mc.se;
        ok &= z.abs() <= 2.0 && refine < 1e-3 && mc.censored == 0;
        parts.push(format!(
            "logA {log_a}: integral {v128:.2}, MC {:.2} ± {:.2} (z {z:+.2}), 64→128 {refine:.1e}",
            mc.mean, mc.se
        ));
    }
    verdict(ok, parts.join("; "))
}

/// `E[T] = Σ_t P(T > t)`, propagating the law of the log statistic itself.
fn dp_expected_time(up: f64, down: f64, p_up: f64, log_a: f64, step: f64) -> f64 {
    // Keys are lattice indices of the statistic; the alarm test uses the
    // real-valued statistic.
    let mut law: std::collections::BTreeMap<i64, f64> = [(0, 1.0)].into_iter().collect();
    let (ku, kd) = ((up / step).round() as i64, (down / step).round() as i64);
    let mut total = 0.0;
    let mut alive = 1.0;
    let mut t = 0u64;
    while alive > 1e-16 && t < 100_000_000 {
        total += alive;
        let mut next = std::collections::BTreeMap::new();
        for (&k, &m) in &law {
            let hi = k + ku;
            if (hi as f64) * step < log_a {
                *next.entry(hi).or_insert(0.0) += p_up * m;
            }
            *next.entry((k - kd).max(0)).or_insert(0.0) += (1.0 - p_up) * m;
        }
        alive = next.values().sum();
        law = next;
        t += 1;
    }
    total
}

fn c06_chain() -> Result<String, String> {
    let priors = LabelShiftPriors::new(0.4, 0.7).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (log_a, regime)) in [(3.0f64, Regime::Pre), (4.5, Regime::Pre), (6.0, Regime::Pre), (4.5, Regime::Post)]
        .into_iter()
        .enumerate()
    {
        let hit1 = if regime == Regime::Pre { priors.pi_inf } else { priors.pi_0 };
        let base = BinaryChainSpec::from_priors(&priors, hit1, log_a.exp(), 20).map_err(|e| e.to_string())?;
        // Put the threshold halfway between lattice levels.
        let a = ((base.height() as f64 - 0.5) * base.step).exp();
        let spec = BinaryChainSpec { threshold: a, ..base };
        let exact = bernoulli_exact_ect(&spec, 1.0).map_err(|e| e.to_string())?.value();
        let (up, down) = spec.log_increments();
        let dp = dp_expected_time(up, -down, spec.p_up(), a.ln(), spec.step);
        let p_up = spec.p_up();
        let sampler = move |_: Regime, _: u64, rng: &mut SimRng| if rng.random::<f64>() < p_up { up } else { down };
        let det = DetectorSpec::Recursive(DetectorConfig::cusum(a).map_err(|e| e.to_string())?);
        let mc = estimate_run_length(&det, &sampler, Regime::Pre, &McSettings::new(40_000, 1_000_000, 600 + i as u64))
            .map_err(|e| e.to_string())?;
        let z = (exact - mc.mean) / mc.se;
        let rel = ((exact - dp) / dp).abs();
        ok &= z.abs() <= 3.0 && rel <= 1e-9 && mc.censored == 0;
        parts.push(format!(
            "{regime:?} h={}: exact {exact:.3}, DP rel {rel:.1e}, MC {:.2} ± {:.2} (z {z:+.2})",
            spec.height(),
            mc.mean,
            mc.se
        ));
    }
    verdict(ok, parts.join("; "))
}

fn dengue_cell(name: &str) -> Cell {
    dengue_cells(PrevalencePath::Abrupt)
        .into_iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("no cell {name}"))
}

fn c07_mixture() -> Result<String, String> {
    let settings = CellSettings::new(500.0, 2000, 707);
    let mix = run(&dengue_cell("mixture"), &settings)?;
    let clf = run(&dengue_cell("classifier (probability)"), &settings)?;
    let rel = (mix.oc.add_estimate - clf.oc.add_estimate).abs() / clf.oc.add_estimate;
    verdict(
        rel <= 0.15,
        format!("{}; {}; relative gap {:.1}% (allowed 15%)", describe(&mix), describe(&clf), 100.0 * rel),
    )
}

fn c08_thresholds() -> Result<String, String> {
    // The cut-off 0.33 must be where sensitivity + specificity peaks.
    let sc = presets::dengue_analogue(PrevalencePath::Abrupt);
    let clf = ExactPosterior::new(&sc.pre, DENGUE_SCORE_PRIOR).map_err(|e| e.to_string())?;
    let mut rng = replication_rng(808, 0);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for _ in 0..200_000 {
        let s = sc.pre.sample(&mut rng);
        scores.push(clf.score(&s.x).map_err(|e| e.to_string())?);
        labels.push(s.y);
    }
    let grid: Vec<f64> = (5..=95).map(|i| i as f64 / 100.0).collect();
    let youden = |c: f64| {
        let (se, sp) = lsdetect::classifiers::sensitivity_specificity(&scores, &labels, c);
        se + sp
    };
    let best = grid.iter().copied().max_by(|a, b| youden(*a).total_cmp(&youden(*b))).unwrap();

    let settings = CellSettings::new(500.0, 2000, 809);
    let prob = run(&dengue_cell("classifier (probability)"), &settings)?;
    let b33 = run(&dengue_cell("classifier (binary, 0.33)"), &settings)?;
    let b50 = run(&dengue_cell("classifier (binary, 0.5)"), &settings)?;
    let (p, a, b) = (prob.oc.add_estimate, b33.oc.add_estimate, b50.oc.add_estimate);
    verdict(
        p < a && a < b && (best - DENGUE_SCORE_PRIOR).abs() <= 0.03,
        format!("ADD probability {p:.2} < binary 0.33 {a:.2} < binary 0.5 {b:.2}; Youden-optimal cut-off {best:.2}"),
    )
}

fn runner() -> TestRunner {
    TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() })
}

fn prop_check<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn c09_properties() -> Result<String, String> {
    let mut done = Vec::new();

    prop_check(
        "log/linear equivalence",
        (prop::collection::vec(0.05f64..5.0, 1..300), 0.5f64..8.0, prop::bool::ANY),
        |(lrs, log_a, sr)| {
            let rule = if sr { UpdateRule::ShiryaevRoberts } else { UpdateRule::Cusum };
            let cfg = DetectorConfig::new(rule, log_a.exp()).unwrap();
            let mut st = DetectorState::new(&cfg);
            let mut r = cfg.init;
            for &l in &lrs {
                r = rule.psi(r) * l;
                let got = st.update(&cfg, l).unwrap();
                prop_assert!((got - r.ln()).abs() <= 1e-12 * (1.0 + r.ln().abs()));
            }
            Ok(())
        },
    )?;
    done.push("log/linear");

    prop_check(
        "density-ratio identity",
        (0usize..3, prop::collection::vec(-6.0f64..6.0, 2)),
        |(which, x)| {
            let sc = presets::scenario1(presets::Sigma1::ALL[which]);
            let priors = LabelShiftPriors::new(sc.pre.prevalence, sc.post.prevalence).unwrap();
            let direct = true_label_shift_lr(&x, &sc.pre, &sc.post).unwrap();
            let via_posterior = label_shift_ratio(sc.pre.posterior(&x), &priors).unwrap();
            prop_assert!((direct - via_posterior).abs() <= 1e-12 * direct.max(1.0));
            Ok(())
        },
    )?;
    done.push("ratio identity");

    prop_check(
        "mixture window brute force",
        (prop::collection::vec(0.0f64..=1.0, 1..=50), 1usize..60, 1usize..6),
        |(scores, window, n_quad)| {
            let cfg = MixtureConfig::uniform(0.6, 0.8, 0.3, 20.0).with_nodes(n_quad).with_window(window);
            let (nodes, w) = cfg.nodes().unwrap();
            let lam = |s: f64, p: f64| (p / 0.3 - (1.0 - p) / 0.7) * s + (1.0 - p) / 0.7;
            let mut st = MixtureState::new(&cfg).unwrap();
            for t in 1..=scores.len() {
                let got = st.update(scores[t - 1]).unwrap().exp();
                let expect = (t.saturating_sub(window).max(1)..=t)
                    .map(|k| {
                        nodes
                            .iter()
                            .zip(&w)
                            .map(|(&p, &wj)| wj * scores[k - 1..t].iter().map(|&s| lam(s, p)).product::<f64>())
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((got - expect).abs() <= 1e-10 * expect);
            }
            let run = run_mixture_detector(&cfg, scores.iter().copied(), 100, false).unwrap();
            prop_assert!(run.stopping_time as usize <= scores.len());
            Ok(())
        },
    )?;
    done.push("mixture window");

    prop_check(
        "QDA with equal covariances",
        (1usize..6, prop::collection::vec(-2.0f64..2.0, 60), 0.05f64..0.95),
        |(d, raw, prior)| {
            let mu0 = DVector::from_iterator(d, raw[..d].iter().copied());
            let mu1 = DVector::from_iterator(d, raw[d..2 * d].iter().copied());
            let b = DMatrix::from_iterator(d, d, raw[12..12 + d * d].iter().copied());
            let sigma = &b * b.transpose() + DMatrix::identity(d, d);
            let x: Vec<f64> = raw[48..48 + d].to_vec();
            let lda = LdaModel::from_parameters(mu0.clone(), mu1.clone(), sigma.clone(), prior).unwrap();
            let qda = QdaModel::from_parameters(mu0, mu1, sigma.clone(), sigma, prior).unwrap();
            let (zl, zq) = (lda.log_odds(&x).unwrap(), qda.log_odds(&x).unwrap());
            prop_assert!((zl - zq).abs() <= 1e-10 * (1.0 + zl.abs()));
            Ok(())
        },
    )?;
    done.push("QDA collapse");

    // Seed determinism: repeated, sequential and parallel runs agree byte for byte.
    let sampler = |regime: Regime, _: u64, rng: &mut SimRng| {
        let x: f64 = rng.sample(StandardNormal);
        let x = if regime == Regime::Post { x + 1.0 } else { x };
        x - 0.5
    };
    let spec = DetectorSpec::Recursive(DetectorConfig::cusum(30.0).unwrap());
    let mc = McSettings::new(2000, 10_000, 99);
    let par = simulate_stopping_times(&spec, &sampler, Regime::Pre, &mc).map_err(|e| e.to_string())?;
    let seq = simulate_stopping_times(&spec, &sampler, Regime::Pre, &mc.with_execution(Execution::Sequential))
        .map_err(|e| e.to_string())?;
    let cell = find_cell(&scenario1_groups(), "scenario1-s1b", "classifier m=200");
    let quick = CellSettings::new(100.0, 300, 5).with_classifiers(2);
    let json = |s: &CellSettings| run_cell(&cell, s).map(|o| serde_json::to_string(&o).unwrap());
    let (j1, j2) = (json(&quick), json(&quick.with_execution(Execution::Sequential)));
    if par != seq || j1.is_err() || j1.as_ref().ok() != j2.as_ref().ok() {
        return Err("seed determinism: runs differ".into());
    }
    done.push("determinism");

    // Common random numbers: every replication's run length grows with A.
    let mut prev: Option<Vec<(u64, bool)>> = None;
    for log_a in [1.0f64, 2.0, 3.0, 4.0] {
        let spec = DetectorSpec::Recursive(DetectorConfig::cusum(log_a.exp()).unwrap());
        let times = simulate_stopping_times(&spec, &sampler, Regime::Pre, &mc).map_err(|e| e.to_string())?;
        if let Some(p) = &prev {
            if p.iter().zip(&times).any(|(a, b)| a.0 > b.0) {
                return Err(format!("ARL monotonicity violated at log A = {log_a}"));
            }
        }
        prev = Some(times);
    }
    done.push("ARL monotone");

    Ok(format!("all green: {}", done.join(", ")))
}

fn c10_crossover() -> Result<String, String> {
    let settings = CellSettings::new(CROSSOVER_ARL, 1000, 1010).with_classifiers(10);
    let pts = lda_qda_crossover(&[100, 10_000], &settings).map_err(|e| e.to_string())?;
    let (small, large) = (&pts[0], &pts[1]);
    let ok = small.lda.oc.add_estimate < small.qda.oc.add_estimate && large.qda.oc.add_estimate < large.lda.oc.add_estimate;
    let fmt = |p: &lsdetect::experiments::CrossoverPoint| {
        format!(
            "m={}: LDA {:.2} ± {:.2}, QDA {:.2} ± {:.2}",
            p.m, p.lda.oc.add_estimate, p.lda.oc.add_se, p.qda.oc.add_estimate, p.qda.oc.add_se
        )
    };
    verdict(ok, format!("{}; {}", fmt(small), fmt(large)))
}
