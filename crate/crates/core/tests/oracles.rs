// SPDX-License-Identifier: MIT OR Apache-2.0

//! Operating-characteristic solvers checked against independent oracles.

use rand::Rng;
use rand_distr::StandardNormal;

use lsdetect::oc::{
    bernoulli_exact_ect, calibrate_threshold, estimate_run_length, fredholm_expected_stopping,
    gaussian_shift_lr_density, BinaryChainSpec, DetectorSpec, FredholmProblem, McSettings,
};
use lsdetect::simgen::SimRng;
use lsdetect::{DetectorConfig, LabelShiftPriors, Regime, UpdateRule};

fn priors() -> LabelShiftPriors {
    LabelShiftPriors::new(0.4, 0.7).unwrap()
}

/// Pre-change chain for perfect labels with its threshold centred between
/// lattice levels `height - 1` and `height`.
fn chain_at_height(base: &BinaryChainSpec, height: usize) -> BinaryChainSpec {
    BinaryChainSpec { threshold: ((height as f64 - 0.5) * base.step).exp(), ..*base }
}

/// Smallest lattice height whose pre-change ARL reaches `target`.
fn height_for_arl(base: &BinaryChainSpec, target: f64) -> (usize, f64) {
    (1..10_000)
        .map(|h| (h, bernoulli_exact_ect(&chain_at_height(base, h), 1.0).unwrap().value()))
        .find(|&(_, arl)| arl >= target)
        .unwrap()
}

fn lattice_sampler(spec: &BinaryChainSpec) -> impl Fn(Regime, u64, &mut SimRng) -> f64 + Sync {
    let (up, down) = spec.log_increments();
    let p = spec.p_up();
    move |_, _, rng| if rng.random::<f64>() < p { up } else { down }
}

#[test]
fn bernoulli_chain_threshold_gives_target_arl_by_simulation() {
    let base = BinaryChainSpec::from_priors(&priors(), 0.4, 500.0, 20).unwrap();
    let (h, exact) = height_for_arl(&base, 500.0);
    let spec = chain_at_height(&base, h);
    let det = DetectorSpec::Recursive(DetectorConfig::cusum(spec.threshold).unwrap());
    let mc = estimate_run_length(&det, &lattice_sampler(&spec), Regime::Pre, &McSettings::new(20_000, 1_000_000, 366))
        .unwrap();
    assert_eq!(mc.censored, 0);
    let z = (mc.mean - exact) / mc.se;
    assert!(z.abs() <= 3.0, "chain {exact}, MC {} ± {} (z {z})", mc.mean, mc.se);
}

#[test]
fn calibration_lands_within_one_lattice_step_of_chain_inverse() {
    let base = BinaryChainSpec::from_priors(&priors(), 0.4, 500.0, 20).unwrap();
    let (h, _) = height_for_arl(&base, 500.0);
    let det = DetectorSpec::Recursive(DetectorConfig::cusum(10.0).unwrap());
    let cal = calibrate_threshold(&det, &lattice_sampler(&base), 500.0, 0.02, &McSettings::new(4000, 1_000_000, 374))
        .unwrap();
    // ARL(A) is constant for log A in ((h-1)δ, hδ]; allow one step either side.
    let log_a = cal.threshold.ln();
    let (lo, hi) = ((h as f64 - 2.0) * base.step, (h as f64 + 1.0) * base.step);
    assert!(log_a > lo && log_a <= hi, "log A {log_a} outside ({lo}, {hi}], step {}", base.step);
}

/// Ladder chain `E_k = 1 + p E_{k+1} + (1-p) E_{max(k-1,0)}`, `E_h = 0`.
/// The gaps `D_k = E_k - E_{k+1}` obey `p D_0 = 1` and
/// `p D_k = 1 + (1-p) D_{k-1}`, and `E_0` is their sum.
fn ladder_recursion(p: f64, h: usize) -> f64 {
    let mut gap = 1.0 / p;
    let mut total = gap;
    for _ in 1..h {
        gap = (1.0 + (1.0 - p) * gap) / p;
        total += gap;
    }
    total
}

#[test]
fn unit_step_lattice_matches_ladder_recursion() {
    let step = 1.5f64.ln();
    for p in [0.2, 0.45, 0.5, 0.55, 0.8] {
        for h in [1usize, 2, 5, 17, 40] {
            let threshold = ((h as f64 - 0.5) * step).exp();
            let spec = BinaryChainSpec::lattice(1, 1, step, p, threshold).unwrap();
            assert_eq!(spec.height(), h);
            let exact = bernoulli_exact_ect(&spec, 1.0).unwrap().value();
            let oracle = ladder_recursion(p, h);
            assert!(((exact - oracle) / oracle).abs() < 1e-12, "p {p}, h {h}: {exact} vs {oracle}");
        }
    }
}

#[test]
fn fredholm_gaussian_at_e_squared_matches_simulation() {
    let mu = 1.0;
    let a = 2f64.exp();
    let density = gaussian_shift_lr_density(mu, Regime::Pre);
    let solve = |n| fredholm_expected_stopping(&FredholmProblem::new(&density, UpdateRule::Cusum, a, n), 1.0).unwrap();
    let (v64, v128) = (solve(64), solve(128));
    assert!(((v64 - v128) / v128).abs() < 1e-3, "64 nodes {v64}, 128 nodes {v128}");

    let sampler = move |_: Regime, _: u64, rng: &mut SimRng| mu * rng.sample::<f64, _>(StandardNormal) - 0.5 * mu * mu;
    let det = DetectorSpec::Recursive(DetectorConfig::cusum(a).unwrap());
    let mc = estimate_run_length(&det, &sampler, Regime::Pre, &McSettings::new(200_000, 100_000, 384)).unwrap();
    let z = (v128 - mc.mean) / mc.se;
    assert!(z.abs() <= 2.0, "integral {v128}, MC {} ± {} (z {z})", mc.mean, mc.se);
}
