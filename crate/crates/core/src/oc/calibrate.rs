// SPDX-License-Identifier: MIT OR Apache-2.0

//! Threshold calibration to a target ARL under common random numbers.
//!
//! Each replication is simulated once, far enough to pass the upper end of the
//! bracket, and its running-maximum records are kept. The Monte Carlo ARL at
//! any lower threshold is then a deterministic, nondecreasing step function of
//! `log A`, which bisection handles without noise.

use serde::{Deserialize, Serialize};

use super::montecarlo::{DetectorSpec, McSettings, Records, RunLengthEstimate, StreamSampler};
use crate::error::{invalid, Error, Result};
use crate::exec::compensated_sum;
use crate::simgen::replication_rng;
use crate::Regime;

/// Search interval for the threshold `A`.
pub const THRESHOLD_BRACKET: (f64, f64) = (1.0 + 1e-6, 1e9);

/// Default relative tolerance on the ARL.
pub const DEFAULT_TOL_REL: f64 = 0.02;

const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub arl: f64,
    pub arl_se: f64,
    pub n_censored: u64,
    /// False when the step-function ARL jumps over the tolerance band; the
    /// closest threshold found is returned.
    pub converged: bool,
    pub iterations: usize,
}

/// Finds `A` whose Monte Carlo ARL is within `tol_rel` of `target_arl`.
pub fn calibrate_threshold<S: StreamSampler + ?Sized>(
    spec: &DetectorSpec,
    sampler: &S,
    target_arl: f64,
    tol_rel: f64,
    settings: &McSettings,
) -> Result<CalibrationResult> {
    if !(target_arl >= 1.0 && target_arl.is_finite()) {
        return Err(invalid(format!("target ARL must be at least 1, got {target_arl}")));
    }
    if !(tol_rel > 0.0 && tol_rel.is_finite()) {
        return Err(invalid(format!("tol_rel must be positive, got {tol_rel}")));
    }
    if settings.n_reps < 2 || settings.cap == 0 {
        return Err(invalid("need at least 2 replications and a positive cap"));
    }
    let (lo_a, hi_a) = THRESHOLD_BRACKET;
    let floor = spec.threshold_floor();
    let log_lo = lo_a.max(floor * (1.0 + 1e-9)).ln();
    let log_max = hi_a.ln();
    if log_lo >= log_max {
        return Err(Error::NoBracket { lo: lo_a, hi: hi_a });
    }
    let cap = settings.cap;

    // Grow the upper end, extrapolating ARL ∝ A, until it clears the target.
    let mut log_hi = (log_lo + 1.0).min(log_max);
    let records = loop {
        let recs = simulate_all(spec, sampler, settings, log_hi)?;
        let arl = mean_arl(&recs, log_hi, cap);
        if arl >= target_arl {
            break recs;
        }
        if log_hi >= log_max {
            return Err(Error::NoBracket { lo: lo_a, hi: hi_a });
        }
        let step = (target_arl / arl.max(1.0)).ln().max(0.25) + 0.25;
        log_hi = (log_hi + step).min(log_max);
    };

    let eval = |log_a: f64| mean_arl(&records, log_a, cap);
    let within = |arl: f64| (arl - target_arl).abs() <= tol_rel * target_arl;

    let mut best = (log_hi, eval(log_hi));
    let consider = |log_a: f64, arl: f64, best: &mut (f64, f64)| {
        if (arl - target_arl).abs() < (best.1 - target_arl).abs() {
            *best = (log_a, arl);
        }
    };
    let arl_lo = eval(log_lo);
    consider(log_lo, arl_lo, &mut best);
    let mut iterations = 0;
    if arl_lo < target_arl && !within(best.1) {
        let (mut a, mut b) = (log_lo, log_hi);
        while iterations < MAX_BISECTIONS {
            iterations += 1;
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let arl = eval(mid);
            consider(mid, arl, &mut best);
            if within(arl) {
                break;
            }
            if arl < target_arl {
                a = mid;
            } else {
                b = mid;
            }
        }
    }

    let (log_a, _) = best;
    let times: Vec<(u64, bool)> = records.iter().map(|r| r.passage(log_a, cap)).collect();
    let censored = times.iter().filter(|t| t.1).count() as u64;
    let plain: Vec<u64> = times.iter().map(|t| t.0).collect();
    let est = RunLengthEstimate::from_times(&plain, censored, cap)?;
    Ok(CalibrationResult {
        threshold: log_a.exp(),
        arl: est.mean,
        arl_se: est.se,
        n_censored: censored,
        converged: within(est.mean),
        iterations,
    })
}

fn simulate_all<S: StreamSampler + ?Sized>(
    spec: &DetectorSpec,
    sampler: &S,
    settings: &McSettings,
    log_limit: f64,
) -> Result<Vec<Records>> {
    settings
        .execution
        .map(settings.n_reps, |r| {
            let mut rng = replication_rng(settings.seed, r);
            Records::simulate(spec, sampler, Regime::Pre, &mut rng, log_limit, settings.cap)
        })
        .into_iter()
        .collect()
}

fn mean_arl(records: &[Records], log_a: f64, cap: u64) -> f64 {
    compensated_sum(records.iter().map(|r| r.passage(log_a, cap).0 as f64)) / records.len() as f64
}
