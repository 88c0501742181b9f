// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact expected stopping times for CUSUM on binary labels.
//!
//! With label ratios `λ(1) = π0/π∞` and `λ(0) = (1−π0)/(1−π∞)` the log
//! statistic moves by one of two increments. When those are commensurate,
//! `+P·δ` and `−Q·δ` for integers `P`, `Q`, the floored statistic lives on the
//! lattice `{0, δ, 2δ, …}` and the expected hitting time of `log A` solves a
//! banded linear system.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ratio::LabelShiftPriors;

/// Largest lattice accepted.
pub const MAX_STATES: usize = 1_000_000;
const MAX_WORK: f64 = 2e9;

/// Two-increment CUSUM chain on a lattice of spacing `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryChainSpec {
    /// Up-move in lattice units.
    pub up: u32,
    /// Down-move in lattice units.
    pub down: u32,
    pub step: f64,
    /// Probability that the observed label is 1.
    pub hit1: f64,
    /// Which label moves the statistic up.
    pub up_label: u8,
    pub threshold: f64,
}

impl BinaryChainSpec {
    /// Chain with explicit integer increments `+up·step` (label 1) and
    /// `−down·step` (label 0).
    pub fn lattice(up: u32, down: u32, step: f64, hit1: f64, threshold: f64) -> Result<Self> {
        let spec = Self { up, down, step, hit1, up_label: 1, threshold };
        spec.validate()?;
        Ok(spec)
    }

    /// Chain for the label-shift ratio, with the increment ratio approximated
    /// by a continued-fraction convergent whose terms are at most `max_den`.
    pub fn from_priors(priors: &LabelShiftPriors, hit1: f64, threshold: f64, max_den: u32) -> Result<Self> {
        let l1 = (priors.pi_0 / priors.pi_inf).ln();
        let l0 = ((1.0 - priors.pi_0) / (1.0 - priors.pi_inf)).ln();
        if l1 == 0.0 {
            return Err(invalid("pi_0 equals pi_inf; the statistic never moves"));
        }
        let (u, d, up_label) = if l1 > 0.0 { (l1, -l0, 1) } else { (l0, -l1, 0) };
        let (p, q) = best_rational(u / d, max_den.max(1));
        let spec = Self { up: p, down: q, step: u / p as f64, hit1, up_label, threshold };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.up == 0 || self.down == 0 {
            return Err(invalid("lattice increments must be positive"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid(format!("lattice step must be positive, got {}", self.step)));
        }
        if !(0.0..=1.0).contains(&self.hit1) {
            return Err(invalid(format!("hit1 must lie in [0, 1], got {}", self.hit1)));
        }
        if !(self.threshold > 1.0 && self.threshold.is_finite()) {
            return Err(invalid(format!("threshold must exceed 1, got {}", self.threshold)));
        }
        Ok(())
    }

    /// Probability of an up-move.
    pub fn p_up(&self) -> f64 {
        if self.up_label == 1 {
            self.hit1
        } else {
            1.0 - self.hit1
        }
    }

    /// Number of transient states: lattice heights `0..h` lie below `log A`.
    pub fn height(&self) -> usize {
        (self.threshold.ln() / self.step - 1e-9).ceil().max(1.0) as usize
    }

    /// Log-ratio increments `(up, down)` as real numbers.
    pub fn log_increments(&self) -> (f64, f64) {
        (self.up as f64 * self.step, -(self.down as f64) * self.step)
    }

    /// Lattice state for a starting value `x`.
    pub fn state_of(&self, init_x: f64) -> Result<usize> {
        if !(init_x >= 0.0 && init_x < self.threshold) {
            return Err(invalid(format!("init_x must lie in [0, A), got {init_x}")));
        }
        let s = (init_x.max(1.0).ln() / self.step).round() as usize;
        Ok(s.min(self.height() - 1))
    }
}

/// `P(observed label = 1)` for true prevalence `prevalence` and a classifier
/// with the given sensitivity and specificity.
pub fn hit_probability(prevalence: f64, sensitivity: f64, specificity: f64) -> f64 {
    prevalence * sensitivity + (1.0 - prevalence) * (1.0 - specificity)
}

/// Expected stopping time, or divergence when crossing is impossible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedTime {
    Finite(f64),
    Diverged,
}

impl ExpectedTime {
    pub fn value(self) -> f64 {
        match self {
            ExpectedTime::Finite(v) => v,
            ExpectedTime::Diverged => f64::INFINITY,
        }
    }
}

/// Expected stopping time of the chain started from `init_x`.
pub fn bernoulli_exact_ect(spec: &BinaryChainSpec, init_x: f64) -> Result<ExpectedTime> {
    spec.validate()?;
    let start = spec.state_of(init_x)?;
    let v = solve_all(spec)?;
    Ok(match v {
        Some(v) => ExpectedTime::Finite(v[start]),
        None => ExpectedTime::Diverged,
    })
}

/// Expected stopping times from every lattice state, or `None` when the
/// statistic can never move up.
pub fn solve_all(spec: &BinaryChainSpec) -> Result<Option<Vec<f64>>> {
    let p = spec.p_up();
    if p == 0.0 {
        return Ok(None);
    }
    let h = spec.height();
    let (up, down) = (spec.up as usize, spec.down as usize);
    let work = h as f64 * up as f64 * down as f64;
    if h > MAX_STATES || work > MAX_WORK {
        return Err(Error::LatticeTooLarge(h));
    }
    let q = 1.0 - p;
    // Unknowns are the gaps D_k = v_k − v_{k+1} (with v_h = 0). Row i reads
    // p·(D_i + … + D_{i+up−1}) − q·(D_{i−down} + … + D_{i−1}) = 1. The gaps
    // are positive and v is their suffix sum, so large expected times keep
    // full relative precision.
    // Row i holds columns i−down ..= i+up−1 at offsets 0 ..= down+up−1.
    let width = up + down;
    let mut band = vec![0.0f64; h * width];
    let mut rhs = vec![1.0f64; h];
    let at = |i: usize, j: usize| i * width + (j + down - i);
    for i in 0..h {
        for k in i..(i + up).min(h) {
            band[at(i, k)] = p;
        }
        for k in i.saturating_sub(down)..i {
            band[at(i, k)] = -q;
        }
    }
    for k in 0..h {
        let pivot = band[at(k, k)];
        if !(pivot.abs() > 1e-300) {
            return Err(Error::Numerical(format!("zero pivot at lattice state {k}")));
        }
        let last_col = (k + up - 1).min(h - 1);
        for i in k + 1..=(k + down).min(h - 1) {
            let f = band[at(i, k)] / pivot;
            if f == 0.0 {
                continue;
            }
            band[at(i, k)] = 0.0;
            for j in k + 1..=last_col {
                band[at(i, j)] -= f * band[at(k, j)];
            }
            rhs[i] -= f * rhs[k];
        }
    }
    let mut gaps = vec![0.0f64; h];
    for i in (0..h).rev() {
        let mut s = rhs[i];
        for j in i + 1..=(i + up - 1).min(h - 1) {
            s -= band[at(i, j)] * gaps[j];
        }
        gaps[i] = s / band[at(i, i)];
    }
    let mut v = vec![0.0f64; h];
    let mut tail = 0.0;
    for i in (0..h).rev() {
        tail += gaps[i];
        v[i] = tail;
    }
    check_residual(spec, &v)?;
    Ok(Some(v))
}

fn check_residual(spec: &BinaryChainSpec, v: &[f64]) -> Result<()> {
    let h = v.len();
    let (up, down) = (spec.up as usize, spec.down as usize);
    let p = spec.p_up();
    let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    for i in 0..h {
        let next_up = if i + up < h { v[i + up] } else { 0.0 };
        let r = v[i] - p * next_up - (1.0 - p) * v[i.saturating_sub(down)] - 1.0;
        if !(r.abs() <= 1e-8 * scale) {
            return Err(Error::Numerical(format!("chain residual {r:e} at state {i}")));
        }
    }
    Ok(())
}

/// Best rational approximation `p/q` of `x > 0` among continued-fraction
/// convergents with `p, q ≤ max_den`.
pub fn best_rational(x: f64, max_den: u32) -> (u32, u32) {
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut r = x;
    let mut best = (x.round().max(1.0) as u32, 1u32);
    for _ in 0..64 {
        let a = r.floor();
        let (p2, q2) = (a as u64 * p1 + p0, a as u64 * q1 + q0);
        if p2 > max_den as u64 || q2 > max_den as u64 {
            break;
        }
        if p2 > 0 {
            best = (p2 as u32, q2 as u32);
        }
        let frac = r - a;
        if frac < 1e-12 {
            break;
        }
        r = 1.0 / frac;
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
    }
    best
}
