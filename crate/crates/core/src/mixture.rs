// SPDX-License-Identifier: MIT OR Apache-2.0

//! Window-limited mixture CUSUM for an unknown post-change prevalence.
//!
//! For candidate prevalences `π0 ∈ [a, b]` with weights `w`, the statistic is
//!
//! ```text
//! R̃_t = max_{max(1, t−m) ≤ k ≤ t}  Σ_j w_j Π_{i=k..t} λ̂_{π0_j}(X_i)
//! ```
//!
//! where `λ̂_{π0}` is the score-form label-shift ratio. The integral over `π0`
//! is a midpoint rule on `n_quad` equally spaced nodes. There is no empty
//! product term, so unlike plain CUSUM the statistic is not floored at 1.

use serde::{Deserialize, Serialize};

use crate::detector::RunResult;
use crate::error::{invalid, Result};
use crate::ratio::{check_score, LabelShiftPriors, ScoreRatioModel};

/// Weight density over the candidate interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MixtureWeight {
    Uniform,
    /// All mass on one prevalence; the interval and node count are ignored.
    PointMass(f64),
    /// Explicit weights for each of the `n_quad` midpoint nodes.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub pi0_min: f64,
    pub pi0_max: f64,
    pub weight: MixtureWeight,
    pub n_quad: usize,
    pub window: usize,
    pub pi_inf: f64,
    pub threshold: f64,
}

impl MixtureConfig {
    pub const DEFAULT_NODES: usize = 21;
    pub const DEFAULT_WINDOW: usize = 200;

    /// Uniform weight over `[pi0_min, pi0_max]` with the default node count
    /// and window.
    pub fn uniform(pi0_min: f64, pi0_max: f64, pi_inf: f64, threshold: f64) -> Self {
        Self {
            pi0_min,
            pi0_max,
            weight: MixtureWeight::Uniform,
            n_quad: Self::DEFAULT_NODES,
            window: Self::DEFAULT_WINDOW,
            pi_inf,
            threshold,
        }
    }

    pub fn point_mass(pi0: f64, pi_inf: f64, window: usize, threshold: f64) -> Self {
        Self {
            pi0_min: pi0,
            pi0_max: pi0,
            weight: MixtureWeight::PointMass(pi0),
            n_quad: 1,
            window,
            pi_inf,
            threshold,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn with_nodes(mut self, n_quad: usize) -> Self {
        self.n_quad = n_quad;
        self
    }

    pub fn with_threshold(&self, threshold: f64) -> Self {
        Self { threshold, ..self.clone() }
    }

    pub fn log_threshold(&self) -> f64 {
        self.threshold.ln()
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.pi0_min, self.pi0_max);
        if !(a > 0.0 && a <= b && b < 1.0) {
            return Err(invalid(format!("need 0 < pi0_min <= pi0_max < 1, got [{a}, {b}]")));
        }
        if !(self.pi_inf > 0.0 && self.pi_inf < 1.0) {
            return Err(invalid(format!("pi_inf must lie in (0, 1), got {}", self.pi_inf)));
        }
        if self.n_quad == 0 {
            return Err(invalid("n_quad must be at least 1"));
        }
        if self.window == 0 {
            return Err(invalid("window must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(invalid(format!("threshold must be positive, got {}", self.threshold)));
        }
        match &self.weight {
            MixtureWeight::Uniform => {}
            MixtureWeight::PointMass(p) => {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(invalid(format!("point mass must lie in (0, 1), got {p}")));
                }
            }
            MixtureWeight::Custom(w) => {
                if w.len() != self.n_quad {
                    return Err(invalid(format!(
                        "custom weights have length {}, expected n_quad = {}",
                        w.len(),
                        self.n_quad
                    )));
                }
                if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                    return Err(invalid("custom weights must be nonnegative with positive sum"));
                }
            }
        }
        Ok(())
    }

    /// Quadrature nodes and normalized weights. Coincident nodes are merged.
    pub fn nodes(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        let n = self.n_quad;
        let midpoint = |j: usize| {
            self.pi0_min + (j as f64 + 0.5) * (self.pi0_max - self.pi0_min) / n as f64
        };
        let raw: Vec<(f64, f64)> = match &self.weight {
            MixtureWeight::PointMass(p) => vec![(*p, 1.0)],
            MixtureWeight::Uniform => (0..n).map(|j| (midpoint(j), 1.0)).collect(),
            MixtureWeight::Custom(w) => (0..n).map(|j| (midpoint(j), w[j])).collect(),
        };
        let mut nodes: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (p, w) in raw {
            if w == 0.0 {
                continue;
            }
            match nodes.iter().position(|&q| q == p) {
                Some(i) => weights[i] += w,
                None => {
                    nodes.push(p);
                    weights.push(w);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok((nodes, weights))
    }
}

/// `log λ̂_{π0_j}(score)` at every quadrature node.
pub fn per_pi0_log_ratios(score: f64, config: &MixtureConfig) -> Result<Vec<f64>> {
    check_score(score)?;
    let (nodes, _) = config.nodes()?;
    nodes
        .iter()
        .map(|&p| {
            let m = ScoreRatioModel::new(LabelShiftPriors::new(config.pi_inf, p)?);
            Ok(m.eval(score).ln())
        })
        .collect()
}

/// Sliding window of per-node log ratios for one stream.
#[derive(Debug, Clone)]
pub struct MixtureState {
    models: Vec<ScoreRatioModel>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    /// Row-major `slots × nodes`, oldest row at `head`.
    log_buf: Vec<f64>,
    lin_buf: Vec<f64>,
    slots: usize,
    head: usize,
    len: usize,
    linear_ok: bool,
    scratch: Vec<f64>,
    pub t: u64,
}

impl MixtureState {
    pub fn new(config: &MixtureConfig) -> Result<Self> {
        let (nodes, weights) = config.nodes()?;
        let models = nodes
            .iter()
            .map(|&p| Ok(ScoreRatioModel::new(LabelShiftPriors::new(config.pi_inf, p)?)))
            .collect::<Result<Vec<_>>>()?;
        // |log λ̂| over s ∈ [0, 1] is bounded by its endpoint values, so the
        // window product stays inside f64 range when slots · bound is moderate.
        let bound = models
            .iter()
            .map(|m| m.eval(0.0).ln().abs().max(m.eval(1.0).ln().abs()))
            .fold(0.0, f64::max);
        let slots = config.window + 1;
        let k = nodes.len();
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            models,
            log_buf: vec![0.0; slots * k],
            lin_buf: vec![1.0; slots * k],
            slots,
            head: 0,
            len: 0,
            linear_ok: slots as f64 * bound < 600.0,
            scratch: vec![0.0; k],
            t: 0,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.models.len()
    }

    /// Log ratios held for observation `t - age` (age 0 is the newest).
    pub fn window_row(&self, age: usize) -> &[f64] {
        let k = self.models.len();
        let idx = (self.head + self.len - 1 - age) % self.slots;
        &self.log_buf[idx * k..(idx + 1) * k]
    }

    pub fn window_len(&self) -> usize {
        self.len
    }

    /// Appends one score and returns `log R̃_t`.
    pub fn update(&mut self, score: f64) -> Result<f64> {
        check_score(score)?;
        Ok(self.push_unchecked(score))
    }

    #[inline]
    pub(crate) fn push_unchecked(&mut self, score: f64) -> f64 {
        let k = self.models.len();
        let slot = if self.len < self.slots {
            self.len += 1;
            (self.head + self.len - 1) % self.slots
        } else {
            let s = self.head;
            self.head = (self.head + 1) % self.slots;
            s
        };
        for (j, m) in self.models.iter().enumerate() {
            let lam = m.eval(score);
            self.lin_buf[slot * k + j] = lam;
            self.log_buf[slot * k + j] = lam.ln();
        }
        self.t += 1;
        if self.linear_ok {
            self.statistic_linear()
        } else {
            self.statistic_log()
        }
    }

    fn row_index(&self, age: usize) -> usize {
        (self.head + self.len - 1 - age) % self.slots
    }

    fn statistic_linear(&mut self) -> f64 {
        let k = self.models.len();
        self.scratch.iter_mut().for_each(|p| *p = 1.0);
        let mut best = 0.0f64;
        for age in 0..self.len {
            let row = self.row_index(age);
            let lam = &self.lin_buf[row * k..(row + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                self.scratch[j] *= lam[j];
                acc += self.weights[j] * self.scratch[j];
            }
            best = best.max(acc);
        }
        best.ln()
    }

    /// Recomputes the statistic from the buffer in the log domain.
    pub fn statistic_log(&mut self) -> f64 {
        let k = self.models.len();
        self.scratch.iter_mut().for_each(|s| *s = 0.0);
        let mut best = f64::NEG_INFINITY;
        for age in 0..self.len {
            let row = self.row_index(age);
            let mut mx = f64::NEG_INFINITY;
            for j in 0..k {
                self.scratch[j] += self.log_buf[row * k + j];
                mx = mx.max(self.log_weights[j] + self.scratch[j]);
            }
            let s: f64 = (0..k)
                .map(|j| (self.log_weights[j] + self.scratch[j] - mx).exp())
                .sum();
            best = best.max(mx + s.ln());
        }
        best
    }

    #[cfg(test)]
    fn uses_linear_path(&self) -> bool {
        self.linear_ok
    }
}

/// Appends `score` and returns the new log statistic.
pub fn update_mixture(state: &mut MixtureState, score: f64) -> Result<f64> {
    state.update(score)
}

/// Runs the mixture detector until `R̃_t ≥ A` or `cap` observations.
pub fn run_mixture_detector<I>(
    config: &MixtureConfig,
    scores: I,
    cap: u64,
    keep_trajectory: bool,
) -> Result<RunResult>
where
    I: IntoIterator<Item = f64>,
{
    if cap == 0 {
        return Err(invalid("cap must be at least 1"));
    }
    let log_a = config.log_threshold();
    let mut state = MixtureState::new(config)?;
    let mut trajectory = keep_trajectory.then(Vec::new);
    let mut last = f64::NEG_INFINITY;
    for s in scores {
        last = state.update(s)?;
        if let Some(tr) = trajectory.as_mut() {
            tr.push(last);
        }
        if last >= log_a {
            return Ok(RunResult { stopped: true, stopping_time: state.t, final_log_stat: last, trajectory });
        }
        if state.t >= cap {
            break;
        }
    }
    Ok(RunResult { stopped: false, stopping_time: state.t, final_log_stat: last, trajectory })
}
