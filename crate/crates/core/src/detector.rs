// SPDX-License-Identifier: MIT OR Apache-2.0

//! Recursive detection statistics `R_t = Ψ(R_{t-1}) · λ(X_t)`.
//!
//! The statistic is held as `log R_t` so that runs of several thousand
//! observations cannot overflow. CUSUM uses `Ψ(r) = max(1, r)`, Shiryaev-Roberts
//! uses `Ψ(r) = 1 + r`. An alarm is raised at the first `t ≥ 1` with `R_t ≥ A`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Update function applied to the previous statistic before multiplying by the
/// new likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    Cusum,
    ShiryaevRoberts,
}

impl UpdateRule {
    /// `Ψ(r)` in the linear domain.
    pub fn psi(self, r: f64) -> f64 {
        match self {
            UpdateRule::Cusum => r.max(1.0),
            UpdateRule::ShiryaevRoberts => 1.0 + r,
        }
    }

    /// `log Ψ(exp(log_r))`, stable for any `log_r` including `-inf`.
    #[inline]
    pub fn log_psi(self, log_r: f64) -> f64 {
        match self {
            UpdateRule::Cusum => log_r.max(0.0),
            UpdateRule::ShiryaevRoberts => log1p_exp(log_r),
        }
    }

    /// Conventional starting value: 1 for CUSUM, 0 for Shiryaev-Roberts.
    pub fn default_init(self) -> f64 {
        match self {
            UpdateRule::Cusum => 1.0,
            UpdateRule::ShiryaevRoberts => 0.0,
        }
    }
}

/// `log(1 + exp(x))` without overflow or cancellation.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Threshold `A`, update rule and starting value `x` of `T^x(A)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub rule: UpdateRule,
    pub threshold: f64,
    pub init: f64,
}

impl DetectorConfig {
    /// Config with the rule's conventional starting value.
    pub fn new(rule: UpdateRule, threshold: f64) -> Result<Self> {
        Self::with_init(rule, threshold, rule.default_init())
    }

    pub fn with_init(rule: UpdateRule, threshold: f64, init: f64) -> Result<Self> {
        if !(init.is_finite() && init >= 0.0) {
            return Err(invalid(format!("initial value must be finite and >= 0, got {init}")));
        }
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(invalid(format!("threshold must be finite and > 0, got {threshold}")));
        }
        if threshold <= init {
            return Err(invalid(format!(
                "threshold {threshold} must exceed the initial value {init}"
            )));
        }
        Ok(Self { rule, threshold, init })
    }

    pub fn cusum(threshold: f64) -> Result<Self> {
        Self::new(UpdateRule::Cusum, threshold)
    }

    pub fn shiryaev_roberts(threshold: f64) -> Result<Self> {
        Self::new(UpdateRule::ShiryaevRoberts, threshold)
    }

    pub fn log_threshold(&self) -> f64 {
        self.threshold.ln()
    }

    /// Same rule and starting value with a different threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        Self::with_init(self.rule, threshold, self.init)
    }
}

/// Running statistic `log R_t` and the number of observations consumed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorState {
    pub log_stat: f64,
    pub t: u64,
}

impl DetectorState {
    pub fn new(config: &DetectorConfig) -> Self {
        Self { log_stat: config.init.ln(), t: 0 }
    }

    pub fn stat(&self) -> f64 {
        self.log_stat.exp()
    }

    /// Consumes one likelihood ratio. Nonpositive or non-finite ratios are
    /// rejected since they can only come from a broken ratio model.
    pub fn update(&mut self, config: &DetectorConfig, lr: f64) -> Result<f64> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidRatio(lr));
        }
        Ok(self.update_log(config.rule, lr.ln()))
    }

    /// Consumes one log likelihood ratio without validation.
    #[inline]
    pub fn update_log(&mut self, rule: UpdateRule, log_lr: f64) -> f64 {
        self.log_stat = rule.log_psi(self.log_stat) + log_lr;
        self.t += 1;
        self.log_stat
    }

    pub fn crossed(&self, config: &DetectorConfig) -> bool {
        self.t > 0 && self.log_stat >= config.log_threshold()
    }
}

/// Outcome of running a detector over a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub stopped: bool,
    /// First crossing index when `stopped`, otherwise the number of
    /// observations consumed before the cap or the end of the stream.
    pub stopping_time: u64,
    pub final_log_stat: f64,
    pub trajectory: Option<Vec<f64>>,
}

/// Runs a recursive detector over `lrs` until `R_t ≥ A` or `cap` observations.
pub fn run_detector<I>(
    config: &DetectorConfig,
    lrs: I,
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
    let mut state = DetectorState::new(config);
    let mut trajectory = keep_trajectory.then(Vec::new);
    for lr in lrs {
        let s = state.update(config, lr)?;
        if let Some(tr) = trajectory.as_mut() {
            tr.push(s);
        }
        if s >= log_a {
            return Ok(RunResult {
                stopped: true,
                stopping_time: state.t,
                final_log_stat: s,
                trajectory,
            });
        }
        if state.t >= cap {
            break;
        }
    }
    Ok(RunResult {
        stopped: false,
        stopping_time: state.t,
        final_log_stat: state.log_stat,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn linear_stats(rule: UpdateRule, init: f64, lrs: &[f64]) -> Vec<f64> {
        let mut r = init;
        lrs.iter()
            .map(|&l| {
                r = rule.psi(r) * l;
                r
            })
            .collect()
    }

    #[test]
    fn cusum_recursion_example() {
        let cfg = DetectorConfig::cusum(100.0).unwrap();
        let mut st = DetectorState::new(&cfg);
        let got: Vec<f64> = [2.0, 0.5, 3.0]
            .iter()
            .map(|&l| st.update(&cfg, l).unwrap().exp())
            .collect();
        assert_relative_eq!(got[0], 2.0, max_relative = 1e-14);
        assert_relative_eq!(got[1], 1.0, max_relative = 1e-14);
        assert_relative_eq!(got[2], 3.0, max_relative = 1e-14);
        assert_eq!(st.t, 3);
    }

    #[test]
    fn sr_recursion_example() {
        let cfg = DetectorConfig::shiryaev_roberts(100.0).unwrap();
        let mut st = DetectorState::new(&cfg);
        let got: Vec<f64> = [2.0, 0.5, 3.0]
            .iter()
            .map(|&l| st.update(&cfg, l).unwrap().exp())
            .collect();
        assert_relative_eq!(got[0], 2.0, max_relative = 1e-14);
        assert_relative_eq!(got[1], 1.5, max_relative = 1e-14);
        assert_relative_eq!(got[2], 7.5, max_relative = 1e-14);
    }

    #[test]
    fn unit_ratios_keep_cusum_at_one() {
        let cfg = DetectorConfig::cusum(2.0).unwrap();
        let mut st = DetectorState::new(&cfg);
        for _ in 0..1000 {
            assert_eq!(st.update(&cfg, 1.0).unwrap(), 0.0);
        }
        let run = run_detector(&cfg, std::iter::repeat(1.0), 10_000, false).unwrap();
        assert!(!run.stopped);
        assert_eq!(run.stopping_time, 10_000);
    }

    #[test]
    fn run_examples() {
        let cusum3 = DetectorConfig::cusum(3.0).unwrap();
        let r = run_detector(&cusum3, [2.0, 0.5, 3.0], 100, true).unwrap();
        assert!(r.stopped);
        assert_eq!(r.stopping_time, 3);
        assert_eq!(r.trajectory.as_ref().unwrap().len(), 3);

        let cusum15 = DetectorConfig::cusum(1.5).unwrap();
        let r = run_detector(&cusum15, [2.0, 0.1, 0.1], 100, false).unwrap();
        assert!(r.stopped);
        assert_eq!(r.stopping_time, 1);

        let sr = DetectorConfig::shiryaev_roberts(10.0).unwrap();
        let r = run_detector(&sr, [2.0, 0.5, 3.0], 3, false).unwrap();
        assert!(!r.stopped);
        assert_eq!(r.stopping_time, 3);
        assert_relative_eq!(r.final_log_stat.exp(), 7.5, max_relative = 1e-14);
    }

    #[test]
    fn empty_stream_is_censored_at_zero() {
        let cfg = DetectorConfig::cusum(3.0).unwrap();
        let r = run_detector(&cfg, std::iter::empty(), 10, false).unwrap();
        assert!(!r.stopped);
        assert_eq!(r.stopping_time, 0);
    }

    #[test]
    fn rejects_bad_ratios_and_configs() {
        let cfg = DetectorConfig::cusum(3.0).unwrap();
        let mut st = DetectorState::new(&cfg);
        assert!(matches!(st.update(&cfg, 0.0), Err(Error::InvalidRatio(_))));
        assert!(st.update(&cfg, -1.0).is_err());
        assert!(st.update(&cfg, f64::NAN).is_err());
        assert!(st.update(&cfg, f64::INFINITY).is_err());
        assert!(DetectorConfig::cusum(1.0).is_err());
        assert!(DetectorConfig::cusum(0.5).is_err());
        assert!(DetectorConfig::with_init(UpdateRule::Cusum, 3.0, -1.0).is_err());
        assert!(run_detector(&cfg, [1.0], 0, false).is_err());
    }

    #[test]
    fn log1p_exp_is_stable() {
        assert_eq!(log1p_exp(f64::NEG_INFINITY), 0.0);
        assert_relative_eq!(log1p_exp(0.0), 2f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(log1p_exp(800.0), 800.0, max_relative = 1e-15);
        assert_relative_eq!(log1p_exp(-800.0), (-800f64).exp(), max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn log_and_linear_domains_agree(
            lrs in prop::collection::vec(0.05f64..5.0, 1..200),
            log_a in 0.1f64..8.0,
            sr in any::<bool>(),
        ) {
            let rule = if sr { UpdateRule::ShiryaevRoberts } else { UpdateRule::Cusum };
            let cfg = DetectorConfig::new(rule, log_a.exp()).unwrap();
            let linear = linear_stats(rule, cfg.init, &lrs);
            prop_assume!(linear.iter().all(|r| *r < 1e300));
            let mut st = DetectorState::new(&cfg);
            for (l, lin) in lrs.iter().zip(&linear) {
                let s = st.update(&cfg, *l).unwrap().exp();
                prop_assert!((s - lin).abs() <= 1e-12 * lin.abs());
            }
            let lin_t = linear.iter().position(|&r| r >= cfg.threshold).map(|i| i as u64 + 1);
            let run = run_detector(&cfg, lrs.iter().copied(), lrs.len() as u64, false).unwrap();
            match lin_t {
                Some(t) => { prop_assert!(run.stopped); prop_assert_eq!(run.stopping_time, t); }
                None => prop_assert!(!run.stopped),
            }
        }

        #[test]
        fn closed_forms_match_recursion(
            lrs in prop::collection::vec(0.1f64..4.0, 1..20),
            init in 0.0f64..3.0,
        ) {
            let n = lrs.len();
            let prod = |a: usize, b: usize| lrs[a..=b].iter().product::<f64>();
            // SR: sum over suffix products plus the initial value carried through.
            let sr = linear_stats(UpdateRule::ShiryaevRoberts, init, &lrs);
            for t in 0..n {
                let brute: f64 = (0..=t).map(|k| prod(k, t)).sum::<f64>() + init * prod(0, t);
                prop_assert!((sr[t] - brute).abs() <= 1e-12 * brute);
            }
            // CUSUM: max over suffix products, with the prefix started from max(1, x).
            let cu = linear_stats(UpdateRule::Cusum, init, &lrs);
            for t in 0..n {
                let mut brute = init.max(1.0) * prod(0, t);
                for k in 1..=t {
                    brute = brute.max(prod(k, t));
                }
                prop_assert!((cu[t] - brute).abs() <= 1e-12 * brute);
            }
        }

        #[test]
        fn stopping_time_monotone_in_threshold(
            lrs in prop::collection::vec(0.2f64..3.0, 1..300),
            a1 in 1.01f64..50.0,
            da in 0.0f64..50.0,
        ) {
            let t = |a: f64| {
                let cfg = DetectorConfig::cusum(a).unwrap();
                run_detector(&cfg, lrs.iter().copied(), 10_000, false).unwrap()
            };
            let lo = t(a1);
            let hi = t(a1 + da);
            if hi.stopped {
                prop_assert!(lo.stopped);
                prop_assert!(lo.stopping_time <= hi.stopping_time);
            }
        }
    }
}
