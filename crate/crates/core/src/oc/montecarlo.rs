// SPDX-License-Identifier: MIT OR Apache-2.0

//! Monte Carlo estimation of expected stopping times.
//!
//! Replication `r` draws from `replication_rng(seed, r)` and nothing else, so
//! estimates are bit-identical for a given seed whatever the scheduler.

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, DetectorState, UpdateRule};
use crate::error::{invalid, Error, Result};
use crate::exec::{compensated_sum, Execution};
use crate::mixture::{MixtureConfig, MixtureState};
use crate::ratio::check_score;
use crate::simgen::{replication_rng, SimRng};
use crate::Regime;

/// A detector whose statistic can be simulated.
///
/// Recursive detectors consume log likelihood ratios; the mixture detector
/// consumes classifier scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorSpec {
    Recursive(DetectorConfig),
    Mixture(MixtureConfig),
}

impl DetectorSpec {
    pub fn threshold(&self) -> f64 {
        match self {
            DetectorSpec::Recursive(c) => c.threshold,
            DetectorSpec::Mixture(c) => c.threshold,
        }
    }

    pub fn log_threshold(&self) -> f64 {
        self.threshold().ln()
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        Ok(match self {
            DetectorSpec::Recursive(c) => DetectorSpec::Recursive(c.with_threshold(threshold)?),
            DetectorSpec::Mixture(c) => {
                let c = c.with_threshold(threshold);
                c.validate()?;
                DetectorSpec::Mixture(c)
            }
        })
    }

    /// Smallest threshold the detector accepts.
    pub(crate) fn threshold_floor(&self) -> f64 {
        match self {
            DetectorSpec::Recursive(c) => c.init,
            DetectorSpec::Mixture(_) => 0.0,
        }
    }

    pub(crate) fn tracker(&self) -> Result<Tracker> {
        Ok(match self {
            DetectorSpec::Recursive(c) => Tracker::Recursive { rule: c.rule, state: DetectorState::new(c) },
            DetectorSpec::Mixture(c) => Tracker::Mixture(Box::new(MixtureState::new(c)?)),
        })
    }
}

pub(crate) enum Tracker {
    Recursive { rule: UpdateRule, state: DetectorState },
    Mixture(Box<MixtureState>),
}

impl Tracker {
    /// Feeds one input and returns the log statistic.
    #[inline]
    pub(crate) fn push(&mut self, input: f64) -> Result<f64> {
        match self {
            Tracker::Recursive { rule, state } => {
                if input.is_nan() || input == f64::INFINITY {
                    return Err(Error::InvalidRatio(input.exp()));
                }
                Ok(state.update_log(*rule, input))
            }
            Tracker::Mixture(state) => {
                check_score(input)?;
                Ok(state.push_unchecked(input))
            }
        }
    }
}

/// Source of detector inputs for simulated streams.
///
/// `draw` returns the input for observation `t` (1-based) of a stream that is
/// entirely in `regime`: a log likelihood ratio for recursive detectors, a
/// score for the mixture detector.
pub trait StreamSampler: Sync {
    fn draw(&self, regime: Regime, t: u64, rng: &mut SimRng) -> f64;
}

impl<F> StreamSampler for F
where
    F: Fn(Regime, u64, &mut SimRng) -> f64 + Sync,
{
    #[inline]
    fn draw(&self, regime: Regime, t: u64, rng: &mut SimRng) -> f64 {
        self(regime, t, rng)
    }
}

/// Replication budget shared by estimation and calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub n_reps: u64,
    pub cap: u64,
    pub seed: u64,
    pub execution: Execution,
}

impl McSettings {
    pub fn new(n_reps: u64, cap: u64, seed: u64) -> Self {
        Self { n_reps, cap, seed, execution: Execution::default() }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_reps < 2 {
            return Err(invalid(format!("need at least 2 replications, got {}", self.n_reps)));
        }
        if self.cap == 0 {
            return Err(invalid("cap must be at least 1"));
        }
        Ok(())
    }
}

/// Default truncation for ARL runs: 20 × the target.
pub fn default_arl_cap(target_arl: f64) -> u64 {
    (20.0 * target_arl).ceil().max(1.0) as u64
}

/// Mean stopping time over replications in one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunLengthEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
    pub censored: u64,
    pub cap: u64,
}

impl RunLengthEstimate {
    /// Mean and standard error of `times`, with censored runs entered at the cap.
    pub fn from_times(times: &[u64], censored: u64, cap: u64) -> Result<Self> {
        let n = times.len();
        if n < 2 {
            return Err(invalid("need at least 2 replications"));
        }
        if censored as usize == n {
            return Err(Error::AllCensored(n));
        }
        let nf = n as f64;
        let mean = compensated_sum(times.iter().map(|&t| t as f64)) / nf;
        let ss = compensated_sum(times.iter().map(|&t| (t as f64 - mean).powi(2)));
        let se = (ss / (nf - 1.0) / nf).sqrt();
        Ok(Self { mean, se, n: n as u64, censored, cap })
    }
}

/// ARL and ADD estimates. Fields of a regime that was not simulated are NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub arl_estimate: f64,
    pub arl_se: f64,
    pub add_estimate: f64,
    pub add_se: f64,
    pub n_replications: u64,
    pub n_censored: u64,
    pub cap: u64,
}

impl OperatingCharacteristics {
    pub fn from_estimate(regime: Regime, est: &RunLengthEstimate) -> Self {
        let mut oc = Self {
            arl_estimate: f64::NAN,
            arl_se: f64::NAN,
            add_estimate: f64::NAN,
            add_se: f64::NAN,
            n_replications: est.n,
            n_censored: est.censored,
            cap: est.cap,
        };
        match regime {
            Regime::Pre => {
                oc.arl_estimate = est.mean;
                oc.arl_se = est.se;
            }
            Regime::Post => {
                oc.add_estimate = est.mean;
                oc.add_se = est.se;
            }
        }
        oc
    }

    /// Pairs a pre-change and a post-change estimate. Counts are totals over
    /// both regimes; `cap` is the larger of the two.
    pub fn combine(arl: &RunLengthEstimate, add: &RunLengthEstimate) -> Self {
        Self {
            arl_estimate: arl.mean,
            arl_se: arl.se,
            add_estimate: add.mean,
            add_se: add.se,
            n_replications: arl.n + add.n,
            n_censored: arl.censored + add.censored,
            cap: arl.cap.max(add.cap),
        }
    }
}

/// Runs one replication; returns the stopping time (or `cap`) and whether it
/// was censored.
pub(crate) fn run_replication<S: StreamSampler + ?Sized>(
    spec: &DetectorSpec,
    sampler: &S,
    regime: Regime,
    rng: &mut SimRng,
    cap: u64,
) -> Result<(u64, bool)> {
    let log_a = spec.log_threshold();
    let mut tracker = spec.tracker()?;
    for t in 1..=cap {
        let s = tracker.push(sampler.draw(regime, t, rng))?;
        if s >= log_a {
            return Ok((t, false));
        }
    }
    Ok((cap, true))
}

/// Stopping times of every replication, in replication order.
pub fn simulate_stopping_times<S: StreamSampler + ?Sized>(
    spec: &DetectorSpec,
    sampler: &S,
    regime: Regime,
    settings: &McSettings,
) -> Result<Vec<(u64, bool)>> {
    settings.validate()?;
    spec.tracker()?;
    settings
        .execution
        .map(settings.n_reps, |r| {
            let mut rng = replication_rng(settings.seed, r);
            run_replication(spec, sampler, regime, &mut rng, settings.cap)
        })
        .into_iter()
        .collect()
}

/// Monte Carlo estimate of `E∞[T]` (pre regime) or `E0[T]` (post regime,
/// changepoint at 0).
pub fn estimate_run_length<S: StreamSampler + ?Sized>(
    spec: &DetectorSpec,
    sampler: &S,
    regime: Regime,
    settings: &McSettings,
) -> Result<RunLengthEstimate> {
    let runs = simulate_stopping_times(spec, sampler, regime, settings)?;
    let censored = runs.iter().filter(|r| r.1).count() as u64;
    let times: Vec<u64> = runs.iter().map(|r| r.0).collect();
    RunLengthEstimate::from_times(&times, censored, settings.cap)
}

/// [`estimate_run_length`] packaged into the regime's fields.
pub fn estimate_oc<S: StreamSampler + ?Sized>(
    spec: &DetectorSpec,
    sampler: &S,
    regime: Regime,
    settings: &McSettings,
) -> Result<OperatingCharacteristics> {
    let est = estimate_run_length(spec, sampler, regime, settings)?;
    Ok(OperatingCharacteristics::from_estimate(regime, &est))
}

/// Running-maximum records of one simulated statistic path.
///
/// The first passage above any level up to the simulated limit can be read
/// off the records, so one simulation serves every threshold below it.
#[derive(Debug, Clone, Default)]
pub(crate) struct Records {
    times: Vec<u64>,
    values: Vec<f64>,
}

impl Records {
    pub(crate) fn simulate<S: StreamSampler + ?Sized>(
        spec: &DetectorSpec,
        sampler: &S,
        regime: Regime,
        rng: &mut SimRng,
        log_limit: f64,
        cap: u64,
    ) -> Result<Self> {
        let mut tracker = spec.tracker()?;
        let mut rec = Records::default();
        let mut best = f64::NEG_INFINITY;
        for t in 1..=cap {
            let s = tracker.push(sampler.draw(regime, t, rng))?;
            if s > best {
                best = s;
                rec.times.push(t);
                rec.values.push(s);
                if s >= log_limit {
                    break;
                }
            }
        }
        Ok(rec)
    }

    /// First passage time to `log_a`, or `(cap, true)` when the path never
    /// got there. Only meaningful for `log_a` up to the simulated limit.
    #[inline]
    pub(crate) fn passage(&self, log_a: f64, cap: u64) -> (u64, bool) {
        let i = self.values.partition_point(|&v| v < log_a);
        match self.times.get(i) {
            Some(&t) => (t, false),
            None => (cap, true),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_sampler(mu: f64) -> impl Fn(Regime, u64, &mut SimRng) -> f64 + Sync {
        move |regime, _t, rng| {
            let z: f64 = rng.sample(StandardNormal);
            let x = match regime {
                Regime::Pre => z,
                Regime::Post => z + mu,
            };
            mu * x - 0.5 * mu * mu
        }
    }

    #[test]
    fn immediate_stop_gives_unit_arl() {
        let spec = DetectorSpec::Recursive(DetectorConfig::cusum(1.5).unwrap());
        let sampler = |_: Regime, _: u64, _: &mut SimRng| 1.0f64;
        let oc = estimate_oc(&spec, &sampler, Regime::Pre, &McSettings::new(50, 100, 1)).unwrap();
        assert_eq!(oc.arl_estimate, 1.0);
        assert_eq!(oc.arl_se, 0.0);
        assert!(oc.add_estimate.is_nan());
        assert_eq!(oc.n_censored, 0);
    }

    #[test]
    fn all_censored_is_an_error() {
        let spec = DetectorSpec::Recursive(DetectorConfig::cusum(10.0).unwrap());
        let sampler = |_: Regime, _: u64, _: &mut SimRng| 0.0f64;
        let err = estimate_oc(&spec, &sampler, Regime::Pre, &McSettings::new(5, 20, 1)).unwrap_err();
        assert_eq!(err, Error::AllCensored(5));
    }

    #[test]
    fn settings_are_validated() {
        let spec = DetectorSpec::Recursive(DetectorConfig::cusum(10.0).unwrap());
        let s = gaussian_sampler(1.0);
        assert!(estimate_oc(&spec, &s, Regime::Pre, &McSettings::new(1, 20, 1)).is_err());
        assert!(estimate_oc(&spec, &s, Regime::Pre, &McSettings::new(5, 0, 1)).is_err());
    }

    #[test]
    fn bad_inputs_surface_as_errors() {
        let spec = DetectorSpec::Recursive(DetectorConfig::cusum(10.0).unwrap());
        let nan = |_: Regime, _: u64, _: &mut SimRng| f64::NAN;
        assert!(estimate_oc(&spec, &nan, Regime::Pre, &McSettings::new(3, 20, 1)).is_err());
        let mix = DetectorSpec::Mixture(MixtureConfig::uniform(0.6, 0.8, 0.3, 50.0));
        let out = |_: Regime, _: u64, _: &mut SimRng| 1.5;
        assert!(matches!(
            estimate_oc(&mix, &out, Regime::Pre, &McSettings::new(3, 20, 1)),
            Err(Error::ScoreOutOfRange(_))
        ));
    }

    #[test]
    fn deterministic_across_schedulers() {
        let spec = DetectorSpec::Recursive(DetectorConfig::cusum(20.0).unwrap());
        let s = gaussian_sampler(1.0);
        let base = McSettings::new(400, 10_000, 99);
        let a = estimate_oc(&spec, &s, Regime::Pre, &base.with_execution(Execution::Sequential)).unwrap();
        let b = estimate_oc(&spec, &s, Regime::Pre, &base.with_execution(Execution::Parallel)).unwrap();
        let c = estimate_oc(&spec, &s, Regime::Pre, &base.with_execution(Execution::Parallel)).unwrap();
        assert_eq!(a.arl_estimate.to_bits(), b.arl_estimate.to_bits());
        assert_eq!(a.arl_se.to_bits(), b.arl_se.to_bits());
        assert_eq!(format!("{b:?}"), format!("{c:?}"));
    }

    #[test]
    fn records_reproduce_direct_runs() {
        let s = gaussian_sampler(0.8);
        let spec = DetectorSpec::Recursive(DetectorConfig::cusum(2.0).unwrap());
        for r in 0..50 {
            let mut rng = replication_rng(5, r);
            let rec = Records::simulate(&spec, &s, Regime::Pre, &mut rng, 4.0, 5_000).unwrap();
            for log_a in [0.2, 1.0, 2.5, 4.0] {
                let direct_spec = spec.with_threshold(f64::exp(log_a)).unwrap();
                let mut rng = replication_rng(5, r);
                let direct = run_replication(&direct_spec, &s, Regime::Pre, &mut rng, 5_000).unwrap();
                assert_eq!(rec.passage(log_a, 5_000), direct);
            }
        }
    }

    #[test]
    fn combined_counts() {
        let a = RunLengthEstimate::from_times(&[10, 20, 30], 1, 30).unwrap();
        let b = RunLengthEstimate::from_times(&[1, 3], 0, 100).unwrap();
        let oc = OperatingCharacteristics::combine(&a, &b);
        assert_eq!(oc.arl_estimate, 20.0);
        assert_eq!(oc.add_estimate, 2.0);
        assert_eq!((oc.n_replications, oc.n_censored, oc.cap), (5, 1, 100));
        assert!((a.se - 10.0 / 3f64.sqrt()).abs() < 1e-12);
    }
}
