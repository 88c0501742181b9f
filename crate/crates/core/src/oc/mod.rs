// SPDX-License-Identifier: MIT OR Apache-2.0

//! Operating characteristics: Monte Carlo estimation and calibration, plus
//! two deterministic oracles (the renewal integral equation and the exact
//! binary-label chain).

pub mod calibrate;
pub mod chain;
pub mod fredholm;
pub mod montecarlo;
pub mod report;

pub use calibrate::{calibrate_threshold, CalibrationResult, DEFAULT_TOL_REL, THRESHOLD_BRACKET};
pub use chain::{bernoulli_exact_ect, hit_probability, BinaryChainSpec, ExpectedTime};
pub use fredholm::{fredholm_expected_stopping, fredholm_solve, gaussian_shift_lr_density, FredholmProblem, FredholmSolution};
pub use montecarlo::{
    default_arl_cap, estimate_oc, estimate_run_length, simulate_stopping_times, DetectorSpec, McSettings,
    OperatingCharacteristics, RunLengthEstimate, StreamSampler,
};
pub use report::{relative_comparison_report, ComparisonReport, ReportRow};
