// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sequential changepoint detection for classifier scores under label shift.
//!
//! A classifier trained on pre-change data gives a score `s ≈ P∞(Y = 1 | x)`.
//! When only the class prevalence moves (from `π∞` to `π0`), the marginal
//! likelihood ratio is affine in `s`, so the score alone drives CUSUM,
//! Shiryaev-Roberts or a window-limited mixture over unknown `π0`.
//!
//! ```
//! use lsdetect::{label_shift_ratio, run_detector, DetectorConfig, LabelShiftPriors};
//!
//! let priors = LabelShiftPriors::new(0.4, 0.7)?;
//! let lrs = [0.9, 0.95, 0.9, 0.99]
//!     .iter()
//!     .map(|&s| label_shift_ratio(s, &priors))
//!     .collect::<Result<Vec<_>, _>>()?;
//! let run = run_detector(&DetectorConfig::cusum(3.0)?, lrs, 1_000, false)?;
//! assert!(run.stopped);
//! # Ok::<(), lsdetect::Error>(())
//! ```

use serde::{Deserialize, Serialize};

pub mod classifiers;
pub mod detector;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod mixture;
pub mod oc;
pub mod quadrature;
pub mod ratio;
pub mod simgen;

pub use classifiers::{
    binarize, fit_kde_classifier, fit_lda, fit_qda, kde_score, lda_score, qda_score, BandwidthRule, Classifier,
    KdeClassifier, LabeledSample, LdaModel, QdaModel,
};
pub use detector::{run_detector, DetectorConfig, DetectorState, RunResult, UpdateRule};
pub use error::{Error, Result};
pub use exec::Execution;
pub use mixture::{run_mixture_detector, update_mixture, MixtureConfig, MixtureState, MixtureWeight};
pub use ratio::{
    binary_label_ratio, fit_gaussian_mean, gaussian_shift_ratio, label_shift_ratio, ClassifierRatio,
    GaussianShiftModel, LabelShiftPriors, RatioModel, ScoreRatioModel,
};

/// Which side of the changepoint an observation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Pre,
    Post,
}
