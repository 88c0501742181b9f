// SPDX-License-Identifier: MIT OR Apache-2.0

//! Likelihood-ratio models fed to the detectors.
//!
//! Under label shift the marginal density ratio is affine in the pre-change
//! posterior `P∞(Y = 1 | x)`, so any calibrated classifier score `s` gives
//!
//! ```text
//! λ̂(s) = (π0/π∞ − (1−π0)/(1−π∞)) · s + (1−π0)/(1−π∞)
//! ```

use serde::{Deserialize, Serialize};

use crate::classifiers::Classifier;
use crate::error::{invalid, Error, Result};

/// Evaluates a (possibly estimated) likelihood ratio for one observation.
pub trait RatioModel<X: ?Sized> {
    fn ratio(&self, x: &X) -> Result<f64>;

    fn log_ratio(&self, x: &X) -> Result<f64> {
        self.ratio(x).map(f64::ln)
    }
}

/// Pre-change and post-change class-1 prevalences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelShiftPriors {
    pub pi_inf: f64,
    pub pi_0: f64,
}

impl LabelShiftPriors {
    pub fn new(pi_inf: f64, pi_0: f64) -> Result<Self> {
        for (name, p) in [("pi_inf", pi_inf), ("pi_0", pi_0)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        Ok(Self { pi_inf, pi_0 })
    }

    pub fn slope(&self) -> f64 {
        self.pi_0 / self.pi_inf - (1.0 - self.pi_0) / (1.0 - self.pi_inf)
    }

    pub fn intercept(&self) -> f64 {
        (1.0 - self.pi_0) / (1.0 - self.pi_inf)
    }
}

/// Score-form ratio with the slope and intercept precomputed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRatioModel {
    pub priors: LabelShiftPriors,
    slope: f64,
    intercept: f64,
}

impl ScoreRatioModel {
    pub fn new(priors: LabelShiftPriors) -> Self {
        Self { priors, slope: priors.slope(), intercept: priors.intercept() }
    }

    /// `slope · score + intercept`, no validation.
    #[inline]
    pub fn eval(&self, score: f64) -> f64 {
        self.slope * score + self.intercept
    }
}

impl RatioModel<f64> for ScoreRatioModel {
    fn ratio(&self, score: &f64) -> Result<f64> {
        check_score(*score)?;
        Ok(self.eval(*score))
    }
}

pub(crate) fn check_score(score: f64) -> Result<()> {
    if (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(Error::ScoreOutOfRange(score))
    }
}

/// Estimated likelihood ratio from a classifier score in `[0, 1]`.
pub fn label_shift_ratio(score: f64, priors: &LabelShiftPriors) -> Result<f64> {
    ScoreRatioModel::new(*priors).ratio(&score)
}

/// Ratio for an observed (or predicted) binary label.
pub fn binary_label_ratio(label: u8, priors: &LabelShiftPriors) -> Result<f64> {
    match label {
        0 | 1 => label_shift_ratio(f64::from(label), priors),
        _ => Err(invalid(format!("label must be 0 or 1, got {label}"))),
    }
}

/// Unit-variance mean shift from `N(0, 1)` to `N(μ̂, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianShiftModel {
    pub mu_hat: f64,
}

impl GaussianShiftModel {
    #[inline]
    pub fn log_eval(&self, x: f64) -> f64 {
        self.mu_hat * x - 0.5 * self.mu_hat * self.mu_hat
    }
}

impl RatioModel<f64> for GaussianShiftModel {
    fn ratio(&self, x: &f64) -> Result<f64> {
        Ok(gaussian_shift_ratio(*x, self))
    }

    fn log_ratio(&self, x: &f64) -> Result<f64> {
        Ok(self.log_eval(*x))
    }
}

/// `exp(μ̂x − μ̂²/2)`.
pub fn gaussian_shift_ratio(x: f64, model: &GaussianShiftModel) -> f64 {
    model.log_eval(x).exp()
}

/// Estimates the post-change mean by the sample mean of `train`.
pub fn fit_gaussian_mean(train: &[f64]) -> Result<GaussianShiftModel> {
    if train.is_empty() {
        return Err(invalid("training sample is empty"));
    }
    let mu_hat = train.iter().sum::<f64>() / train.len() as f64;
    Ok(GaussianShiftModel { mu_hat })
}

/// Plugs a classifier's scores into the label-shift ratio.
#[derive(Debug, Clone)]
pub struct ClassifierRatio<C> {
    pub classifier: C,
    pub model: ScoreRatioModel,
}

impl<C: Classifier> ClassifierRatio<C> {
    pub fn new(classifier: C, priors: LabelShiftPriors) -> Self {
        Self { classifier, model: ScoreRatioModel::new(priors) }
    }
}

impl<C: Classifier> RatioModel<[f64]> for ClassifierRatio<C> {
    fn ratio(&self, x: &[f64]) -> Result<f64> {
        let s = self.classifier.score(x)?;
        self.model.ratio(&s)
    }
}
