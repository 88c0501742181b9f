// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probabilistic classifiers trained on pre-change labeled data.
//!
//! Every classifier reports `A(x) ∈ [0, 1]`, an estimate of `P∞(Y = 1 | x)`
//! with the pre-change prevalence `π∞` supplied by the caller. Scores are
//! computed from log-odds and mapped through a stable logistic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One training observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: u8,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: u8) -> Self {
        Self { x, y }
    }
}

/// A fitted scorer.
pub trait Classifier: Send + Sync {
    fn dim(&self) -> usize;

    /// Log-odds `log A(x) − log(1 − A(x))`.
    fn log_odds(&self, x: &[f64]) -> Result<f64>;

    fn score(&self, x: &[f64]) -> Result<f64> {
        self.log_odds(x).map(logistic)
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_odds(&self, x: &[f64]) -> Result<f64> {
        (**self).log_odds(x)
    }
    fn score(&self, x: &[f64]) -> Result<f64> {
        (**self).score(x)
    }
}

/// `1 / (1 + e^{-z})` without overflow.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Hard label from a score; ties go to class 1.
pub fn binarize(score: f64, threshold: f64) -> u8 {
    u8::from(score >= threshold)
}

/// Fraction of class-1 labels. Only used when π∞ is not supplied directly.
pub fn estimate_prevalence(train: &[LabeledSample]) -> Result<f64> {
    if train.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let ones = train.iter().filter(|s| s.y == 1).count();
    Ok(ones as f64 / train.len() as f64)
}

fn check_prior(pi_inf: f64) -> Result<()> {
    if pi_inf > 0.0 && pi_inf < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("pi_inf must lie in (0, 1), got {pi_inf}")))
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Splits the training set by class, checking labels and dimensions.
fn split_classes(train: &[LabeledSample]) -> Result<(usize, Vec<&[f64]>, Vec<&[f64]>)> {
    let d = train.first().ok_or_else(|| invalid("training set is empty"))?.x.len();
    if d == 0 {
        return Err(invalid("feature dimension is zero"));
    }
    let mut c0 = Vec::new();
    let mut c1 = Vec::new();
    for (i, s) in train.iter().enumerate() {
        if s.x.len() != d {
            return Err(invalid(format!("sample {i} has dimension {}, expected {d}", s.x.len())));
        }
        match s.y {
            0 => c0.push(s.x.as_slice()),
            1 => c1.push(s.x.as_slice()),
            y => return Err(invalid(format!("sample {i} has label {y}, expected 0 or 1"))),
        }
    }
    if c0.is_empty() || c1.is_empty() {
        return Err(invalid("both classes must be present in the training set"));
    }
    Ok((d, c0, c1))
}

fn mean(points: &[&[f64]], d: usize) -> DVector<f64> {
    let mut m = DVector::zeros(d);
    for p in points {
        for j in 0..d {
            m[j] += p[j];
        }
    }
    m / points.len() as f64
}

/// Sum of outer products of deviations from `mu`.
fn scatter(points: &[&[f64]], mu: &DVector<f64>) -> DMatrix<f64> {
    let d = mu.len();
    let mut s = DMatrix::zeros(d, d);
    let mut dev = DVector::zeros(d);
    for p in points {
        for j in 0..d {
            dev[j] = p[j] - mu[j];
        }
        s.ger(1.0, &dev, &dev, 1.0);
    }
    s
}

fn factor(sigma: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let d = sigma.nrows();
    let sym = (&sigma - sigma.transpose()).abs().max();
    if sym > 1e-10 * (1.0 + sigma.abs().max()) {
        return Err(invalid(format!("{what} is not symmetric")));
    }
    let chol = Cholesky::new(sigma).ok_or_else(|| {
        Error::SingularCovariance(format!(
            "{what} ({d}x{d}) is not positive definite; add ridge regularization or more training data"
        ))
    })?;
    let l = chol.l_dirty();
    let diag_min = (0..d).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    let diag_max = (0..d).map(|i| l[(i, i)]).fold(0.0, f64::max);
    if diag_min <= diag_max * 1e-8 {
        return Err(Error::SingularCovariance(format!(
            "{what} is numerically singular; add ridge regularization or more training data"
        )));
    }
    Ok(chol)
}

fn add_ridge(sigma: &mut DMatrix<f64>, ridge: f64) {
    if ridge > 0.0 {
        for i in 0..sigma.nrows() {
            sigma[(i, i)] += ridge;
        }
    }
}

/// Linear discriminant analysis with a pooled covariance.
#[derive(Debug, Clone)]
pub struct LdaModel {
    pub mu0: DVector<f64>,
    pub mu1: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub pi_inf: f64,
    // log-odds = intercept + coef · x
    coef: Vec<f64>,
    intercept: f64,
}

impl LdaModel {
    pub fn from_parameters(
        mu0: DVector<f64>,
        mu1: DVector<f64>,
        sigma: DMatrix<f64>,
        pi_inf: f64,
    ) -> Result<Self> {
        check_prior(pi_inf)?;
        let d = mu0.len();
        check_dim(d, mu1.len())?;
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: sigma.nrows() });
        }
        let chol = factor(sigma.clone(), "pooled covariance")?;
        let diff = &mu1 - &mu0;
        let coef = chol.solve(&diff);
        let sum = &mu1 + &mu0;
        let intercept = (pi_inf / (1.0 - pi_inf)).ln() - 0.5 * coef.dot(&sum);
        Ok(Self { mu0, mu1, sigma, pi_inf, coef: coef.as_slice().to_vec(), intercept })
    }

    /// Discriminant direction `Σ⁻¹(μ1 − μ0)`.
    pub fn direction(&self) -> &[f64] {
        &self.coef
    }
}

impl Classifier for LdaModel {
    fn dim(&self) -> usize {
        self.coef.len()
    }

    #[inline]
    fn log_odds(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.coef.len(), x.len())?;
        Ok(self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>())
    }
}

/// Fits LDA: per-class means and pooled covariance with denominator `m − 2`.
pub fn fit_lda(train: &[LabeledSample], pi_inf: f64) -> Result<LdaModel> {
    fit_lda_ridge(train, pi_inf, 0.0)
}

/// As [`fit_lda`] with `ridge · I` added to the pooled covariance.
pub fn fit_lda_ridge(train: &[LabeledSample], pi_inf: f64, ridge: f64) -> Result<LdaModel> {
    check_prior(pi_inf)?;
    let (d, c0, c1) = split_classes(train)?;
    let m = train.len();
    if m <= 2 {
        return Err(invalid("LDA needs at least 3 training samples"));
    }
    let mu0 = mean(&c0, d);
    let mu1 = mean(&c1, d);
    let mut sigma = (scatter(&c0, &mu0) + scatter(&c1, &mu1)) / (m - 2) as f64;
    add_ridge(&mut sigma, ridge);
    LdaModel::from_parameters(mu0, mu1, sigma, pi_inf)
}

/// Quadratic discriminant analysis with per-class covariances.
#[derive(Debug, Clone)]
pub struct QdaModel {
    pub mu0: DVector<f64>,
    pub mu1: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
    pub pi_inf: f64,
    l0: DMatrix<f64>,
    l1: DMatrix<f64>,
    // log prior odds + half log-determinant difference
    offset: f64,
}

impl QdaModel {
    pub fn from_parameters(
        mu0: DVector<f64>,
        mu1: DVector<f64>,
        sigma0: DMatrix<f64>,
        sigma1: DMatrix<f64>,
        pi_inf: f64,
    ) -> Result<Self> {
        check_prior(pi_inf)?;
        let d = mu0.len();
        check_dim(d, mu1.len())?;
        for s in [&sigma0, &sigma1] {
            if s.nrows() != d || s.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: s.nrows() });
            }
        }
        let l0 = factor(sigma0.clone(), "class-0 covariance")?.unpack();
        let l1 = factor(sigma1.clone(), "class-1 covariance")?.unpack();
        let logdet = |l: &DMatrix<f64>| 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        let offset = (pi_inf / (1.0 - pi_inf)).ln() - 0.5 * (logdet(&l1) - logdet(&l0));
        Ok(Self { mu0, mu1, sigma0, sigma1, pi_inf, l0, l1, offset })
    }
}

/// `(x − μ)ᵀ Σ⁻¹ (x − μ)` from the lower Cholesky factor of `Σ`.
fn mahalanobis_sq(l: &DMatrix<f64>, mu: &DVector<f64>, x: &[f64]) -> f64 {
    let d = mu.len();
    let mut z = vec![0.0; d];
    let mut acc = 0.0;
    for i in 0..d {
        let mut v = x[i] - mu[i];
        for k in 0..i {
            v -= l[(i, k)] * z[k];
        }
        z[i] = v / l[(i, i)];
        acc += z[i] * z[i];
    }
    acc
}

impl Classifier for QdaModel {
    fn dim(&self) -> usize {
        self.mu0.len()
    }

    fn log_odds(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.mu0.len(), x.len())?;
        let q1 = mahalanobis_sq(&self.l1, &self.mu1, x);
        let q0 = mahalanobis_sq(&self.l0, &self.mu0, x);
        Ok(self.offset - 0.5 * (q1 - q0))
    }
}

/// Fits QDA: per-class means and covariances with denominator `m_c − 1`.
pub fn fit_qda(train: &[LabeledSample], pi_inf: f64) -> Result<QdaModel> {
    fit_qda_ridge(train, pi_inf, 0.0)
}

pub fn fit_qda_ridge(train: &[LabeledSample], pi_inf: f64, ridge: f64) -> Result<QdaModel> {
    check_prior(pi_inf)?;
    let (d, c0, c1) = split_classes(train)?;
    if c0.len() < 2 || c1.len() < 2 {
        return Err(invalid("QDA needs at least 2 samples per class"));
    }
    let mu0 = mean(&c0, d);
    let mu1 = mean(&c1, d);
    let mut s0 = scatter(&c0, &mu0) / (c0.len() - 1) as f64;
    let mut s1 = scatter(&c1, &mu1) / (c1.len() - 1) as f64;
    add_ridge(&mut s0, ridge);
    add_ridge(&mut s1, ridge);
    QdaModel::from_parameters(mu0, mu1, s0, s1, pi_inf)
}

/// How kernel bandwidths are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BandwidthRule {
    /// Silverman's rule per class and per dimension:
    /// `h_j = σ_j · (4 / ((d + 2) n))^{1/(d + 4)}`.
    Silverman,
    /// Same bandwidth for every class and dimension.
    Fixed(f64),
}

/// Gaussian product-kernel density estimate per class.
#[derive(Debug, Clone)]
pub struct KdeClassifier {
    pub class0_points: Vec<Vec<f64>>,
    pub class1_points: Vec<Vec<f64>>,
    pub bandwidth0: Vec<f64>,
    pub bandwidth1: Vec<f64>,
    pub pi_inf: f64,
}

fn silverman(points: &[&[f64]], d: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if n < 2 {
        return Err(invalid("Silverman bandwidth needs at least 2 points per class"));
    }
    let mu = mean(points, d);
    let factor = (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|j| {
            let var = points.iter().map(|p| (p[j] - mu[j]).powi(2)).sum::<f64>() / (n - 1) as f64;
            let h = var.sqrt() * factor;
            if h > 0.0 && h.is_finite() {
                Ok(h)
            } else {
                Err(invalid(format!("dimension {j} has zero spread; use a fixed bandwidth")))
            }
        })
        .collect()
}

pub fn fit_kde_classifier(
    train: &[LabeledSample],
    pi_inf: f64,
    rule: BandwidthRule,
) -> Result<KdeClassifier> {
    check_prior(pi_inf)?;
    let (d, c0, c1) = split_classes(train)?;
    let (bandwidth0, bandwidth1) = match rule {
        BandwidthRule::Silverman => (silverman(&c0, d)?, silverman(&c1, d)?),
        BandwidthRule::Fixed(h) => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid(format!("bandwidth must be positive, got {h}")));
            }
            (vec![h; d], vec![h; d])
        }
    };
    Ok(KdeClassifier {
        class0_points: c0.iter().map(|p| p.to_vec()).collect(),
        class1_points: c1.iter().map(|p| p.to_vec()).collect(),
        bandwidth0,
        bandwidth1,
        pi_inf,
    })
}

fn kde_log_density(points: &[Vec<f64>], h: &[f64], x: &[f64]) -> f64 {
    let norm: f64 = h.iter().map(|hj| (hj * (2.0 * std::f64::consts::PI).sqrt()).ln()).sum();
    let exps: Vec<f64> = points
        .iter()
        .map(|p| {
            -0.5 * p
                .iter()
                .zip(x)
                .zip(h)
                .map(|((pj, xj), hj)| ((xj - pj) / hj).powi(2))
                .sum::<f64>()
        })
        .collect();
    let mx = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return f64::NEG_INFINITY;
    }
    let s: f64 = exps.iter().map(|e| (e - mx).exp()).sum();
    mx + s.ln() - (points.len() as f64).ln() - norm
}

impl KdeClassifier {
    /// Log odds, or `None` when both class densities underflow at `x`.
    fn log_odds_checked(&self, x: &[f64]) -> Result<Option<f64>> {
        check_dim(self.bandwidth0.len(), x.len())?;
        let l1 = kde_log_density(&self.class1_points, &self.bandwidth1, x);
        let l0 = kde_log_density(&self.class0_points, &self.bandwidth0, x);
        if l1 == f64::NEG_INFINITY && l0 == f64::NEG_INFINITY {
            return Ok(None);
        }
        Ok(Some((self.pi_inf / (1.0 - self.pi_inf)).ln() + l1 - l0))
    }

    /// Score plus a flag set when both class densities underflowed and the
    /// prior `π∞` was returned instead.
    pub fn score_with_flag(&self, x: &[f64]) -> Result<(f64, bool)> {
        Ok(match self.log_odds_checked(x)? {
            Some(z) => (logistic(z), false),
            None => (self.pi_inf, true),
        })
    }
}

impl Classifier for KdeClassifier {
    fn dim(&self) -> usize {
        self.bandwidth0.len()
    }

    fn log_odds(&self, x: &[f64]) -> Result<f64> {
        let prior = (self.pi_inf / (1.0 - self.pi_inf)).ln();
        Ok(self.log_odds_checked(x)?.unwrap_or(prior))
    }

    fn score(&self, x: &[f64]) -> Result<f64> {
        self.score_with_flag(x).map(|(s, _)| s)
    }
}

/// Convenience wrappers with the operation names used in the docs.
pub fn lda_score(model: &LdaModel, x: &[f64]) -> Result<f64> {
    model.score(x)
}

pub fn qda_score(model: &QdaModel, x: &[f64]) -> Result<f64> {
    model.score(x)
}

pub fn kde_score(model: &KdeClassifier, x: &[f64]) -> Result<f64> {
    model.score(x)
}

/// Sensitivity and specificity of `binarize(score, threshold)` against labels.
pub fn sensitivity_specificity(scores: &[f64], labels: &[u8], threshold: f64) -> (f64, f64) {
    let (mut tp, mut p, mut tn, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        let pred = binarize(s, threshold);
        if y == 1 {
            p += 1;
            tp += usize::from(pred == 1);
        } else {
            n += 1;
            tn += usize::from(pred == 0);
        }
    }
    (tp as f64 / p.max(1) as f64, tn as f64 / n.max(1) as f64)
}
