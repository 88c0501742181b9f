// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reproducible Gaussian-mixture streams with a changepoint.
//!
//! Streams are driven by ChaCha8 seeded from a `u64`, so a given seed yields the
//! same draws on every platform and under any thread count. Multivariate normals
//! are drawn as `μ + L z` with `L` the lower Cholesky factor.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifiers::LabeledSample;
use crate::error::{invalid, Error, Result};
use crate::Regime;

pub type SimRng = ChaCha8Rng;

/// RNG for replication `r` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, r: u64) -> SimRng {
    SimRng::seed_from_u64(seed.wrapping_add(r))
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One multivariate normal class-conditional density.
#[derive(Debug, Clone)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    // lower Cholesky factor, row-major
    chol: Vec<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(invalid("mean vector is empty"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
        }
        if (&cov - cov.transpose()).abs().max() > 1e-12 * (1.0 + cov.abs().max()) {
            return Err(invalid("covariance is not symmetric"));
        }
        let l = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::SingularCovariance("covariance is not positive definite".into()))?
            .unpack();
        let mut chol = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                chol[i * d + j] = l[(i, j)];
            }
        }
        let log_det_half: f64 = (0..d).map(|i| l[(i, i)].ln()).sum();
        let log_norm = -0.5 * d as f64 * LN_2PI - log_det_half;
        Ok(Self { mean, cov, chol, log_norm })
    }

    /// `N(mean, I)`.
    pub fn isotropic(mean: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.mean.len();
        let mut z = [0.0f64; 16];
        let mut zv;
        let z: &mut [f64] = if d <= 16 {
            &mut z[..d]
        } else {
            zv = vec![0.0; d];
            &mut zv
        };
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i + 1];
            out[i] = self.mean[i] + row.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut z = [0.0f64; 16];
        let mut zv;
        let z: &mut [f64] = if d <= 16 {
            &mut z[..d]
        } else {
            zv = vec![0.0; d];
            &mut zv
        };
        let mut q = 0.0;
        for i in 0..d {
            let mut v = x[i] - self.mean[i];
            for k in 0..i {
                v -= self.chol[i * d + k] * z[k];
            }
            z[i] = v / self.chol[i * d + i];
            q += z[i] * z[i];
        }
        self.log_norm - 0.5 * q
    }

    fn same_as(&self, other: &Gaussian) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

/// `prevalence · N(μ1, Σ1) + (1 − prevalence) · N(μ0, Σ0)`.
#[derive(Debug, Clone)]
pub struct GaussianMixtureSpec {
    pub class0: Gaussian,
    pub class1: Gaussian,
    pub prevalence: f64,
}

impl GaussianMixtureSpec {
    pub fn new(class0: Gaussian, class1: Gaussian, prevalence: f64) -> Result<Self> {
        if class0.dim() != class1.dim() {
            return Err(Error::DimensionMismatch { expected: class0.dim(), got: class1.dim() });
        }
        if !(prevalence > 0.0 && prevalence < 1.0) {
            return Err(invalid(format!("prevalence must lie in (0, 1), got {prevalence}")));
        }
        Ok(Self { class0, class1, prevalence })
    }

    pub fn dim(&self) -> usize {
        self.class0.dim()
    }

    pub fn with_prevalence(&self, prevalence: f64) -> Result<Self> {
        Self::new(self.class0.clone(), self.class1.clone(), prevalence)
    }

    /// Draws a label, then `x` from that class. Returns the label.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> u8 {
        sample_at(&self.class0, &self.class1, self.prevalence, rng, out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledSample {
        let mut x = vec![0.0; self.dim()];
        let y = self.sample_into(rng, &mut x);
        LabeledSample { x, y }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_add(
            self.prevalence.ln() + self.class1.log_density(x),
            (1.0 - self.prevalence).ln() + self.class0.log_density(x),
        )
    }

    /// Exact posterior `P(Y = 1 | x)` under this mixture.
    pub fn posterior(&self, x: &[f64]) -> f64 {
        let z = (self.prevalence / (1.0 - self.prevalence)).ln() + self.class1.log_density(x)
            - self.class0.log_density(x);
        crate::classifiers::logistic(z)
    }
}

fn sample_at<R: Rng + ?Sized>(c0: &Gaussian, c1: &Gaussian, p: f64, rng: &mut R, out: &mut [f64]) -> u8 {
    let y = u8::from(rng.random::<f64>() < p);
    if y == 1 {
        c1.sample_into(rng, out);
    } else {
        c0.sample_into(rng, out);
    }
    y
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// How prevalence moves after the changepoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrevalencePath {
    Abrupt,
    /// Linear interpolation from the pre- to the post-change prevalence over
    /// this many observations, then constant.
    GradualLinear(u64),
}

/// Pre/post mixtures and the changepoint of one stream.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub pre: GaussianMixtureSpec,
    pub post: GaussianMixtureSpec,
    pub path: PrevalencePath,
}

impl Scenario {
    pub fn new(pre: GaussianMixtureSpec, post: GaussianMixtureSpec, path: PrevalencePath) -> Result<Self> {
        if pre.dim() != post.dim() {
            return Err(Error::DimensionMismatch { expected: pre.dim(), got: post.dim() });
        }
        if let PrevalencePath::GradualLinear(0) = path {
            return Err(invalid("gradual path length must be at least 1"));
        }
        Ok(Self { pre, post, path })
    }

    pub fn dim(&self) -> usize {
        self.pre.dim()
    }

    /// Whether pre and post share class conditionals.
    pub fn is_label_shift(&self) -> bool {
        self.pre.class0.same_as(&self.post.class0) && self.pre.class1.same_as(&self.post.class1)
    }

    /// Prevalence `offset` observations after the changepoint (`offset ≥ 1`).
    pub fn post_prevalence_at(&self, offset: u64) -> f64 {
        match self.path {
            PrevalencePath::Abrupt => self.post.prevalence,
            PrevalencePath::GradualLinear(len) => {
                let frac = (offset as f64 / len as f64).min(1.0);
                self.pre.prevalence + (self.post.prevalence - self.pre.prevalence) * frac
            }
        }
    }

    /// Draws observation `t` (1-based) of a stream with changepoint `nu`.
    pub fn sample_at<R: Rng + ?Sized>(&self, t: u64, nu: u64, rng: &mut R, out: &mut [f64]) -> (u8, Regime) {
        if t <= nu {
            (self.pre.sample_into(rng, out), Regime::Pre)
        } else {
            let p = self.post_prevalence_at(t - nu);
            (sample_at(&self.post.class0, &self.post.class1, p, rng, out), Regime::Post)
        }
    }

    /// Draws from the pre-change (`Regime::Pre`) or fully post-change regime.
    #[inline]
    pub fn sample_regime<R: Rng + ?Sized>(&self, regime: Regime, t: u64, rng: &mut R, out: &mut [f64]) -> u8 {
        match regime {
            Regime::Pre => self.pre.sample_into(rng, out),
            Regime::Post => self.sample_at(t, 0, rng, out).0,
        }
    }
}

/// Full specification of one generated stream.
#[derive(Debug, Clone)]
pub struct StreamSpec {
    pub scenario: Scenario,
    pub changepoint: u64,
    pub length: u64,
    pub seed: u64,
}

impl StreamSpec {
    pub fn new(scenario: Scenario, changepoint: u64, length: u64, seed: u64) -> Result<Self> {
        if changepoint > length {
            return Err(invalid(format!("changepoint {changepoint} exceeds length {length}")));
        }
        Ok(Self { scenario, changepoint, length, seed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPoint {
    pub x: Vec<f64>,
    pub y: u8,
    pub regime: Regime,
}

/// Generates the whole stream; bit-reproducible in `spec.seed`.
pub fn sample_stream(spec: &StreamSpec) -> Vec<StreamPoint> {
    let mut rng = SimRng::seed_from_u64(spec.seed);
    let d = spec.scenario.dim();
    (1..=spec.length)
        .map(|t| {
            let mut x = vec![0.0; d];
            let (y, regime) = spec.scenario.sample_at(t, spec.changepoint, &mut rng, &mut x);
            StreamPoint { x, y, regime }
        })
        .collect()
}

/// `m` iid labeled draws from `spec`.
pub fn sample_training_set(spec: &GaussianMixtureSpec, m: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    if m == 0 {
        return Err(invalid("training set size must be at least 1"));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    Ok((0..m).map(|_| spec.sample(&mut rng)).collect())
}

/// Exact mixture-density ratio `f0(x) / f∞(x)` for a label-shift scenario.
pub fn true_label_shift_lr(x: &[f64], pre: &GaussianMixtureSpec, post: &GaussianMixtureSpec) -> Result<f64> {
    if !(pre.class0.same_as(&post.class0) && pre.class1.same_as(&post.class1)) {
        return Err(invalid("pre and post class conditionals differ; the label-shift ratio does not apply"));
    }
    if x.len() != pre.dim() {
        return Err(Error::DimensionMismatch { expected: pre.dim(), got: x.len() });
    }
    Ok(log_true_lr(x, pre, post).exp())
}

/// `log(f0(x) / f∞(x))` without the label-shift check.
#[inline]
pub fn log_true_lr(x: &[f64], pre: &GaussianMixtureSpec, post: &GaussianMixtureSpec) -> f64 {
    post.log_density(x) - pre.log_density(x)
}

/// Scenario presets addressable by name.
pub mod presets {
    use super::*;

    pub const SCENARIO1_PI_INF: f64 = 0.4;
    pub const SCENARIO1_PI_0: f64 = 0.7;
    pub const DENGUE_PI_INF: f64 = 0.3;
    pub const DENGUE_PI_0: f64 = 0.68;
    pub const DENGUE_GRADUAL_LEN: u64 = 100;
    /// Class-1 mean offset per coordinate for the dengue analogue; gives an
    /// AUC of about 0.8 in two dimensions.
    pub const DENGUE_MEAN_SHIFT: f64 = 0.84;

    /// Class-1 covariance variants `Σ1`.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    pub enum Sigma1 {
        /// `I`
        S1a,
        /// `[[2, 0.1], [0.1, 2]]`
        S1b,
        /// `[[4, 0.5], [0.5, 4]]`
        S1c,
    }

    impl Sigma1 {
        pub fn matrix(self) -> DMatrix<f64> {
            let (v, c) = match self {
                Sigma1::S1a => (1.0, 0.0),
                Sigma1::S1b => (2.0, 0.1),
                Sigma1::S1c => (4.0, 0.5),
            };
            DMatrix::from_row_slice(2, 2, &[v, c, c, v])
        }

        pub fn name(self) -> &'static str {
            match self {
                Sigma1::S1a => "s1a",
                Sigma1::S1b => "s1b",
                Sigma1::S1c => "s1c",
            }
        }

        pub fn parse(s: &str) -> Option<Self> {
            match s {
                "s1a" => Some(Sigma1::S1a),
                "s1b" => Some(Sigma1::S1b),
                "s1c" => Some(Sigma1::S1c),
                _ => None,
            }
        }

        pub const ALL: [Sigma1; 3] = [Sigma1::S1a, Sigma1::S1b, Sigma1::S1c];
    }

    /// Post-change class means `(μ_{0,0}, μ_{0,1})` for the label-shift
    /// violating scenario.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    pub enum PostShift {
        /// `μ00 = [0.5, 0.5]`, `μ01 = [1, 1]`
        Near,
        /// `μ00 = μ01 = [0.75, 0.75]`
        Merged,
        /// `μ00 = [1, 1]`, `μ01 = [0.5, 0.5]`
        Swapped,
    }

    impl PostShift {
        pub fn means(self) -> (f64, f64) {
            match self {
                PostShift::Near => (0.5, 1.0),
                PostShift::Merged => (0.75, 0.75),
                PostShift::Swapped => (1.0, 0.5),
            }
        }

        pub fn name(self) -> &'static str {
            match self {
                PostShift::Near => "near",
                PostShift::Merged => "merged",
                PostShift::Swapped => "swapped",
            }
        }

        pub fn parse(s: &str) -> Option<Self> {
            match s {
                "near" => Some(PostShift::Near),
                "merged" => Some(PostShift::Merged),
                "swapped" => Some(PostShift::Swapped),
                _ => None,
            }
        }

        pub const ALL: [PostShift; 3] = [PostShift::Near, PostShift::Merged, PostShift::Swapped];
    }

    fn mixture(m0: f64, m1: f64, sigma1: DMatrix<f64>, p: f64) -> GaussianMixtureSpec {
        GaussianMixtureSpec::new(
            Gaussian::isotropic(vec![m0, m0]).expect("identity is SPD"),
            Gaussian::new(vec![m1, m1], sigma1).expect("preset covariance is SPD"),
            p,
        )
        .expect("preset prevalence is valid")
    }

    /// Label shift from 0.4 to 0.7 with `μ0 = 0`, `μ1 = [1.5, 1.5]`, `Σ0 = I`.
    pub fn scenario1(sigma1: Sigma1) -> Scenario {
        let pre = mixture(0.0, 1.5, sigma1.matrix(), SCENARIO1_PI_INF);
        let post = pre.with_prevalence(SCENARIO1_PI_0).expect("valid prevalence");
        Scenario::new(pre, post, PrevalencePath::Abrupt).expect("preset is consistent")
    }

    /// Scenario 1 pre-change mixture with the class means moved after the change.
    pub fn scenario2(sigma1: Sigma1, shift: PostShift) -> Scenario {
        let pre = mixture(0.0, 1.5, sigma1.matrix(), SCENARIO1_PI_INF);
        let (m0, m1) = shift.means();
        let post = mixture(m0, m1, sigma1.matrix(), SCENARIO1_PI_0);
        Scenario::new(pre, post, PrevalencePath::Abrupt).expect("preset is consistent")
    }

    /// Two-dimensional analogue of a 30% → 68% prevalence change.
    pub fn dengue_analogue(path: PrevalencePath) -> Scenario {
        let pre = mixture(0.0, DENGUE_MEAN_SHIFT, DMatrix::identity(2, 2), DENGUE_PI_INF);
        let post = pre.with_prevalence(DENGUE_PI_0).expect("valid prevalence");
        Scenario::new(pre, post, path).expect("preset is consistent")
    }

    pub fn dengue_gradual() -> Scenario {
        dengue_analogue(PrevalencePath::GradualLinear(DENGUE_GRADUAL_LEN))
    }

    /// Resolves names such as `scenario1-s1c`, `scenario2-s1a-swapped`,
    /// `dengue-abrupt`, `dengue-gradual`.
    pub fn by_name(name: &str) -> Option<Scenario> {
        let parts: Vec<&str> = name.split('-').collect();
        match parts.as_slice() {
            ["scenario1", s] => Sigma1::parse(s).map(scenario1),
            ["scenario2", s, p] => Some(scenario2(Sigma1::parse(s)?, PostShift::parse(p)?)),
            ["dengue", "abrupt"] => Some(dengue_analogue(PrevalencePath::Abrupt)),
            ["dengue", "gradual"] => Some(dengue_gradual()),
            _ => None,
        }
    }

    pub fn names() -> Vec<String> {
        let mut v: Vec<String> = Sigma1::ALL.iter().map(|s| format!("scenario1-{}", s.name())).collect();
        for s in Sigma1::ALL {
            for p in PostShift::ALL {
                v.push(format!("scenario2-{}-{}", s.name(), p.name()));
            }
        }
        v.push("dengue-abrupt".into());
        v.push("dengue-gradual".into());
        v
    }
}
