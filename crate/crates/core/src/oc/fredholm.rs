// SPDX-License-Identifier: MIT OR Apache-2.0

//! Expected stopping times from the renewal integral equation
//!
//! ```text
//! v(x) = 1 + ∫₀ᴬ v(y) k(x, y) dy,   k(x, y) = f_λ(y / Ψ(x)) / Ψ(x)
//! ```
//!
//! solved by the Nyström method. `[0, A]` is split at 1 (the CUSUM kink) and
//! both panels are integrated in `u = log y`, where the kernel is as smooth as
//! the density of `log λ`. Since `Ψ ≥ 1` for both rules, the lower panel only
//! needs to reach down to where `log λ` has no appreciable mass.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use crate::detector::UpdateRule;
use crate::error::{invalid, Error, Result};
use crate::quadrature::{composite, gauss_legendre_on};
use crate::Regime;

/// Renewal equation for one detector in one regime.
#[derive(Debug, Clone)]
pub struct FredholmProblem<F> {
    /// Density of `λ(X)` on `(0, ∞)` under the regime of interest.
    pub lr_density: F,
    pub rule: UpdateRule,
    pub threshold: f64,
    pub n_nodes: usize,
}

impl<F: Fn(f64) -> f64> FredholmProblem<F> {
    pub fn new(lr_density: F, rule: UpdateRule, threshold: f64, n_nodes: usize) -> Self {
        Self { lr_density, rule, threshold, n_nodes }
    }

    fn validate(&self) -> Result<f64> {
        if self.n_nodes < 16 {
            return Err(invalid(format!("n_nodes must be at least 16, got {}", self.n_nodes)));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(invalid(format!("threshold must be positive, got {}", self.threshold)));
        }
        let (mass, floor) = density_mass(&self.lr_density)?;
        if (mass - 1.0).abs() > 1e-3 {
            return Err(invalid(format!("lr_density integrates to {mass:.6}, not 1")));
        }
        Ok(floor)
    }

    #[inline]
    fn kernel(&self, x: f64, y: f64) -> f64 {
        let p = self.rule.psi(x);
        (self.lr_density)(y / p) / p
    }
}

/// Mass of `log λ` below this is dropped from the lower panel.
const TAIL_MASS: f64 = 1e-13;

/// `∫₀^∞ f(s) ds`, computed as `∫ f(eᵘ) eᵘ du` over `u ∈ [−50, 50]`, and the
/// lowest `u` below which `f` carries at most `TAIL_MASS`.
fn density_mass<F: Fn(f64) -> f64>(f: &F) -> Result<(f64, f64)> {
    let (us, ws) = composite(10, 400, -50.0, 50.0);
    let mut total = 0.0;
    let mut floor = None;
    for (u, w) in us.iter().zip(&ws) {
        let s = u.exp();
        let v = f(s);
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid(format!("lr_density({s:e}) = {v} is not a finite nonnegative value")));
        }
        total += w * v * s;
        if floor.is_none() && total > TAIL_MASS {
            floor = Some(*u - 0.5);
        }
    }
    Ok((total, floor.unwrap_or(-50.0)))
}

/// Discretized solution, interpolable anywhere on `[0, A)`.
#[derive(Debug, Clone)]
pub struct FredholmSolution {
    pub nodes: Vec<f64>,
    /// Quadrature weights in the `y` variable (Jacobian included).
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
}

/// Solves the discretized equation and returns `v` at the nodes.
pub fn fredholm_solve<F: Fn(f64) -> f64>(problem: &FredholmProblem<F>) -> Result<FredholmSolution> {
    let floor = problem.validate()?.min(-1.0);
    let a = problem.threshold;
    let n = problem.n_nodes;
    let log_panels = if a <= 1.0 {
        vec![gauss_legendre_on(n, floor.min(a.ln() - 1.0), a.ln())]
    } else {
        let n_low = (n / 4).max(8);
        vec![gauss_legendre_on(n_low, floor, 0.0), gauss_legendre_on(n - n_low, 0.0, a.ln())]
    };
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (us, wu) in log_panels {
        for (u, w) in us.iter().zip(&wu) {
            let y = u.exp();
            nodes.push(y);
            weights.push(w * y);
        }
    }

    let k = DMatrix::from_fn(n, n, |i, j| weights[j] * problem.kernel(nodes[i], nodes[j]));
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kernel is not finite at the quadrature nodes".into()));
    }
    let system = DMatrix::identity(n, n) - &k;
    let ones = DVector::from_element(n, 1.0);
    let v = system
        .clone()
        .lu()
        .solve(&ones)
        .ok_or_else(|| Error::Numerical("Nyström system is singular".into()))?;
    let residual = (&system * &v - &ones).amax();
    let scale = v.amax().max(1.0);
    if !(residual <= 1e-8 * scale) {
        return Err(Error::Numerical(format!("Nyström residual {residual:e} exceeds tolerance")));
    }
    Ok(FredholmSolution { nodes, weights, values: v.iter().copied().collect() })
}

impl FredholmSolution {
    /// Nyström interpolant `1 + Σ_j w_j k(x, y_j) v_j`.
    pub fn eval<F: Fn(f64) -> f64>(&self, problem: &FredholmProblem<F>, x: f64) -> f64 {
        1.0 + self
            .nodes
            .iter()
            .zip(&self.weights)
            .zip(&self.values)
            .map(|((&y, &w), &v)| w * problem.kernel(x, y) * v)
            .sum::<f64>()
    }
}

/// Expected stopping time `E[T^x(A)]` started from `init_x`.
pub fn fredholm_expected_stopping<F: Fn(f64) -> f64>(problem: &FredholmProblem<F>, init_x: f64) -> Result<f64> {
    if !(init_x >= 0.0 && init_x < problem.threshold) {
        return Err(invalid(format!("init_x must lie in [0, A), got {init_x}")));
    }
    let sol = fredholm_solve(problem)?;
    Ok(sol.eval(problem, init_x))
}

/// Density of `λ(X) = exp(μX − μ²/2)` for `X ~ N(0, 1)` (pre) or `N(μ, 1)` (post).
pub fn gaussian_shift_lr_density(mu: f64, regime: Regime) -> impl Fn(f64) -> f64 + Clone + Send + Sync {
    let mu = mu.abs();
    let shift = match regime {
        Regime::Pre => 0.5 * mu,
        Regime::Post => -0.5 * mu,
    };
    move |s: f64| {
        if s <= 0.0 || !s.is_finite() {
            return 0.0;
        }
        let z = s.ln() / mu + shift;
        (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * mu * s)
    }
}
