//! Independent numerical verification of the divergence claims: closed-form
//! Gaussian Renyi divergence, quadrature evaluation of order-lambda Renyi
//! and squared Hellinger divergences for 1-D Gaussian mixtures, and exact
//! subset-enumerated one-step checks on a scalar regression model.
//!
//! Nothing here shares a code path with the accountant's formulas; the two
//! sides meet only in tests and the verification suites.

use crate::error::{Error, Result};
use crate::numerics::{
    adaptive_quadrature, gaussian_log_pdf, log_sum_exp, QuadratureSpec, RngStream,
};
use serde::{Deserialize, Serialize};

/// A 1-D Gaussian mixture with shared component variance.
///
/// Covers the single Gaussian (one component), the two-component
/// subsampling mixture, and the exact 2^n subset mixtures of the one-step
/// check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Density1D {
    weights: Vec<f64>,
    means: Vec<f64>,
    variance: f64,
}

impl Density1D {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Self::mixture(vec![1.0], vec![mean], variance)
    }

    /// (1 - weight) * N(mean0, var) + weight * N(mean1, var).
    pub fn two_component(mean0: f64, mean1: f64, variance: f64, weight: f64) -> Result<Self> {
        Self::mixture(vec![1.0 - weight, weight], vec![mean0, mean1], variance)
    }

    pub fn mixture(weights: Vec<f64>, means: Vec<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::NonpositiveVariance(variance));
        }
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::InvalidArgument(
                "mixture needs matching nonempty weights and means".into(),
            ));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "mixture weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        Ok(Self {
            weights,
            means,
            variance,
        })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, m)| w.ln() + gaussian_log_pdf(x, *m, self.variance).expect("variance > 0"))
            .collect();
        log_sum_exp(&terms).expect("at least one positive-weight component")
    }

    /// Quadrature check that the density integrates to 1.
    pub fn normalization(&self, spec: &QuadratureSpec) -> Result<(f64, f64)> {
        let (a, b) = support_union(&[self]);
        adaptive_quadrature(|x| self.log_pdf(x).exp(), a, b, spec)
    }
}

/// A quadrature estimate with its error bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Union of the +-10 standard deviation intervals around all component
/// means of the given densities.
fn support_union(densities: &[&Density1D]) -> (f64, f64) {
    let sd = densities
        .iter()
        .map(|d| d.variance.sqrt())
        .fold(0.0f64, f64::max);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for d in densities {
        for &m in &d.means {
            lo = lo.min(m);
            hi = hi.max(m);
        }
    }
    (lo - 10.0 * sd, hi + 10.0 * sd)
}

/// Closed-form order-lambda Renyi divergence between equal-variance
/// Gaussians: lambda * (mean1 - mean2)^2 / (2 * variance).
pub fn gaussian_renyi_closed_form(
    lambda: f64,
    mean1: f64,
    mean2: f64,
    variance: f64,
) -> Result<f64> {
    if !(lambda >= 0.5) || lambda == 1.0 {
        return Err(Error::InvalidArgument(format!(
            "order must be >= 1/2 and != 1, got {lambda}"
        )));
    }
    if !(variance > 0.0) {
        return Err(Error::NonpositiveVariance(variance));
    }
    let d = mean1 - mean2;
    Ok(lambda * d * d / (2.0 * variance))
}

/// Order-lambda Renyi divergence (1/(lambda-1)) log int p^lambda q^(1-lambda)
/// by adaptive quadrature, integrand evaluated in log space.
///
/// For lambda > 1 the integrand peaks near the lambda-tilted combinations
/// of the component means, which can lie far outside the densities' own
/// mass; the integration window covers those tilt points and the whole
/// integrand is rescaled by its maximum log value before quadrature so the
/// exponentials stay representable.
pub fn renyi_quadrature(
    lambda: f64,
    p: &Density1D,
    q: &Density1D,
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    if !(lambda >= 0.5) || lambda == 1.0 {
        return Err(Error::InvalidArgument(format!(
            "order must be >= 1/2 and != 1, got {lambda}"
        )));
    }
    let sd = p.variance.sqrt().max(q.variance.sqrt());
    let (mut lo, mut hi) = support_union(&[p, q]);
    for &mp in &p.means {
        for &mq in &q.means {
            let tilt = lambda * mp + (1.0 - lambda) * mq;
            lo = lo.min(tilt - 10.0 * sd);
            hi = hi.max(tilt + 10.0 * sd);
        }
    }

    let log_integrand = |x: f64| lambda * p.log_pdf(x) + (1.0 - lambda) * q.log_pdf(x);

    // Coarse scan for the rescaling shift.
    let scan_points = 4096;
    let mut shift = f64::NEG_INFINITY;
    for i in 0..=scan_points {
        let x = lo + (hi - lo) * i as f64 / scan_points as f64;
        shift = shift.max(log_integrand(x));
    }
    if !shift.is_finite() {
        return Err(Error::InvalidArgument(
            "Renyi integrand is degenerate on the integration window".into(),
        ));
    }

    let (integral, err) = adaptive_quadrature(|x| (log_integrand(x) - shift).exp(), lo, hi, spec)?;
    if !(integral > 0.0) {
        return Err(Error::Other(format!(
            "Renyi quadrature produced a nonpositive integral {integral}"
        )));
    }
    let value = (shift + integral.ln()) / (lambda - 1.0);
    let error = (err / integral) / (lambda - 1.0).abs();
    Ok(Estimate { value, error })
}

/// Squared Hellinger distance (1/2) int (sqrt(p) - sqrt(q))^2 by quadrature.
pub fn hellinger_quadrature(
    p: &Density1D,
    q: &Density1D,
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    let (lo, hi) = support_union(&[p, q]);
    let (value, error) = adaptive_quadrature(
        |x| {
            let d = (0.5 * p.log_pdf(x)).exp() - (0.5 * q.log_pdf(x)).exp();
            0.5 * d * d
        },
        lo,
        hi,
        spec,
    )?;
    Ok(Estimate { value, error })
}

/// One scalar example of the 1-parameter regression model, with squared
/// loss l(z, w) = (w*x - y)^2 / 2 and analytic clipped gradient.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalarExample {
    pub x: f64,
    pub y: f64,
}

impl ScalarExample {
    /// Gradient (w*x - y)*x, clipped to [-clip_bound, clip_bound].
    pub fn clipped_gradient(&self, w: f64, clip_bound: f64) -> f64 {
        ((w * self.x - self.y) * self.x).clamp(-clip_bound, clip_bound)
    }
}

/// Exact conditional densities of one SGLD step on a dataset of at most 12
/// scalar examples and on its leave-one-out neighbor.
///
/// Each density is the mixture over all Poisson subsets B with weight
/// tau^|B| (1-tau)^(n-|B|), component mean
/// w_prev - alpha * beta * sum_{i in B} clipped gradient, variance 2*alpha,
/// with beta fixed to 1/(tau*n).
pub fn sgld_one_step_densities(
    w_prev: f64,
    dataset: &[ScalarExample],
    removed_index: usize,
    alpha: f64,
    tau: f64,
    clip_bound: f64,
) -> Result<(Density1D, Density1D)> {
    let n = dataset.len();
    if n > 12 {
        return Err(Error::EnumerationTooLarge(n));
    }
    if n == 0 || removed_index >= n {
        return Err(Error::InvalidArgument(format!(
            "removed_index {removed_index} out of range for n = {n}"
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "sampling ratio must be in [0, 1], got {tau}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::NonpositiveParameter {
            name: "alpha",
            value: alpha,
        });
    }
    let noise_variance = 2.0 * alpha;
    if tau == 0.0 {
        let d = Density1D::gaussian(w_prev, noise_variance)?;
        return Ok((d.clone(), d));
    }

    // beta convention: expected batch size divisor over the full dataset.
    let beta = 1.0 / (tau * n as f64);
    let grads: Vec<f64> = dataset
        .iter()
        .map(|z| z.clipped_gradient(w_prev, clip_bound))
        .collect();

    let enumerate = |indices: &[usize]| -> Result<Density1D> {
        let m = indices.len();
        let mut weights = Vec::with_capacity(1 << m);
        let mut means = Vec::with_capacity(1 << m);
        for subset in 0u32..(1u32 << m) {
            let size = subset.count_ones() as f64;
            let weight = tau.powf(size) * (1.0 - tau).powf(m as f64 - size);
            if weight == 0.0 {
                continue;
            }
            let grad_sum: f64 = indices
                .iter()
                .enumerate()
                .filter(|(bit, _)| subset >> bit & 1 == 1)
                .map(|(_, &i)| grads[i])
                .sum();
            weights.push(weight);
            means.push(w_prev - alpha * beta * grad_sum);
        }
        // Renormalize away the float drift of the subset weights.
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Density1D::mixture(weights, means, noise_variance)
    };

    let full: Vec<usize> = (0..n).collect();
    let without: Vec<usize> = (0..n).filter(|&i| i != removed_index).collect();
    Ok((enumerate(&full)?, enumerate(&without)?))
}

/// One check of the invariance suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    pub fn close(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            tolerance,
            pass: (lhs - rhs).abs() <= tolerance,
        }
    }

    pub fn le(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            tolerance,
            pass: lhs <= rhs + tolerance,
        }
    }
}

/// A named batch of checks with an overall verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

impl SuiteReport {
    pub fn new(suite: impl Into<String>, checks: Vec<CheckResult>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self {
            suite: suite.into(),
            checks,
            pass,
        }
    }
}

/// Numerical spot checks of translation invariance, product additivity,
/// and quasi-convexity of the Renyi divergence.
pub fn invariance_suite() -> Result<SuiteReport> {
    let spec = QuadratureSpec::default();
    let lambda = 2.0;
    let mut checks = Vec::new();

    // (a) Translation: D(N(a, 1) || N(a + 1, 1)) independent of a.
    let reference = renyi_quadrature(
        lambda,
        &Density1D::gaussian(-5.0, 1.0)?,
        &Density1D::gaussian(-4.0, 1.0)?,
        &spec,
    )?
    .value;
    for a in [0.0, 7.0] {
        let v = renyi_quadrature(
            lambda,
            &Density1D::gaussian(a, 1.0)?,
            &Density1D::gaussian(a + 1.0, 1.0)?,
            &spec,
        )?
        .value;
        checks.push(CheckResult::close(
            format!("translation invariance at a = {a}"),
            v,
            reference,
            1e-8,
        ));
    }

    // (b) Additivity for product Gaussians, via the closed form: the 2-D
    // divergence with mean offset (1, 2) equals the sum of the coordinates.
    let coord1 = gaussian_renyi_closed_form(lambda, 0.0, 1.0, 1.0)?;
    let coord2 = gaussian_renyi_closed_form(lambda, 0.0, 2.0, 1.0)?;
    let joint = lambda * (1.0 + 4.0) / 2.0;
    checks.push(CheckResult::close(
        "product additivity, offsets (1, 2)",
        joint,
        coord1 + coord2,
        0.0,
    ));

    // (c) Quasi-convexity: D(mixture || q) <= max over components.
    let mut rng = RngStream::new(0x1A71, 0);
    for case in 0..20 {
        let variance = 0.5 + rng.uniform();
        let m0 = 2.0 * rng.uniform() - 1.0;
        let m1 = 2.0 * rng.uniform() - 1.0;
        let weight = rng.uniform();
        let p = Density1D::two_component(m0, m1, variance, weight)?;
        let q = Density1D::gaussian(0.0, variance)?;
        let mixed = renyi_quadrature(lambda, &p, &q, &spec)?;
        let worst = gaussian_renyi_closed_form(lambda, m0, 0.0, variance)?
            .max(gaussian_renyi_closed_form(lambda, m1, 0.0, variance)?);
        checks.push(CheckResult::le(
            format!("quasi-convexity case {case}"),
            mixed.value,
            worst,
            mixed.error + 1e-10,
        ));
    }

    // Degenerate mixture (weight 1 on one component) gives equality.
    let p = Density1D::two_component(0.7, -3.0, 1.0, 0.0)?;
    let q = Density1D::gaussian(0.0, 1.0)?;
    let mixed = renyi_quadrature(lambda, &p, &q, &spec)?;
    let single = gaussian_renyi_closed_form(lambda, 0.7, 0.0, 1.0)?;
    checks.push(CheckResult::close(
        "quasi-convexity degenerate mixture",
        mixed.value,
        single,
        mixed.error + 1e-8,
    ));

    Ok(SuiteReport::new("invariances", checks))
}
