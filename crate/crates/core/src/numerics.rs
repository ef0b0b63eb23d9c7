//! Numerically stable scalar kernels shared by the accountant and the
//! oracle: log-space combinatorics, log-sum-exp, Gaussian densities,
//! adaptive 1-D quadrature, and the seeded random-generation contract.

use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// A deterministic random stream identified by (seed, stream_id).
///
/// Identical (seed, stream_id) pairs yield identical sample sequences on the
/// same build. Distinct stream ids yield independent sequences; consumers
/// fork child streams rather than sharing one stream across threads.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    /// Cached second output of the polar method.
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream with the same seed and a different stream id.
    pub fn fork(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli draw with inclusion probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via the Marsaglia polar method.
    ///
    /// Fixed across the whole artifact so that identical seeds give
    /// identical noise in every consumer.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * factor);
                return u * factor;
            }
        }
    }

    /// Normal with the given mean and variance.
    pub fn normal(&mut self, mean: f64, variance: f64) -> f64 {
        mean + variance.sqrt() * self.standard_normal()
    }
}

/// Tolerances and budget for [`adaptive_quadrature`].
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_subdivisions: 1 << 16,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::NonpositiveParameter {
                name: "rel_tol",
                value: self.rel_tol,
            });
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::NonpositiveParameter {
                name: "abs_tol",
                value: self.abs_tol,
            });
        }
        if self.max_subdivisions < 4 {
            return Err(Error::InvalidArgument(format!(
                "max_subdivisions must be >= 4, got {}",
                self.max_subdivisions
            )));
        }
        Ok(())
    }
}

/// log(sum_i exp(v_i)) without overflow; entries may be -inf.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySequence);
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Lanczos approximation of ln Gamma(x) for x > 0 (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    debug_assert!(x > 0.0);
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * LN_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

/// log of the binomial coefficient (m choose k) via log-gamma.
pub fn log_binomial(m: u64, k: u64) -> Result<f64> {
    if k > m {
        return Err(Error::InvalidCombination { m, k });
    }
    if k == 0 || k == m {
        return Ok(0.0);
    }
    // Canonicalize so (m, k) and (m, m-k) share one evaluation order and
    // the symmetry identity holds exactly.
    let k = k.min(m - k);
    Ok(ln_gamma(m as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((m - k) as f64 + 1.0))
}

/// Log density of N(mean, variance) at x.
pub fn gaussian_log_pdf(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::NonpositiveVariance(variance));
    }
    let d = x - mean;
    Ok(-d * d / (2.0 * variance) - 0.5 * (LN_2PI + variance.ln()))
}

// 15-point Kronrod / 7-point Gauss pair on [-1, 1] (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss-Kronrod 15(7) evaluation over [a, b].
/// Returns (kronrod value, error estimate, integral of |f|, asymmetry scale).
fn qk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut result_gauss = WG[3] * fc;
    let mut result_kronrod = WGK[7] * fc;
    let mut resabs = WGK[7] * fc.abs();

    let mut fv1 = [0.0f64; 8];
    let mut fv2 = [0.0f64; 8];
    fv1[7] = fc;
    fv2[7] = fc;

    for j in 0..7 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        result_kronrod += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            result_gauss += WG[j / 2] * (f1 + f2);
        }
    }

    let mean = 0.5 * result_kronrod;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let result = result_kronrod * half;
    resabs *= half.abs();
    resasc *= half.abs();
    let mut abserr = ((result_kronrod - result_gauss) * half).abs();
    if resasc != 0.0 && abserr != 0.0 {
        abserr = resasc * (200.0 * abserr / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        abserr = abserr.max(50.0 * f64::EPSILON * resabs);
    }
    (result, abserr, resabs)
}

#[derive(Debug, Clone, Copy)]
struct Interval {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Adaptive Gauss-Kronrod quadrature of `f` over [a, b].
///
/// Intervals are bisected at the midpoint, worst error first, until the
/// summed error estimate meets max(abs_tol, rel_tol * |value|) or the
/// subdivision budget runs out.
pub fn adaptive_quadrature<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<(f64, f64)> {
    spec.validate()?;
    if !(a < b) {
        return Err(Error::InvalidArgument(format!(
            "quadrature interval must satisfy a < b, got [{a}, {b}]"
        )));
    }

    let (value, error, _) = qk15(&f, a, b);
    let mut intervals = vec![Interval {
        a,
        b,
        value,
        error,
    }];

    for _ in 0..spec.max_subdivisions {
        let total_value: f64 = intervals.iter().map(|i| i.value).sum();
        let total_error: f64 = intervals.iter().map(|i| i.error).sum();
        if total_error <= spec.abs_tol.max(spec.rel_tol * total_value.abs()) {
            return Ok((total_value, total_error));
        }

        let worst = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(idx, _)| idx)
            .expect("nonempty interval list");
        let iv = intervals.swap_remove(worst);
        let mid = 0.5 * (iv.a + iv.b);
        if mid <= iv.a || mid >= iv.b {
            // Interval no longer splittable in f64; keep it as-is.
            intervals.push(iv);
            continue;
        }
        let (lv, le, _) = qk15(&f, iv.a, mid);
        let (rv, re, _) = qk15(&f, mid, iv.b);
        intervals.push(Interval {
            a: iv.a,
            b: mid,
            value: lv,
            error: le,
        });
        intervals.push(Interval {
            a: mid,
            b: iv.b,
            value: rv,
            error: re,
        });
    }

    let estimate: f64 = intervals.iter().map(|i| i.value).sum();
    let error_bound: f64 = intervals.iter().map(|i| i.error).sum();
    if error_bound <= spec.abs_tol.max(spec.rel_tol * estimate.abs()) {
        return Ok((estimate, error_bound));
    }
    Err(Error::QuadratureBudget {
        estimate,
        error_bound,
    })
}
