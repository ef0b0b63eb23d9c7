//! Per-step Renyi divergence accounting for noisy training.
//!
//! Each SGLD step is a subsampled Gaussian mechanism; its divergence on
//! adjacent datasets admits both a binomial-sum bound (evaluated in log
//! space) and, in a restricted parameter regime, the simplified form
//! 2*lambda*tau^2/sigma^2. Per-step bounds compose additively across
//! iterations, and the closed-form total lambda*L^2/n^2 * sum(alpha_t)
//! follows.

use crate::error::{Error, Result};
use crate::numerics::{log_binomial, log_sum_exp};
use serde::{Deserialize, Serialize};

/// A Renyi order: >= 1/2 and != 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RenyiOrder(f64);

impl RenyiOrder {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.5) || lambda == 1.0 {
            return Err(Error::InvalidArgument(format!(
                "Renyi order must be >= 1/2 and != 1, got {lambda}"
            )));
        }
        Ok(Self(lambda))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The integer order, when this order is an exact integer in [2, 256].
    pub fn as_full_formula_integer(self) -> Option<u32> {
        if self.0.fract() == 0.0 && (2.0..=256.0).contains(&self.0) {
            Some(self.0 as u32)
        } else {
            None
        }
    }
}

/// Default order grid: 1/2 for the Hellinger route plus integers 2..=64.
pub fn default_order_grid() -> Vec<RenyiOrder> {
    let mut grid = vec![RenyiOrder(0.5)];
    grid.extend((2..=64).map(|k| RenyiOrder(k as f64)));
    grid
}

/// Which per-step bound feeds the ledger totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaMode {
    /// The statement bound lambda*alpha*L^2/n^2 at every order.
    Theorem1,
    /// The binomial-sum bound at integer orders >= 2, the statement
    /// bound elsewhere.
    FullBinomial,
}

/// Parameters of one SGLD step as seen by the accountant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    /// Step size alpha_t.
    pub alpha: f64,
    /// Poisson sampling ratio tau.
    pub tau: f64,
    /// Fixed averaging weight beta_t = 1/(tau*n), the expected batch size
    /// divisor.
    pub batch_weight: f64,
    /// Gradient norm bound L.
    pub clip_bound: f64,
    /// Effective noise-to-sensitivity ratio sigma^2 = 2/(alpha*beta^2*L^2).
    pub sigma_sq: f64,
    /// Variance of the injected noise, 2*alpha.
    pub noise_variance: f64,
}

impl StepRecord {
    pub fn new(
        step_index: usize,
        alpha: f64,
        tau: f64,
        clip_bound: f64,
        dataset_size: usize,
    ) -> Result<Self> {
        for (name, value) in [("alpha", alpha), ("tau", tau), ("clip_bound", clip_bound)] {
            if !(value > 0.0) {
                return Err(Error::NonpositiveParameter { name, value });
            }
        }
        if tau > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "sampling ratio must be in (0, 1], got {tau}"
            )));
        }
        if dataset_size == 0 {
            return Err(Error::InvalidArgument("dataset_size must be >= 1".into()));
        }
        let batch_weight = 1.0 / (tau * dataset_size as f64);
        Ok(Self {
            step_index,
            alpha,
            tau,
            batch_weight,
            clip_bound,
            sigma_sq: effective_sigma_sq(alpha, batch_weight, clip_bound)?,
            noise_variance: 2.0 * alpha,
        })
    }
}

/// sigma^2 = 2 / (alpha * batch_weight^2 * clip_bound^2).
pub fn effective_sigma_sq(alpha: f64, batch_weight: f64, clip_bound: f64) -> Result<f64> {
    for (name, value) in [
        ("alpha", alpha),
        ("batch_weight", batch_weight),
        ("clip_bound", clip_bound),
    ] {
        if !(value > 0.0) {
            return Err(Error::NonpositiveParameter { name, value });
        }
    }
    Ok(2.0 / (alpha * batch_weight * batch_weight * clip_bound * clip_bound))
}

/// One evaluated side-by-side condition of the simplified-bound regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Outcome of [`validity_check`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub conditions: Vec<ConditionCheck>,
}

/// Checks the regime in which the simplified bound 2*lambda*tau^2/sigma^2
/// applies: sigma^2 >= 0.53 and
/// lambda - 1 <= (2/3)*sigma^2*log(1/(lambda*tau*(1+sigma^2))).
pub fn validity_check(lambda: RenyiOrder, tau: f64, sigma_sq: f64) -> ValidityReport {
    let lam = lambda.value();
    let c1 = ConditionCheck {
        name: "sigma^2 >= 0.53".into(),
        lhs: sigma_sq,
        rhs: 0.53,
        holds: sigma_sq >= 0.53,
    };
    let rhs2 = if tau > 0.0 {
        (2.0 / 3.0) * sigma_sq * (1.0 / (lam * tau * (1.0 + sigma_sq))).ln()
    } else {
        f64::INFINITY
    };
    let c2 = ConditionCheck {
        name: "lambda - 1 <= (2/3)*sigma^2*log(1/(lambda*tau*(1+sigma^2)))".into(),
        lhs: lam - 1.0,
        rhs: rhs2,
        holds: lam - 1.0 <= rhs2,
    };
    ValidityReport {
        valid: c1.holds && c2.holds,
        conditions: vec![c1, c2],
    }
}

/// Binomial-sum Renyi bound for the Gaussian mechanism with Poisson
/// subsampling, at integer order lambda in [2, 256].
///
/// Evaluates (1/(lambda-1)) * log sum_{j=0}^{lambda} C(lambda, j)
/// (1-tau)^(lambda-j) tau^j exp((j-1)*rho(j)) with rho(j) = j/(2*sigma^2),
/// term by term in log space; (1-tau)^k enters as exp(k*log1p(-tau)).
pub fn subsampled_gaussian_renyi(lambda: u32, tau: f64, sigma_sq: f64) -> Result<f64> {
    if !(2..=256).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "full-formula order must be an integer in [2, 256], got {lambda}"
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "sampling ratio must be in [0, 1], got {tau}"
        )));
    }
    if !(sigma_sq > 0.0) {
        return Err(Error::NonpositiveParameter {
            name: "sigma_sq",
            value: sigma_sq,
        });
    }

    let lam = lambda as u64;
    let ln_tau = tau.ln();
    let ln_1m_tau = (-tau).ln_1p();

    // The binomial weights alone sum to 1 and rho vanishes at j = 0, 1,
    // so the sum is 1 + sum_{j>=2} w_j (e^{rho_j} - 1). Evaluating that
    // excess in log space and finishing with ln_1p keeps full relative
    // precision when the divergence is tiny, without overflowing when
    // rho_j is large.
    let mut log_excess_terms = Vec::with_capacity(lambda as usize);
    for j in 2..=lam {
        // Skip terms killed by tau = 0 or tau = 1 to avoid 0 * (-inf).
        if tau == 0.0 {
            continue;
        }
        if tau == 1.0 && j < lam {
            continue;
        }
        let mut t = log_binomial(lam, j)?;
        t += j as f64 * ln_tau;
        if j < lam {
            t += (lam - j) as f64 * ln_1m_tau;
        }
        let rho = (j * (j - 1)) as f64 / (2.0 * sigma_sq);
        // log(e^rho - 1), stable at both ends.
        t += if rho > 0.7 {
            rho + (-(-rho).exp()).ln_1p()
        } else {
            rho.exp_m1().ln()
        };
        log_excess_terms.push(t);
    }
    if log_excess_terms.is_empty() {
        return Ok(0.0);
    }
    let log_excess = log_sum_exp(&log_excess_terms)?;
    let log_sum = if log_excess > 700.0 {
        log_excess
    } else {
        log_excess.exp().ln_1p()
    };
    Ok((log_sum / (lambda as f64 - 1.0)).max(0.0))
}

/// The simplified step bound 2*lambda*tau^2/sigma^2, valid only in the
/// regime reported by [`validity_check`].
pub fn simplified_step_bound(lambda: RenyiOrder, tau: f64, sigma_sq: f64) -> Result<f64> {
    let report = validity_check(lambda, tau, sigma_sq);
    if !report.valid {
        let failed: Vec<&str> = report
            .conditions
            .iter()
            .filter(|c| !c.holds)
            .map(|c| c.name.as_str())
            .collect();
        return Err(Error::ValidityNotMet(failed.join("; ")));
    }
    Ok(simplified_step_bound_unchecked(lambda, tau, sigma_sq))
}

/// The simplified bound without the regime check. Callers that override
/// the check are expected to record the override.
pub fn simplified_step_bound_unchecked(lambda: RenyiOrder, tau: f64, sigma_sq: f64) -> f64 {
    2.0 * lambda.value() * tau * tau / sigma_sq
}

/// The statement bound of one step: lambda * alpha * L^2 / n^2.
pub fn theorem1_step_term(lambda: RenyiOrder, alpha: f64, clip_bound: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let nf = n as f64;
    Ok(lambda.value() * alpha * clip_bound * clip_bound / (nf * nf))
}

/// Closed-form composed total: (lambda * L^2 / n^2) * sum_t alpha_t.
/// An empty schedule yields 0.
pub fn theorem1_total(
    lambda: RenyiOrder,
    clip_bound: f64,
    n: usize,
    alphas: &[f64],
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let nf = n as f64;
    let sum: f64 = alphas.iter().sum();
    Ok(lambda.value() * clip_bound * clip_bound * sum / (nf * nf))
}

/// Per-step privacy records plus composed totals over a grid of orders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenyiLedger {
    pub dataset_size: usize,
    pub mode: FormulaMode,
    pub steps: Vec<StepRecord>,
    pub order_grid: Vec<RenyiOrder>,
    /// Composed divergence totals, parallel to `order_grid`.
    pub totals: Vec<f64>,
    /// validity[step][order]: whether the simplified-bound regime holds.
    pub validity: Vec<Vec<bool>>,
}

impl RenyiLedger {
    pub fn new(dataset_size: usize, order_grid: Vec<RenyiOrder>, mode: FormulaMode) -> Result<Self> {
        if dataset_size == 0 {
            return Err(Error::InvalidArgument("dataset_size must be >= 1".into()));
        }
        let totals = vec![0.0; order_grid.len()];
        Ok(Self {
            dataset_size,
            mode,
            steps: Vec::new(),
            order_grid,
            totals,
            validity: Vec::new(),
        })
    }

    /// The per-step bound at one order, per the ledger's formula mode.
    fn step_bound(&self, record: &StepRecord, order: RenyiOrder) -> Result<f64> {
        if self.mode == FormulaMode::FullBinomial {
            if let Some(lam) = order.as_full_formula_integer() {
                return subsampled_gaussian_renyi(lam, record.tau, record.sigma_sq);
            }
        }
        theorem1_step_term(order, record.alpha, record.clip_bound, self.dataset_size)
    }

    /// Appends a step, updating every order's total and the validity map.
    pub fn append_step(&mut self, record: StepRecord) -> Result<()> {
        if record.step_index != self.steps.len() {
            return Err(Error::OutOfOrderStep {
                got: record.step_index,
                expected: self.steps.len(),
            });
        }
        let mut flags = Vec::with_capacity(self.order_grid.len());
        for (i, &order) in self.order_grid.iter().enumerate() {
            self.totals[i] += self.step_bound(&record, order)?;
            flags.push(validity_check(order, record.tau, record.sigma_sq).valid);
        }
        self.validity.push(flags);
        self.steps.push(record);
        Ok(())
    }

    /// Recomputes the composed totals from the records. Must match the
    /// incrementally maintained `totals` bit for bit: the per-step bounds
    /// are summed in the same order as `append_step` accumulated them.
    pub fn compose(&self) -> Result<Vec<f64>> {
        let mut totals = vec![0.0; self.order_grid.len()];
        for record in &self.steps {
            for (i, &order) in self.order_grid.iter().enumerate() {
                totals[i] += self.step_bound(record, order)?;
            }
        }
        Ok(totals)
    }

    /// Composed total at one order, if it is on the grid.
    pub fn total_at(&self, lambda: f64) -> Option<f64> {
        self.order_grid
            .iter()
            .position(|o| o.value() == lambda)
            .map(|i| self.totals[i])
    }

    /// The realized step-size schedule.
    pub fn alpha_schedule(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.alpha).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}
