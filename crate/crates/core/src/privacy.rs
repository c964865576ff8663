//! Gaussian-mechanism calibration, gradient sensitivity bounds and a Rényi
//! accountant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::ModelBounds;

pub mod audit;

pub use audit::{empirical_sensitivity, AuditResult};

/// An `(ε, δ)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidParameter(format!("delta must lie in [0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    pub(crate) fn require_positive_delta(&self) -> Result<()> {
        if self.delta > 0.0 {
            Ok(())
        } else {
            Err(Error::ZeroDelta)
        }
    }
}

/// Accumulated Rényi-DP guarantee at a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdpLedger {
    pub alpha: f64,
    pub epsilon_rdp: f64,
}

impl RdpLedger {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0) {
            return Err(Error::InvalidParameter(format!("RDP order must exceed 1, got {alpha}")));
        }
        Ok(Self { alpha, epsilon_rdp: 0.0 })
    }
}

/// Which fields of one record may differ between neighbouring datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityCase {
    CensoringOnly,
    CovariateOnly,
    TimeOnly,
    FullTriple,
}

impl SensitivityCase {
    pub const ALL: [SensitivityCase; 4] = [
        SensitivityCase::CensoringOnly,
        SensitivityCase::CovariateOnly,
        SensitivityCase::TimeOnly,
        SensitivityCase::FullTriple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SensitivityCase::CensoringOnly => "censoring-only",
            SensitivityCase::CovariateOnly => "covariate-only",
            SensitivityCase::TimeOnly => "time-only",
            SensitivityCase::FullTriple => "full-triple",
        }
    }
}

impl std::str::FromStr for SensitivityCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SensitivityCase::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown sensitivity case `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBound {
    pub value: f64,
    pub case: SensitivityCase,
}

/// Standard deviation of the classical Gaussian mechanism,
/// `sqrt(2 log(1.25/δ)) · sens / ε`.
pub fn gaussian_sigma(sens: f64, budget: &PrivacyBudget) -> Result<f64> {
    budget.require_positive_delta()?;
    if !(sens >= 0.0) {
        return Err(Error::InvalidParameter(format!("sensitivity must be nonnegative, got {sens}")));
    }
    Ok((2.0 * (1.25 / budget.delta).ln()).sqrt() * sens / budget.epsilon)
}

/// Analytic upper bound on the ℓ₂-sensitivity of the score on `n` records.
///
/// Censoring-only neighbours: `4 C_Z / n`. Every other case:
/// `4 C_Z/n + 2 e^{2 C_Z C_β} C_Z log(n+1)/n + 3 e^{2 C_Z C_β} max(C_Z, C_Z²) log(n+1)/n`.
pub fn grad_sensitivity_bound(n: usize, bounds: &ModelBounds, case: SensitivityCase) -> SensitivityBound {
    let nf = n.max(1) as f64;
    let cz = bounds.c_z;
    let base = 4.0 * cz / nf;
    let value = match case {
        SensitivityCase::CensoringOnly => base,
        _ => {
            let e = (2.0 * cz * bounds.c_beta).exp();
            let log_term = (nf + 1.0).ln() / nf;
            base + 2.0 * e * cz * log_term + 3.0 * e * cz.max(cz * cz) * log_term
        }
    };
    SensitivityBound { value, case }
}

/// RDP parameter `α · sens² / (2σ²)` of the Gaussian mechanism.
pub fn rdp_gaussian(alpha: f64, sens: f64, sigma: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidParameter(format!("RDP order must exceed 1, got {alpha}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok(alpha * sens * sens / (2.0 * sigma * sigma))
}

/// Adds an `(alpha, eps_new)` guarantee to the ledger.
pub fn rdp_compose(ledger: &RdpLedger, alpha: f64, eps_new: f64) -> Result<RdpLedger> {
    if alpha != ledger.alpha {
        return Err(Error::OrderMismatch {
            ledger: ledger.alpha,
            other: alpha,
        });
    }
    if !(eps_new >= 0.0) {
        return Err(Error::InvalidParameter(format!("RDP epsilon must be nonnegative, got {eps_new}")));
    }
    Ok(RdpLedger {
        alpha,
        epsilon_rdp: ledger.epsilon_rdp + eps_new,
    })
}

/// `(ε_rdp + log(1/δ)/(α - 1), δ)`.
pub fn rdp_to_dp(ledger: &RdpLedger, delta: f64) -> Result<PrivacyBudget> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(PrivacyBudget {
        epsilon: ledger.epsilon_rdp + (1.0 / delta).ln() / (ledger.alpha - 1.0),
        delta,
    })
}

/// The RDP order `2 log(1/δ)/ε + 1` used by the composed-Gaussian calibration.
pub fn composition_order(budget: &PrivacyBudget) -> f64 {
    2.0 * (1.0 / budget.delta).ln() / budget.epsilon + 1.0
}

/// Per-round variance `(2 log(1/δ)/ε + 1) · sens² / (ε/K)` making a `K`-fold
/// adaptive composition of Gaussian mechanisms `(ε, δ)`-DP.
pub fn composed_gaussian_variance(sens: f64, budget: &PrivacyBudget, k_rounds: usize) -> Result<f64> {
    if k_rounds == 0 {
        return Err(Error::InvalidParameter("k_rounds must be at least 1".into()));
    }
    if !(budget.delta > 0.0 && budget.delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1), got {}",
            budget.delta
        )));
    }
    Ok(composition_order(budget) * sens * sens / (budget.epsilon / k_rounds as f64))
}

/// Runs `k_rounds` Gaussian releases of sensitivity `sens` and noise `sigma`
/// through the accountant at order `alpha` and converts the total to `(ε', δ)`.
pub fn certify_gaussian_rounds(sens: f64, sigma: f64, k_rounds: usize, alpha: f64, delta: f64) -> Result<PrivacyBudget> {
    let per_round = rdp_gaussian(alpha, sens, sigma)?;
    let mut ledger = RdpLedger::new(alpha)?;
    for _ in 0..k_rounds {
        ledger = rdp_compose(&ledger, alpha, per_round)?;
    }
    rdp_to_dp(&ledger, delta)
}
