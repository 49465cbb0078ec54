//! The angular-power-spectrum estimator `Ĉ_ℓ`, its regime-approximate
//! variants, the classical coefficient estimator and the Hurst estimator.

use serde::{Deserialize, Serialize};

use crate::error::{check_domain, Error, Result};
use crate::moments::{estimator_bias, exact_mean_vnl, ApproxVariant};

/// Which normalizer produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorKind {
    Exact,
    Variant { variant: ApproxVariant },
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub value: f64,
    /// The denominator the statistic was divided by.
    pub normalizer: f64,
    pub kind: EstimatorKind,
    /// Exact relative bias `E[value]/C_ℓ − 1`; zero for unbiased estimators.
    pub bias_exact: f64,
}

fn check_statistic(v: f64) -> Result<()> {
    check_domain(v >= 0.0 && v.is_finite(), "v", v, "finite V >= 0")
}

fn check_ell_n(ell: u32, n: usize) -> Result<()> {
    check_domain(ell >= 1, "ell", ell as f64, "ell >= 1")?;
    check_domain(n >= 1, "n", n as f64, "n >= 1")
}

/// `Ĉ_ℓ = V_{N,ℓ} / (2N (2ℓ+1)/4π (1 − P_ℓ(cos(π/2N))))`, exactly unbiased.
pub fn estimate_cl(v: f64, ell: u32, n: usize) -> Result<EstimateResult> {
    check_statistic(v)?;
    check_ell_n(ell, n)?;
    let normalizer = exact_mean_vnl(ell, 1.0, n);
    if normalizer <= 0.0 {
        // P_ℓ(cos(π/2N)) < 1 for every ℓ, N >= 1; reaching this is a bug
        return Err(Error::Domain {
            name: "normalizer",
            value: normalizer,
            expected: "1 - P_l(cos(pi/2N)) > 0",
        });
    }
    Ok(EstimateResult {
        value: v / normalizer,
        normalizer,
        kind: EstimatorKind::Exact,
        bias_exact: 0.0,
    })
}

/// `Ĉ^{(i)}_ℓ = V / (2N (2ℓ+1)/4π · factor_i)` with the regime factor of
/// [`ApproxVariant`]; `bias_exact` is its exact relative bias.
pub fn estimate_cl_variant(
    v: f64,
    ell: u32,
    n: usize,
    variant: ApproxVariant,
) -> Result<EstimateResult> {
    check_statistic(v)?;
    check_ell_n(ell, n)?;
    if let ApproxVariant::EllComparable { c } = variant {
        check_domain(c > 0.0 && c.is_finite(), "c", c, "c > 0")?;
    }
    let base = 2.0 * n as f64 * (2.0 * ell as f64 + 1.0) / (4.0 * std::f64::consts::PI);
    let normalizer = base * variant.factor(ell, n);
    check_domain(normalizer > 0.0, "normalizer", normalizer, "positive variant normalizer")?;
    Ok(EstimateResult {
        value: v / normalizer,
        normalizer,
        kind: EstimatorKind::Variant { variant },
        bias_exact: estimator_bias(variant, ell, n),
    })
}

/// `C̃_ℓ = (2ℓ+1)^{-1} Σ_m a_{ℓm}²` over the `2ℓ+1` real-basis coefficients.
pub fn estimate_cl_classical(coefficients: &[f64], ell: u32) -> Result<EstimateResult> {
    let dim = 2 * ell as usize + 1;
    if coefficients.len() != dim {
        return Err(Error::Length {
            what: "harmonic coefficients",
            expected: dim,
            got: coefficients.len(),
        });
    }
    let sum_sq: f64 = coefficients.iter().map(|a| a * a).sum();
    Ok(EstimateResult {
        value: sum_sq / dim as f64,
        normalizer: dim as f64,
        kind: EstimatorKind::Classical,
        bias_exact: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstEstimate {
    pub value: f64,
    /// Set when the estimate falls outside `(0, 1)`; it is never clamped.
    pub out_of_range: bool,
}

/// `Ĥ = ln(V_t/V_s) / (2 ln(t/s))`.
pub fn estimate_hurst(v_t: f64, v_s: f64, t: f64, s: f64) -> Result<HurstEstimate> {
    check_domain(v_t > 0.0 && v_t.is_finite(), "v_t", v_t, "v_t > 0")?;
    check_domain(v_s > 0.0 && v_s.is_finite(), "v_s", v_s, "v_s > 0")?;
    check_domain(t > 0.0, "t", t, "t > 0")?;
    check_domain(s > 0.0, "s", s, "s > 0")?;
    check_domain(t != s, "t", t, "t != s")?;
    // ln(v_t) − ln(v_s) rather than ln(v_t/v_s) keeps λ-scaling exact
    let value = (v_t.ln() - v_s.ln()) / (2.0 * (t.ln() - s.ln()));
    Ok(HurstEstimate {
        value,
        out_of_range: !(value > 0.0 && value < 1.0),
    })
}
