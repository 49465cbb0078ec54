//! Exact and asymptotic moments and cumulants of the quadratic variations.
//!
//! Every exact quantity here is a function of the increment Gram matrix `Σ`:
//! `E V = tr Σ`, and for the centered quadratic form
//! `κ_p(V − E V) = 2^{p−1} (p−1)! tr(Σ^p)`. The asymptotic formulas are
//! exposed for regime studies and are always checked against those traces.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::covariance::{IncrementGram, LineGrid};
use crate::error::{check_domain, Error, Result};
use crate::linalg::SymMatrix;
use crate::quadrature::GaussLegendre;
use crate::specfun::{bessel_j_unchecked, legendre_p_unchecked, legendre_p_with_deriv, BesselOrder};

/// Largest cumulant order served by [`trace_cumulant`].
pub const MAX_CUMULANT_ORDER: usize = 8;
/// Largest `N` for which dense trace powers are formed.
pub const MAX_CUMULANT_N: usize = 4096;

/// Relative growth of the frequency `ℓ` against the grid size `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegimeTag {
    FixedEll,
    /// `N/ℓ → 0`
    EllFaster,
    /// `ℓ/N → c`
    EllComparable { c: f64 },
    /// `ℓ/N → 0`
    EllSlower,
}

impl RegimeTag {
    pub fn label(&self) -> String {
        match self {
            RegimeTag::FixedEll => "fixed_ell".into(),
            RegimeTag::EllFaster => "ell_faster".into(),
            RegimeTag::EllComparable { c } => format!("ell_comparable(c={c})"),
            RegimeTag::EllSlower => "ell_slower".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean: f64,
    pub variance: f64,
    /// Cumulants `κ_2..=κ_{p_max}` of the normalized statistic `F_N`.
    pub cumulants: Vec<f64>,
    pub regime: Option<RegimeTag>,
}

fn kernel_weight(ell: u32) -> f64 {
    (2.0 * ell as f64 + 1.0) / (4.0 * PI)
}

/// `E V_{N,ℓ} = 2N C_ℓ (2ℓ+1)/4π (1 − P_ℓ(cos(π/2N)))`.
pub fn exact_mean_vnl(ell: u32, c_ell: f64, n: usize) -> f64 {
    let h = FRAC_PI_2 / n as f64;
    2.0 * n as f64 * c_ell * kernel_weight(ell) * (1.0 - legendre_p_unchecked(ell, h.cos()))
}

/// `E V = tr Σ` for any increment Gram.
pub fn exact_mean(gram: &IncrementGram) -> f64 {
    gram.trace()
}

/// `Var V = 2 Σ_{i,j} σ_ij²`.
pub fn exact_var_vnl(gram: &IncrementGram) -> f64 {
    2.0 * gram.frobenius_sq()
}

fn cumulant_prefactor(p: usize) -> f64 {
    let fact: f64 = (1..p).map(|k| k as f64).product();
    2f64.powi(p as i32 - 1) * fact
}

fn check_cumulant_request(gram: &IncrementGram, p_max: usize) -> Result<()> {
    if !(2..=MAX_CUMULANT_ORDER).contains(&p_max) {
        return Err(Error::Index {
            name: "p",
            value: p_max as i64,
            lo: 2,
            hi: MAX_CUMULANT_ORDER as i64,
        });
    }
    if p_max > 2 && gram.n() > MAX_CUMULANT_N {
        return Err(Error::Unsupported(format!(
            "dense trace powers capped at N = {MAX_CUMULANT_N}, got {}",
            gram.n()
        )));
    }
    Ok(())
}

/// `κ_p(V − E V) = 2^{p−1}(p−1)! tr(Σ^p)` for `2 <= p <= 8`.
pub fn trace_cumulant(gram: &IncrementGram, p: usize) -> Result<f64> {
    Ok(*trace_cumulants(gram, p)?.last().expect("nonempty"))
}

/// `[κ_2, …, κ_{p_max}]` of `V − E V`, sharing the matrix powers.
pub fn trace_cumulants(gram: &IncrementGram, p_max: usize) -> Result<Vec<f64>> {
    check_cumulant_request(gram, p_max)?;
    let mut out = vec![exact_var_vnl(gram)];
    if p_max > 2 {
        let traces = gram.to_dense().trace_powers(p_max);
        out.extend((3..=p_max).map(|p| cumulant_prefactor(p) * traces[p - 1]));
    }
    Ok(out)
}

/// Cumulants `[κ_2, …]` of `F_N = (V − E V)/√Var V`; `κ_2 = 1`.
pub fn normalized_cumulants(gram: &IncrementGram, p_max: usize) -> Result<Vec<f64>> {
    let raw = trace_cumulants(gram, p_max)?;
    let var = raw[0];
    if var <= 0.0 {
        return Err(Error::Domain {
            name: "variance",
            value: var,
            expected: "positive variance for normalization",
        });
    }
    Ok(raw
        .iter()
        .enumerate()
        .map(|(i, k)| if i == 0 { 1.0 } else { k / var.powf((i + 2) as f64 / 2.0) })
        .collect())
}

/// Fourth-moment CLT proxy `√(κ_4(F_N)/6)`.
pub fn fourth_moment_bound(gram: &IncrementGram) -> Result<f64> {
    let k = normalized_cumulants(gram, 4)?;
    Ok((k[2] / 6.0).max(0.0).sqrt())
}

/// Mean, variance and normalized cumulants from one Gram.
pub fn moment_report(
    gram: &IncrementGram,
    p_max: usize,
    regime: Option<RegimeTag>,
) -> Result<MomentReport> {
    Ok(MomentReport {
        mean: exact_mean(gram),
        variance: exact_var_vnl(gram),
        cumulants: normalized_cumulants(gram, p_max)?,
        regime,
    })
}

/// A quadrature value with the node count used and whether that count met
/// the `10ℓ` resolution rule for the oscillating integrands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadEstimate {
    pub value: f64,
    pub nodes: usize,
    pub under_resolved: bool,
}

/// Default node count per axis for the fixed-ℓ integrals.
pub fn default_quad_nodes(ell: u32) -> usize {
    10 * ell as usize + 40
}

/// `g(u) = ℓ(ℓ+1) P_ℓ(cos(uπ/2)) − P'_ℓ(cos(uπ/2)) cos(uπ/2)`, the scaled
/// curvature of `P_ℓ(cos(uπ/2))` that the second differences approach.
pub fn curvature_profile(ell: u32, u: f64) -> f64 {
    let c = (u * FRAC_PI_2).cos();
    let (p, d) = legendre_p_with_deriv(ell, c);
    let lf = ell as f64;
    lf * (lf + 1.0) * p - d * c
}

fn fixed_ell_prefactor(ell: u32) -> f64 {
    kernel_weight(ell).powi(2) * PI.powi(4) / 16.0
}

fn check_nodes(nodes: usize) -> Result<()> {
    if nodes == 0 {
        return Err(Error::Index {
            name: "quad_nodes",
            value: 0,
            lo: 1,
            hi: i64::MAX,
        });
    }
    Ok(())
}

/// `K_ℓ = ((2ℓ+1)/4π)² (π⁴/16) ∫₀¹ g(u)² du`.
///
/// This single-integral form treats every lag as if it occurred `N` times;
/// the constant that `N² Var V_{N,ℓ} / (2 C_ℓ²)` actually approaches is
/// [`k_ell_constant_lag_weighted`].
pub fn k_ell_constant(ell: u32, quad_nodes: usize) -> Result<QuadEstimate> {
    check_nodes(quad_nodes)?;
    let rule = GaussLegendre::new(quad_nodes);
    let integral = rule.integrate(0.0, 1.0, |u| curvature_profile(ell, u).powi(2));
    Ok(QuadEstimate {
        value: fixed_ell_prefactor(ell) * integral,
        nodes: quad_nodes,
        under_resolved: quad_nodes < 10 * ell as usize,
    })
}

/// `((2ℓ+1)/4π)² (π⁴/16) · 2∫₀¹ (1 − u) g(u)² du`, the limit of
/// `N² Var V_{N,ℓ} / (2 C_ℓ²)`. The weight `2(1 − u)` counts the pairs
/// `(i, j)` at lag `|i − j| = uN`.
pub fn k_ell_constant_lag_weighted(ell: u32, quad_nodes: usize) -> Result<QuadEstimate> {
    check_nodes(quad_nodes)?;
    let rule = GaussLegendre::new(quad_nodes);
    let integral =
        rule.integrate(0.0, 1.0, |u| 2.0 * (1.0 - u) * curvature_profile(ell, u).powi(2));
    Ok(QuadEstimate {
        value: fixed_ell_prefactor(ell) * integral,
        nodes: quad_nodes,
        under_resolved: quad_nodes < 10 * ell as usize,
    })
}

/// Nyström matrix `G_ab = √(w_a w_b) g(|x_a − x_b|)` on `[0, 1]`, so that
/// `tr(G^p)` is the tensor Gauss rule for `∫_{[0,1]^p} g(|x_1−x_2|)⋯g(|x_p−x_1|)`.
fn curvature_nystrom(ell: u32, nodes: usize) -> SymMatrix {
    let (x, w) = GaussLegendre::new(nodes).on_interval(0.0, 1.0);
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    SymMatrix::from_fn(nodes, |a, b| {
        sw[a] * sw[b] * curvature_profile(ell, (x[a] - x[b]).abs())
    })
}

fn check_limit_order(p: usize) -> Result<()> {
    if !(2..=4).contains(&p) {
        return Err(Error::Unsupported(format!(
            "limiting cumulants are evaluated for p in 2..=4 only, got {p}"
        )));
    }
    Ok(())
}

/// Limiting cumulant of `F_N` at fixed `ℓ`:
/// `2^{p−1}(p−1)! / (2^{p/2} I^{p/2}) · ∫_{[0,1]^p} g(|x_1−x_2|)⋯g(|x_p−x_1|) dx`
/// with the normalizer `I = ∫₀¹ g(x)² dx`.
///
/// With this normalizer the `p = 2` value is not 1; see
/// [`nclt_limit_cumulant_lag_weighted`] for the self-consistent version.
pub fn nclt_limit_cumulant(ell: u32, p: usize, quad_nodes: usize) -> Result<QuadEstimate> {
    check_limit_order(p)?;
    check_nodes(quad_nodes)?;
    let g = curvature_nystrom(ell, quad_nodes);
    let cyclic = g.trace_powers(p)[p - 1];
    let rule = GaussLegendre::new(quad_nodes);
    let norm = rule.integrate(0.0, 1.0, |u| curvature_profile(ell, u).powi(2));
    Ok(QuadEstimate {
        value: limit_cumulant_value(p, cyclic, norm),
        nodes: quad_nodes,
        under_resolved: quad_nodes < 10 * ell as usize,
    })
}

/// Limiting cumulant with the normalizer `I = ∫∫_{[0,1]²} g(|x−y|)² dx dy`,
/// the `p = 2` cyclic integral itself. This is the limit of the trace
/// cumulants and gives `κ_2 = 1`.
pub fn nclt_limit_cumulant_lag_weighted(
    ell: u32,
    p: usize,
    quad_nodes: usize,
) -> Result<QuadEstimate> {
    check_limit_order(p)?;
    check_nodes(quad_nodes)?;
    let g = curvature_nystrom(ell, quad_nodes);
    let traces = g.trace_powers(p.max(2));
    Ok(QuadEstimate {
        value: limit_cumulant_value(p, traces[p - 1], traces[1]),
        nodes: quad_nodes,
        under_resolved: quad_nodes < 10 * ell as usize,
    })
}

fn limit_cumulant_value(p: usize, cyclic: f64, norm: f64) -> f64 {
    let half = p as f64 / 2.0;
    cumulant_prefactor(p) * cyclic / (2f64.powf(half) * norm.powf(half))
}

/// Asymptotic `E V_{N,ℓ}` in each regime, with the leading constants
/// `(π/16)(2ℓ+1)ℓ(ℓ+1)C_ℓ/N` (fixed ℓ) and `(π²/8)(ℓ²/N²)` (ℓ/N → 0).
///
/// Both of those constants come from the expansion `1 − P_ℓ(cos h) ≈
/// P'_ℓ(1) h²`; the second-order Taylor term is half that, see
/// [`asymptotic_mean_second_order`].
pub fn asymptotic_mean(regime: RegimeTag, ell: u32, c_ell: f64, n: usize) -> f64 {
    let (lf, nf) = (ell as f64, n as f64);
    let base = 2.0 * nf * c_ell * kernel_weight(ell);
    match regime {
        RegimeTag::FixedEll => PI / 16.0 * (2.0 * lf + 1.0) * lf * (lf + 1.0) * c_ell / nf,
        RegimeTag::EllFaster => base,
        RegimeTag::EllComparable { c } => base * (1.0 - bessel_j_unchecked(BesselOrder::Zero, FRAC_PI_2 * c)),
        RegimeTag::EllSlower => base * PI * PI / 8.0 * (lf / nf).powi(2),
    }
}

/// Asymptotic `E V_{N,ℓ}` from `1 − P_ℓ(cos h) = P'_ℓ(1) h²/2 + O(h⁴)`
/// (fixed ℓ) and `1 − J_0(x) = x²/4 + O(x⁴)` (ℓ/N → 0). Identical to
/// [`asymptotic_mean`] in the `ℓ ≳ N` regimes.
pub fn asymptotic_mean_second_order(regime: RegimeTag, ell: u32, c_ell: f64, n: usize) -> f64 {
    let (lf, nf) = (ell as f64, n as f64);
    match regime {
        RegimeTag::FixedEll => PI / 32.0 * (2.0 * lf + 1.0) * lf * (lf + 1.0) * c_ell / nf,
        RegimeTag::EllSlower => {
            2.0 * nf * c_ell * kernel_weight(ell) * PI * PI / 16.0 * (lf / nf).powi(2)
        }
        other => asymptotic_mean(other, ell, c_ell, n),
    }
}

/// Asymptotic `Var V_{N,ℓ}`:
/// fixed ℓ → `2 K_ℓ C_ℓ²/N²` with [`k_ell_constant`];
/// ℓ ≳ N → `(2/π⁴) C_ℓ² ℓ N² ln N`; ℓ/N → 0 → `(π/128) C_ℓ² ℓ⁵ N⁻² ln N`.
pub fn asymptotic_var(regime: RegimeTag, ell: u32, c_ell: f64, n: usize) -> Result<f64> {
    let (lf, nf) = (ell as f64, n as f64);
    let c2 = c_ell * c_ell;
    Ok(match regime {
        RegimeTag::FixedEll => {
            2.0 * k_ell_constant(ell, default_quad_nodes(ell))?.value * c2 / (nf * nf)
        }
        RegimeTag::EllFaster | RegimeTag::EllComparable { .. } => {
            2.0 / PI.powi(4) * c2 * lf * nf * nf * nf.ln()
        }
        RegimeTag::EllSlower => PI / 128.0 * c2 * lf.powi(5) / (nf * nf) * nf.ln(),
    })
}

/// Predicted growth orders of the full-field mean and variance under
/// `C_ℓ ∝ ℓ^{-2-ε}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentOrders {
    pub mean_exponent: f64,
    pub var_exponent: f64,
    /// `N^{1−ε}`
    pub mean_order: f64,
    /// `N^{1−2ε} ln N`
    pub var_order: f64,
}

pub fn fullfield_moment_orders(epsilon: f64, n: usize) -> Result<MomentOrders> {
    check_domain(epsilon > 0.0 && epsilon < 0.5, "epsilon", epsilon, "0 < epsilon < 0.5")?;
    let nf = n as f64;
    Ok(MomentOrders {
        mean_exponent: 1.0 - epsilon,
        var_exponent: 1.0 - 2.0 * epsilon,
        mean_order: nf.powf(1.0 - epsilon),
        var_order: nf.powf(1.0 - 2.0 * epsilon) * nf.ln(),
    })
}

/// Regime-specific normalizers that replace `1 − P_ℓ(cos(π/2N))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ApproxVariant {
    /// `1`, for `N/ℓ → 0`.
    EllFaster,
    /// `1 − J_0(πc/2)`, for `ℓ/N → c`.
    EllComparable { c: f64 },
    /// `(π²/8)(ℓ²/N²)`, for `ℓ/N → 0`.
    EllSlower,
}

impl ApproxVariant {
    pub fn factor(&self, ell: u32, n: usize) -> f64 {
        match self {
            ApproxVariant::EllFaster => 1.0,
            ApproxVariant::EllComparable { c } => {
                1.0 - bessel_j_unchecked(BesselOrder::Zero, FRAC_PI_2 * c)
            }
            ApproxVariant::EllSlower => PI * PI / 8.0 * (ell as f64 / n as f64).powi(2),
        }
    }

    pub fn index(&self) -> u8 {
        match self {
            ApproxVariant::EllFaster => 1,
            ApproxVariant::EllComparable { .. } => 2,
            ApproxVariant::EllSlower => 3,
        }
    }
}

/// Exact bias `E[Ĉ^{(i)}/C_ℓ] − 1` of the approximate-normalizer estimator.
pub fn estimator_bias(variant: ApproxVariant, ell: u32, n: usize) -> f64 {
    let exact = 1.0 - legendre_p_unchecked(ell, (FRAC_PI_2 / n as f64).cos());
    exact / variant.factor(ell, n) - 1.0
}

/// Exact mean of `V_{N,ℓ}` for a grid, as a convenience over [`exact_mean_vnl`].
pub fn exact_mean_on(ell: u32, c_ell: f64, grid: &LineGrid) -> f64 {
    exact_mean_vnl(ell, c_ell, grid.n())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::increment_gram_fl;

    fn grid(n: usize) -> LineGrid {
        LineGrid::new(n).unwrap()
    }

    #[test]
    fn mean_closed_form() {
        let v = exact_mean_vnl(1, 1.0, 2);
        let want = 3.0 / PI * (1.0 - (PI / 4.0).cos());
        assert!((v - want).abs() < 1e-15);
        assert!((v - 0.279_692_4).abs() < 1e-7);
    }

    #[test]
    fn mean_is_gram_trace() {
        let g = increment_gram_fl(5, 2.0, &grid(100));
        let a = exact_mean_vnl(5, 2.0, 100);
        assert!((a - exact_mean(&g)).abs() < 1e-12 * a);
    }

    #[test]
    fn variance_of_single_increment() {
        let g = increment_gram_fl(1, 1.0, &grid(1));
        let v = exact_var_vnl(&g);
        assert!((v - 2.0 * (3.0 / (2.0 * PI)).powi(2)).abs() < 1e-15);
        assert!((v - 0.455_945_3).abs() < 1e-7);
        let zero = IncrementGram::from_lags(vec![0.0; 7]).unwrap();
        assert_eq!(exact_var_vnl(&zero), 0.0);
    }

    #[test]
    fn second_cumulant_is_variance() {
        let g = increment_gram_fl(4, 1.3, &grid(33));
        assert_eq!(trace_cumulant(&g, 2).unwrap(), exact_var_vnl(&g));
        // dense route agrees with the Toeplitz route
        let dense = g.to_dense();
        let t2 = dense.trace_powers(2)[1];
        assert!((2.0 * t2 - exact_var_vnl(&g)).abs() < 1e-12 * exact_var_vnl(&g));
    }

    #[test]
    fn chi_square_cumulants_for_one_increment() {
        let g = IncrementGram::from_lags(vec![0.37]).unwrap();
        let k = normalized_cumulants(&g, 4).unwrap();
        assert_eq!(k[0], 1.0);
        assert!((k[1] - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((k[2] - 12.0).abs() < 1e-12);
        assert!((fourth_moment_bound(&g).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cumulant_order_limits() {
        let g = increment_gram_fl(2, 1.0, &grid(8));
        assert!(trace_cumulant(&g, 1).is_err());
        assert!(trace_cumulant(&g, 9).is_err());
        assert!(trace_cumulant(&g, 8).is_ok());
    }

    #[test]
    fn fourth_moment_bound_is_scale_free_and_decreasing() {
        let g = increment_gram_fl(64, 1.0, &grid(64));
        let a = fourth_moment_bound(&g).unwrap();
        let b = fourth_moment_bound(&g.scaled(17.5)).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
        let g256 = increment_gram_fl(256, 1.0, &grid(256));
        assert!(fourth_moment_bound(&g256).unwrap() < a);
    }

    #[test]
    fn k_constant_for_degree_one() {
        let k = k_ell_constant(1, 64).unwrap();
        assert!((k.value - 9.0 * PI * PI / 512.0).abs() < 1e-12);
        assert!(!k.under_resolved);
        // 2∫(1−u)cos²(uπ/2) du = 1/2 + 2/π²
        let kw = k_ell_constant_lag_weighted(1, 64).unwrap();
        assert!((kw.value - (9.0 * PI * PI / 512.0 + 9.0 / 128.0)).abs() < 1e-12);
        assert!(k_ell_constant(8, 20).unwrap().under_resolved);
    }

    #[test]
    fn k_constant_converges_in_nodes() {
        let a = k_ell_constant(6, 60).unwrap().value;
        let b = k_ell_constant(6, 120).unwrap().value;
        assert!((a - b).abs() <= 1e-10 * b);
    }

    #[test]
    fn lag_weighted_k_is_the_variance_limit() {
        let ell = 4;
        let n = 2048;
        let g = increment_gram_fl(ell, 1.0, &grid(n));
        let scaled = (n * n) as f64 * exact_var_vnl(&g) / 2.0;
        let kw = k_ell_constant_lag_weighted(ell, 80).unwrap().value;
        assert!((scaled / kw - 1.0).abs() < 0.01, "{scaled} vs {kw}");
        // degree 2 is the one case where both integrals coincide
        let a = k_ell_constant(2, 60).unwrap().value;
        let b = k_ell_constant_lag_weighted(2, 60).unwrap().value;
        assert!((a - b).abs() < 1e-10 * a);
    }

    #[test]
    fn limit_cumulants_for_degree_one() {
        // g(u) = cos(uπ/2) is a rank-two kernel with eigenvalues 1/2 ± 1/π
        let (hi, lo) = (0.5 + 1.0 / PI, 0.5 - 1.0 / PI);
        let tr = |p: i32| hi.powi(p) + lo.powi(p);
        let want3 = 8.0 * tr(3) / (2f64.powf(1.5) * tr(2).powf(1.5));
        let got3 = nclt_limit_cumulant_lag_weighted(1, 3, 40).unwrap().value;
        assert!((got3 - want3).abs() < 1e-8);
        let want4 = 48.0 * tr(4) / (4.0 * tr(2).powi(2));
        let got4 = nclt_limit_cumulant_lag_weighted(1, 4, 40).unwrap().value;
        assert!((got4 - want4).abs() < 1e-8);
        assert!((nclt_limit_cumulant_lag_weighted(1, 2, 40).unwrap().value - 1.0).abs() < 1e-12);
        // single-integral normalizer ∫g² = 1/2
        let single = nclt_limit_cumulant(1, 3, 40).unwrap().value;
        assert!((single - 8.0 * tr(3) / (2f64.powf(1.5) * 0.5f64.powf(1.5))).abs() < 1e-8);
        assert!(nclt_limit_cumulant(1, 5, 40).is_err());
    }

    #[test]
    fn limit_cumulants_nonzero_for_small_degrees() {
        for ell in 1..=3 {
            for p in [3, 4] {
                let v = nclt_limit_cumulant_lag_weighted(ell, p, 60).unwrap().value;
                assert!(v.is_finite() && v.abs() > 1e-3, "l={ell} p={p}: {v}");
                let w = nclt_limit_cumulant(ell, p, 60).unwrap().value;
                assert!(w.is_finite() && w.abs() > 1e-3);
            }
        }
    }

    #[test]
    fn trace_kappa3_approaches_limit_at_degree_one() {
        let limit = nclt_limit_cumulant_lag_weighted(1, 3, 40).unwrap().value;
        let gap = |n: usize| {
            let g = increment_gram_fl(1, 1.0, &grid(n));
            (normalized_cumulants(&g, 3).unwrap()[1] - limit).abs()
        };
        let (a, b, c) = (gap(32), gap(64), gap(128));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn asymptotic_mean_examples() {
        let v = asymptotic_mean(RegimeTag::EllFaster, 4096, 1.0, 64);
        assert!((v - 128.0 * 8193.0 / (4.0 * PI)).abs() < 1e-9);
        assert!((v - 83_453.21).abs() < 0.01);
        // comparable factor 1 − J0(πc/2) → π²c²/16 as c → 0, which is the
        // second-order ℓ ≪ N form at ℓ = cN
        let (ell, n) = (10, 10_000);
        let c = ell as f64 / n as f64;
        let comparable = asymptotic_mean(RegimeTag::EllComparable { c }, ell, 1.0, n);
        let slower2 = asymptotic_mean_second_order(RegimeTag::EllSlower, ell, 1.0, n);
        assert!((comparable / slower2 - 1.0).abs() < 1e-6);
        let slower = asymptotic_mean(RegimeTag::EllSlower, ell, 1.0, n);
        assert!((slower / slower2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_ell_mean_ratio() {
        let ell = 8;
        let mut last_gap = f64::INFINITY;
        for k in 7..=12 {
            let n = 1 << k;
            let exact = exact_mean_vnl(ell, 1.0, n);
            let gap = (exact / asymptotic_mean_second_order(RegimeTag::FixedEll, ell, 1.0, n) - 1.0).abs();
            assert!(gap < last_gap);
            last_gap = gap;
            // the P'(1)h² expansion overshoots by exactly two
            let r = exact / asymptotic_mean(RegimeTag::FixedEll, ell, 1.0, n);
            assert!((r - 0.5).abs() < 0.01);
        }
        assert!(last_gap < 0.01);
    }

    #[test]
    fn asymptotic_var_examples() {
        let n = 64;
        let v = asymptotic_var(RegimeTag::FixedEll, 1, 1.0, n).unwrap();
        let want = 2.0 * (9.0 * PI * PI / 512.0) / (n * n) as f64;
        assert!((v - want).abs() < 1e-12 * want);
        let (l, n) = (1u32 << 14, 128usize);
        let v = asymptotic_var(RegimeTag::EllFaster, l, 1.0, n).unwrap();
        let want = 2.0 / PI.powi(4) * l as f64 * (n * n) as f64 * (n as f64).ln();
        assert!((v - want).abs() < 1e-9 * want);
        let (l, n) = (16u32, 2048usize);
        let v = asymptotic_var(RegimeTag::EllSlower, l, 1.0, n).unwrap();
        let want = PI / 128.0 * (l as f64).powi(5) / (n * n) as f64 * (n as f64).ln();
        assert!((v - want).abs() < 1e-12 * want);
    }

    #[test]
    fn variance_regimes_share_order_at_comparable_scale() {
        // ℓ = cN puts both outer forms on C² N³ ln N; only the constants differ.
        let c = 0.5;
        let ratio = |n: usize| {
            let l = (c * n as f64) as u32;
            let a = asymptotic_var(RegimeTag::EllFaster, l, 1.0, n).unwrap();
            let b = asymptotic_var(RegimeTag::EllSlower, l, 1.0, n).unwrap();
            let m = asymptotic_var(RegimeTag::EllComparable { c }, l, 1.0, n).unwrap();
            (a / m, b / m)
        };
        let (a1, b1) = ratio(1024);
        let (a2, b2) = ratio(8192);
        assert!((a1 - a2).abs() < 1e-9 && (b1 - b2).abs() < 1e-9);
    }

    #[test]
    fn fullfield_orders() {
        let o = fullfield_moment_orders(0.2, 1000).unwrap();
        assert!((o.mean_exponent - 0.8).abs() < 1e-15);
        assert!((o.var_exponent - 0.6).abs() < 1e-15);
        assert!((o.mean_order - 1000f64.powf(0.8)).abs() < 1e-9);
        let near = fullfield_moment_orders(1e-9, 1000).unwrap();
        assert!((near.mean_order / 1000.0 - 1.0).abs() < 1e-6);
        assert!(fullfield_moment_orders(0.5, 10).is_err());
        assert!(fullfield_moment_orders(0.0, 10).is_err());
    }

    #[test]
    fn bias_examples() {
        assert!(estimator_bias(ApproxVariant::EllFaster, 1, 1).abs() < 1e-15);
        let (l, n) = (4096, 64);
        let b = estimator_bias(ApproxVariant::EllFaster, l, n);
        let p = legendre_p_unchecked(l, (PI / 128.0).cos());
        assert!((b + p).abs() < 1e-15);
        let envelope = (2.0 / (PI * l as f64 * (PI / 128.0).sin())).sqrt();
        assert!(b.abs() <= envelope);
        // (π²/8)(ℓ²/N²) is twice the Taylor value of 1 − P_ℓ(cos h), so the
        // third variant settles near (ℓ+1)/(2ℓ) − 1 rather than zero.
        let b3 = estimator_bias(ApproxVariant::EllSlower, 8, 512);
        assert!((b3 - (9.0 / 16.0 - 1.0)).abs() < 1e-3, "{b3}");
        let c = 0.75;
        let b2 = estimator_bias(ApproxVariant::EllComparable { c }, 768, 1024);
        assert!(b2.abs() < 0.01, "{b2}");
    }
}
