//! Legendre polynomials, meridian-restricted spherical harmonics, Bessel
//! functions of order 0 and 2, and the Hilb approximation of `P_ℓ(cos θ)`.
//!
//! Everything here is a pure function of its arguments.

use std::f64::consts::{FRAC_PI_4, PI};

use crate::error::{check_domain, Error, Result};

/// Largest degree accepted by the public evaluators. The recurrences are
/// linear in the degree, so this is a cost cap rather than an accuracy one.
pub const MAX_DEGREE: u32 = 100_000;

fn check_degree(ell: u32) -> Result<()> {
    if ell > MAX_DEGREE {
        return Err(Error::Index {
            name: "ell",
            value: ell as i64,
            lo: 0,
            hi: MAX_DEGREE as i64,
        });
    }
    Ok(())
}

fn check_unit_interval(x: f64) -> Result<()> {
    check_domain(x.abs() <= 1.0, "x", x, "|x| <= 1")
}

/// `P_ℓ(x)` by the upward three-term recurrence.
pub fn legendre_p(ell: u32, x: f64) -> Result<f64> {
    check_degree(ell)?;
    check_unit_interval(x)?;
    Ok(legendre_p_unchecked(ell, x))
}

/// Recurrence without argument checks; callers guarantee `|x| <= 1`.
#[inline]
pub(crate) fn legendre_p_unchecked(ell: u32, x: f64) -> f64 {
    match ell {
        0 => 1.0,
        1 => x,
        _ => {
            let mut p_prev = 1.0;
            let mut p = x;
            for k in 1..ell {
                let kf = k as f64;
                let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
                p_prev = p;
                p = p_next;
            }
            p
        }
    }
}

/// `(P_ℓ(x), P'_ℓ(x))` in one pass.
///
/// The derivative uses `P'_{k+1} = P'_{k-1} + (2k+1) P_k`, which has no
/// `1/(1-x²)` factor and stays accurate near the poles where the Gauss
/// nodes of the fixed-frequency integrals cluster.
#[inline]
pub(crate) fn legendre_p_with_deriv(ell: u32, x: f64) -> (f64, f64) {
    if ell == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    let (mut d_prev, mut d) = (0.0, 1.0);
    for k in 1..ell {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        let d_next = d_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d)
}

/// `P'_ℓ(x)`. At `x = ±1` the closed form `P'_ℓ(±1) = (±1)^{ℓ+1} ℓ(ℓ+1)/2`
/// is returned directly.
pub fn legendre_p_deriv(ell: u32, x: f64) -> Result<f64> {
    check_degree(ell)?;
    check_unit_interval(x)?;
    let boundary = 0.5 * ell as f64 * (ell as f64 + 1.0);
    if x == 1.0 {
        return Ok(boundary);
    }
    if x == -1.0 {
        return Ok(if ell % 2 == 1 { boundary } else { -boundary });
    }
    Ok(legendre_p_with_deriv(ell, x).1)
}

/// Fully normalized real harmonic on the meridian of longitude zero,
/// `λ_{ℓm}(θ) = N_{ℓm} P_ℓ^m(cos θ)` with
/// `N_{ℓm}² = (2ℓ+1)(ℓ-m)! / (4π(ℓ+m)!)` and no Condon–Shortley phase.
pub fn real_harmonic_meridian(ell: u32, m: u32, theta: f64) -> Result<f64> {
    check_degree(ell)?;
    if m > ell {
        return Err(Error::Index {
            name: "m",
            value: m as i64,
            lo: 0,
            hi: ell as i64,
        });
    }
    check_meridian_angle(theta)?;
    let (s, c) = theta.sin_cos();
    Ok(normalized_alf_column(ell, m, s, c))
}

pub(crate) fn check_meridian_angle(theta: f64) -> Result<()> {
    check_domain(
        (0.0..=PI).contains(&theta),
        "theta",
        theta,
        "0 <= theta <= pi",
    )
}

/// `λ_{mm}` from the sectoral recurrence.
#[inline]
fn sectoral(m: u32, sin_theta: f64) -> f64 {
    let mut v = 0.5 / PI.sqrt();
    for k in 1..=m {
        let kf = k as f64;
        v *= ((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * sin_theta;
        if v == 0.0 {
            break;
        }
    }
    v
}

/// Walks the normalized recurrence in ℓ at fixed `m`.
fn normalized_alf_column(ell: u32, m: u32, sin_theta: f64, cos_theta: f64) -> f64 {
    let pmm = sectoral(m, sin_theta);
    if ell == m || pmm == 0.0 {
        return if ell == m { pmm } else { 0.0 };
    }
    let mf = m as f64;
    let mut prev = pmm;
    let mut cur = (2.0 * mf + 3.0).sqrt() * cos_theta * pmm;
    for l in (m + 2)..=ell {
        let lf = l as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let lm1 = lf - 1.0;
        let b = ((lm1 * lm1 - mf * mf) / (4.0 * lm1 * lm1 - 1.0)).sqrt();
        let next = a * (cos_theta * cur - b * prev);
        prev = cur;
        cur = next;
    }
    cur
}

/// All of `λ_{ℓ0}(θ), …, λ_{ℓℓ}(θ)` for one angle.
pub fn meridian_harmonics(ell: u32, theta: f64) -> Result<Vec<f64>> {
    check_degree(ell)?;
    check_meridian_angle(theta)?;
    let (s, c) = theta.sin_cos();
    Ok((0..=ell).map(|m| normalized_alf_column(ell, m, s, c)).collect())
}

/// Order of [`bessel_j`]; only the two orders the asymptotics need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselOrder {
    Zero,
    Two,
}

impl BesselOrder {
    fn nu(self) -> u32 {
        match self {
            BesselOrder::Zero => 0,
            BesselOrder::Two => 2,
        }
    }
}

const SERIES_LIMIT: f64 = 8.0;
const HANKEL_LIMIT: f64 = 25.0;

/// `J_0(x)` or `J_2(x)` for `x >= 0`, absolute error below 1e-12.
///
/// Power series below 8, Miller's backward recurrence on [8, 25) and the
/// Hankel asymptotic expansion from 25 on.
pub fn bessel_j(order: BesselOrder, x: f64) -> Result<f64> {
    check_domain(x >= 0.0 && x.is_finite(), "x", x, "finite x >= 0")?;
    Ok(bessel_j_unchecked(order, x))
}

pub(crate) fn bessel_j_unchecked(order: BesselOrder, x: f64) -> f64 {
    if x < SERIES_LIMIT {
        bessel_series(order.nu(), x)
    } else if x < HANKEL_LIMIT {
        bessel_miller(order.nu(), x)
    } else {
        bessel_hankel(order.nu(), x)
    }
}

fn bessel_series(nu: u32, x: f64) -> f64 {
    let q = 0.25 * x * x;
    // leading term (x/2)^ν / ν!
    let mut term = match nu {
        0 => 1.0,
        _ => q / 2.0,
    };
    let mut sum = term;
    let nuf = nu as f64;
    for k in 1..200 {
        let kf = k as f64;
        term *= -q / (kf * (kf + nuf));
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) && term.abs() < 1e-20 {
            break;
        }
    }
    sum
}

fn bessel_miller(nu: u32, x: f64) -> f64 {
    let start = 2 * ((x as usize + 40) / 2);
    let mut j_next = 0.0;
    let mut j_cur = 1e-30;
    let mut norm = 0.0;
    let mut target = 0.0;
    for k in (1..=start).rev() {
        // J_{k-1} = (2k/x) J_k - J_{k+1}
        let j_prev = 2.0 * k as f64 / x * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        let idx = k - 1;
        if idx == nu as usize {
            target = j_cur;
        }
        if idx % 2 == 0 && idx > 0 {
            norm += 2.0 * j_cur;
        }
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            norm *= 1e-250;
            target *= 1e-250;
        }
    }
    norm += j_cur;
    target / norm
}

fn bessel_hankel(nu: u32, x: f64) -> f64 {
    let mu = 4.0 * (nu as f64).powi(2);
    let mut p = 0.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 0..60 {
        if k > 0 {
            let odd = (2 * k - 1) as f64;
            term *= (mu - odd * odd) / (k as f64 * 8.0 * x);
        }
        if term.abs() > last {
            break;
        }
        last = term.abs();
        match k % 4 {
            0 => p += term,
            1 => q += term,
            2 => p -= term,
            _ => q -= term,
        }
        if term.abs() < 1e-17 {
            break;
        }
    }
    let chi = x - nu as f64 * PI / 2.0 - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Leading Hilb term `√(a / sin a) · J_0((ℓ+½) a)` approximating
/// `P_ℓ(cos a)`, where `a = ψ/N`.
pub fn hilb_approx_p(ell: u32, psi_over_n: f64) -> Result<f64> {
    check_degree(ell)?;
    check_domain(
        psi_over_n > 0.0 && psi_over_n < PI,
        "psi_over_n",
        psi_over_n,
        "0 < psi/N < pi",
    )?;
    let a = psi_over_n;
    let ratio = if a < 1e-4 {
        1.0 + a * a / 6.0
    } else {
        a / a.sin()
    };
    Ok(ratio.sqrt() * bessel_j_unchecked(BesselOrder::Zero, (ell as f64 + 0.5) * a))
}
