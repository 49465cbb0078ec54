//! Covariance kernels along the meridian grid and the increment Gram
//! matrices built from them.
//!
//! For an isotropic field the covariance between two grid points depends
//! only on their lag, so every increment Gram matrix here is a symmetric
//! Toeplitz matrix. [`IncrementGram`] stores its first row and expands to a
//! dense [`SymMatrix`] only when a trace power is needed.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_domain, Error, Result};
use crate::linalg::SymMatrix;
use crate::specfun::{self, legendre_p_unchecked};

/// Upper limit on the number of increments accepted by [`LineGrid`].
pub const MAX_GRID_N: usize = 8192;

/// Angular power spectrum `C_ℓ`, truncated at `l_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PowerSpectrum {
    /// `values[ℓ] = C_ℓ` for `ℓ = 0..=l_max`.
    Explicit { values: Vec<f64> },
    /// `C_ℓ = amplitude · ℓ^(-2-epsilon)` for `1 <= ℓ <= l_max`, `C_0 = 0`.
    PowerLaw {
        amplitude: f64,
        epsilon: f64,
        l_max: u32,
    },
}

impl PowerSpectrum {
    pub fn power_law(amplitude: f64, epsilon: f64, l_max: u32) -> Result<Self> {
        let s = PowerSpectrum::PowerLaw {
            amplitude,
            epsilon,
            l_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        let s = PowerSpectrum::Explicit { values };
        s.validate()?;
        Ok(s)
    }

    /// Spectrum with a single nonzero degree.
    pub fn single(ell: u32, c_ell: f64) -> Result<Self> {
        let mut values = vec![0.0; ell as usize + 1];
        values[ell as usize] = c_ell;
        Self::explicit(values)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PowerSpectrum::Explicit { values } => {
                if values.len() < 2 {
                    return Err(Error::Config(
                        "explicit spectrum needs values for l = 0..=l_max with l_max >= 1".into(),
                    ));
                }
                if values.len() - 1 > specfun::MAX_DEGREE as usize {
                    return Err(Error::Config("explicit spectrum exceeds the degree cap".into()));
                }
                for v in values {
                    check_domain(v.is_finite() && *v >= 0.0, "C_l", *v, "finite C_l >= 0")?;
                }
            }
            PowerSpectrum::PowerLaw {
                amplitude,
                epsilon,
                l_max,
            } => {
                check_domain(*amplitude > 0.0, "amplitude", *amplitude, "amplitude > 0")?;
                check_domain(*epsilon > 0.0, "epsilon", *epsilon, "epsilon > 0")?;
                if *l_max < 1 || *l_max > specfun::MAX_DEGREE {
                    return Err(Error::Index {
                        name: "l_max",
                        value: *l_max as i64,
                        lo: 1,
                        hi: specfun::MAX_DEGREE as i64,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn l_max(&self) -> u32 {
        match self {
            PowerSpectrum::Explicit { values } => (values.len() - 1) as u32,
            PowerSpectrum::PowerLaw { l_max, .. } => *l_max,
        }
    }

    pub fn c(&self, ell: u32) -> f64 {
        match self {
            PowerSpectrum::Explicit { values } => values.get(ell as usize).copied().unwrap_or(0.0),
            PowerSpectrum::PowerLaw {
                amplitude,
                epsilon,
                l_max,
            } => {
                if ell == 0 || ell > *l_max {
                    0.0
                } else {
                    amplitude * (ell as f64).powf(-2.0 - epsilon)
                }
            }
        }
    }

    /// Same spectrum with a different truncation degree.
    pub fn with_l_max(&self, l_max: u32) -> Self {
        match self {
            PowerSpectrum::Explicit { values } => {
                let mut v = values.clone();
                v.resize(l_max as usize + 1, 0.0);
                PowerSpectrum::Explicit { values: v }
            }
            PowerSpectrum::PowerLaw {
                amplitude, epsilon, ..
            } => PowerSpectrum::PowerLaw {
                amplitude: *amplitude,
                epsilon: *epsilon,
                l_max,
            },
        }
    }

    /// Kernel weights `C_ℓ (2ℓ+1) / 4π` for `ℓ = 0..=l_max`.
    pub fn kernel_weights(&self) -> Vec<f64> {
        (0..=self.l_max())
            .map(|l| self.c(l) * (2.0 * l as f64 + 1.0) / (4.0 * PI))
            .collect()
    }

    /// Pointwise variance `Σ_ℓ C_ℓ(2ℓ+1)/4π` of the truncated field.
    pub fn pointwise_variance(&self) -> f64 {
        self.kernel_weights().iter().sum()
    }

    /// Upper bound on `Σ_{ℓ>l_max} 2 C_ℓ(2ℓ+1)/4π`, which dominates the
    /// truncation error of every increment covariance entry.
    pub fn tail_bound(&self) -> f64 {
        match self {
            PowerSpectrum::Explicit { .. } => 0.0,
            PowerSpectrum::PowerLaw {
                amplitude,
                epsilon,
                l_max,
            } => {
                // (2ℓ+1) ℓ^{-2-ε} <= (2 + 1/L) ℓ^{-1-ε} for ℓ > L, and the sum of a
                // decreasing function over ℓ > L is below its integral from L.
                let l = *l_max as f64;
                2.0 * amplitude / (4.0 * PI) * (2.0 + 1.0 / l) * l.powf(-epsilon) / epsilon
            }
        }
    }

    /// Midpoint-rule estimate of the discarded pointwise variance
    /// `Σ_{ℓ>l_max} C_ℓ(2ℓ+1)/4π`, i.e. `∫_{L+½}^∞` of the summand.
    pub fn tail_variance(&self) -> f64 {
        match self {
            PowerSpectrum::Explicit { .. } => 0.0,
            PowerSpectrum::PowerLaw {
                amplitude,
                epsilon,
                l_max,
            } => {
                let a = *l_max as f64 + 0.5;
                let e = *epsilon;
                amplitude / (4.0 * PI) * (2.0 * a.powf(-e) / e + a.powf(-1.0 - e) / (1.0 + e))
            }
        }
    }
}

/// The `N + 1` points `θ_i = (i/N)(π/2)`, `i = 1..=N+1`, on one meridian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineGrid {
    n: usize,
}

impl LineGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_GRID_N {
            return Err(Error::Index {
                name: "n",
                value: n as i64,
                lo: 1,
                hi: MAX_GRID_N as i64,
            });
        }
        Ok(LineGrid { n })
    }

    /// Number of increments `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        FRAC_PI_2 / self.n as f64
    }

    /// `θ_i` for the 1-based index `i`.
    pub fn theta(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (1..=self.n + 1).map(|i| self.theta(i)).collect()
    }
}

/// `E[f_ℓ(θ1) f_ℓ(θ2)] = C_ℓ (2ℓ+1)/4π · P_ℓ(cos|θ1 − θ2|)`.
pub fn kernel_fl(ell: u32, c_ell: f64, theta1: f64, theta2: f64) -> Result<f64> {
    check_domain(c_ell >= 0.0, "c_ell", c_ell, "c_ell >= 0")?;
    specfun::check_meridian_angle(theta1)?;
    specfun::check_meridian_angle(theta2)?;
    let x = (theta1 - theta2).abs().cos();
    Ok(c_ell * (2.0 * ell as f64 + 1.0) / (4.0 * PI) * specfun::legendre_p(ell, x)?)
}

/// `ΔΔP_ℓ(k, N) = 2P_ℓ(cos kh) − P_ℓ(cos (k−1)h) − P_ℓ(cos (k+1)h)`, `h = π/2N`.
pub fn second_difference_p(ell: u32, k: usize, n: usize) -> Result<f64> {
    if n < 2 || k < 1 || k > n - 1 {
        return Err(Error::Index {
            name: "k",
            value: k as i64,
            lo: 1,
            hi: n as i64 - 1,
        });
    }
    let h = FRAC_PI_2 / n as f64;
    let p = |j: usize| legendre_p_unchecked(ell, (j as f64 * h).cos());
    Ok(2.0 * p(k) - p(k - 1) - p(k + 1))
}

/// `K(k h) = Σ_ℓ w_ℓ P_ℓ(cos k h)` for `k = 0..=max_lag`.
pub(crate) fn lag_kernel(weights: &[f64], spacing: f64, max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .into_par_iter()
        .map(|k| {
            let x = (k as f64 * spacing).cos();
            weighted_legendre_sum(weights, x)
        })
        .collect()
}

fn weighted_legendre_sum(weights: &[f64], x: f64) -> f64 {
    let mut acc = weights[0];
    if weights.len() == 1 {
        return acc;
    }
    let (mut p_prev, mut p) = (1.0, x);
    acc += weights[1] * p;
    for (k, w) in weights.iter().enumerate().skip(2) {
        let kf = (k - 1) as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
        acc += w * p;
    }
    acc
}

/// Covariance matrix of the increment vector `Δ_i = f(θ_{i+1}) − f(θ_i)`.
///
/// Stored as the Toeplitz first row: `lags[k] = E[Δ_i Δ_{i+k}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementGram {
    lags: Vec<f64>,
}

impl IncrementGram {
    pub fn from_lags(lags: Vec<f64>) -> Result<Self> {
        if lags.is_empty() {
            return Err(Error::Length {
                what: "increment gram lags",
                expected: 1,
                got: 0,
            });
        }
        Ok(IncrementGram { lags })
    }

    /// Increment covariances from the kernel sampled at lags `0..=N`.
    pub(crate) fn from_kernel_lags(kernel: &[f64]) -> Self {
        let n = kernel.len() - 1;
        let mut lags = Vec::with_capacity(n);
        lags.push(2.0 * (kernel[0] - kernel[1]));
        for k in 1..n {
            lags.push(2.0 * kernel[k] - kernel[k - 1] - kernel[k + 1]);
        }
        IncrementGram { lags }
    }

    pub fn n(&self) -> usize {
        self.lags.len()
    }

    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    /// Entry `(i, j)`, 0-based.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.lags[i.abs_diff(j)]
    }

    pub fn to_dense(&self) -> SymMatrix {
        SymMatrix::from_fn(self.n(), |i, j| self.entry(i, j))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        IncrementGram {
            lags: self.lags.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.n() as f64 * self.lags[0]
    }

    /// `Σ_{i,j} σ_ij²` from the Toeplitz structure in O(N).
    pub fn frobenius_sq(&self) -> f64 {
        let n = self.n();
        let off: f64 = self.lags[1..]
            .iter()
            .enumerate()
            .map(|(k, v)| (n - k - 1) as f64 * v * v)
            .sum();
        n as f64 * self.lags[0] * self.lags[0] + 2.0 * off
    }
}

/// Increment Gram of the single component `f_ℓ`.
pub fn increment_gram_fl(ell: u32, c_ell: f64, grid: &LineGrid) -> IncrementGram {
    let w = c_ell * (2.0 * ell as f64 + 1.0) / (4.0 * PI);
    let kernel: Vec<f64> = (0..=grid.n())
        .into_par_iter()
        .map(|k| w * legendre_p_unchecked(ell, (k as f64 * grid.spacing()).cos()))
        .collect();
    IncrementGram::from_kernel_lags(&kernel)
}

/// Gram of the truncated full field together with the tail bound of the
/// discarded degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGram {
    pub gram: IncrementGram,
    pub l_max: u32,
    pub tail_bound: f64,
}

impl TruncatedGram {
    /// The Gram with the discarded degrees restored as white increments.
    ///
    /// Degrees far above `N` oscillate many times per grid step, so their
    /// increments are nearly uncorrelated with variance `2 C_ℓ(2ℓ+1)/4π`;
    /// adding `2·tail_variance` to the diagonal keeps the untruncated field's
    /// mean exact up to the midpoint-rule error and its variance to the
    /// neglected off-diagonal tail. Meaningful when `l_max ≫ N`.
    pub fn with_white_tail(&self, spectrum: &PowerSpectrum) -> IncrementGram {
        let mut lags = self.gram.lags().to_vec();
        lags[0] += 2.0 * spectrum.tail_variance();
        IncrementGram::from_lags(lags).expect("nonempty lags")
    }
}

pub fn increment_gram_f(spectrum: &PowerSpectrum, grid: &LineGrid) -> TruncatedGram {
    let kernel = lag_kernel(&spectrum.kernel_weights(), grid.spacing(), grid.n());
    TruncatedGram {
        gram: IncrementGram::from_kernel_lags(&kernel),
        l_max: spectrum.l_max(),
        tail_bound: spectrum.tail_bound(),
    }
}

/// Smallest power-law truncation (doubling from 64) whose tail bound is at
/// most `rel_tol` times the leading diagonal entry, capped at the degree cap.
///
/// For small `epsilon` the tail decays like `L^{-ε}` and the cap is usually
/// what stops the search; the returned gram carries the honest bound.
pub fn default_l_max(amplitude: f64, epsilon: f64, grid: &LineGrid, rel_tol: f64) -> Result<u32> {
    let mut l_max = 64u32;
    loop {
        let spec = PowerSpectrum::power_law(amplitude, epsilon, l_max)?;
        let tail = spec.tail_bound();
        // the leading diagonal entry only grows with l_max, so the l_max=64
        // diagonal is a conservative reference
        let diag = increment_gram_f(&spec.with_l_max(l_max.min(64)), grid).gram.lags()[0];
        if tail <= rel_tol * diag || l_max >= specfun::MAX_DEGREE {
            return Ok(l_max.min(specfun::MAX_DEGREE));
        }
        l_max = l_max.saturating_mul(2).min(specfun::MAX_DEGREE);
    }
}

/// Sphere-valued fractional Brownian motion observed at two times.
///
/// The spatial kernel is `Σ_ℓ A_ℓ (2ℓ+1) P_ℓ(cos d)` with no `1/4π`, unlike
/// the `f_ℓ` kernels; the `A_ℓ` sequence is carried in `spectrum` and its
/// `ℓ = 0` entry is honoured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbmSpec {
    pub hurst: f64,
    pub spectrum: PowerSpectrum,
    pub t: f64,
    pub s: f64,
}

impl FbmSpec {
    pub fn validate(&self) -> Result<()> {
        check_domain(self.hurst > 0.0 && self.hurst < 1.0, "hurst", self.hurst, "0 < H < 1")?;
        check_domain(self.t > 0.0, "t", self.t, "t > 0")?;
        check_domain(self.s > 0.0, "s", self.s, "s > 0")?;
        check_domain(self.t != self.s, "t", self.t, "t != s")?;
        self.spectrum.validate()
    }

    /// `A_ℓ (2ℓ+1)` for `ℓ = 0..=l_max`.
    pub fn spatial_weights(&self) -> Vec<f64> {
        (0..=self.spectrum.l_max())
            .map(|l| self.spectrum.c(l) * (2.0 * l as f64 + 1.0))
            .collect()
    }
}

/// fBm covariance `R_H(t, s) = ½(t^{2H} + s^{2H} − |t − s|^{2H})`.
pub fn fbm_time_covariance(hurst: f64, t: f64, s: f64) -> f64 {
    let e = 2.0 * hurst;
    0.5 * (t.powf(e) + s.powf(e) - (t - s).abs().powf(e))
}

/// Block covariance of the increments of `(B_t, B_s)` along the grid:
/// block `(a, b)` is `R_H(a, b)` times the spatial increment Gram.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmJointGram {
    pub spatial: IncrementGram,
    pub r_tt: f64,
    pub r_ts: f64,
    pub r_ss: f64,
}

impl FbmJointGram {
    /// Dense `2N × 2N` matrix, `t` block first.
    pub fn to_dense(&self) -> SymMatrix {
        let n = self.spatial.n();
        SymMatrix::from_fn(2 * n, |i, j| {
            let r = match (i < n, j < n) {
                (true, true) => self.r_tt,
                (false, false) => self.r_ss,
                _ => self.r_ts,
            };
            r * self.spatial.entry(i % n, j % n)
        })
    }

    /// Increment Gram of the marginal at time `t` (or `s`).
    pub fn marginal_t(&self) -> IncrementGram {
        self.spatial.scaled(self.r_tt)
    }

    pub fn marginal_s(&self) -> IncrementGram {
        self.spatial.scaled(self.r_ss)
    }
}

pub fn fbm_joint_gram(spec: &FbmSpec, grid: &LineGrid) -> Result<FbmJointGram> {
    spec.validate()?;
    let kernel = lag_kernel(&spec.spatial_weights(), grid.spacing(), grid.n());
    Ok(FbmJointGram {
        spatial: IncrementGram::from_kernel_lags(&kernel),
        r_tt: fbm_time_covariance(spec.hurst, spec.t, spec.t),
        r_ts: fbm_time_covariance(spec.hurst, spec.t, spec.s),
        r_ss: fbm_time_covariance(spec.hurst, spec.s, spec.s),
    })
}
