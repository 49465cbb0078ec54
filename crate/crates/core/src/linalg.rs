//! Dense symmetric matrices and the trace powers the cumulant formulas need.

use rayon::prelude::*;

/// Row-major dense square matrix. Symmetry is a caller invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn<F: Fn(usize, usize) -> f64 + Sync>(n: usize, f: F) -> Self {
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = f(i, j);
                }
            });
        SymMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// `⟨A, B⟩_F = tr(A B)` for symmetric operands.
    pub fn frobenius_dot(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.n, other.n);
        pairwise_sum_products(&self.data, &other.data)
    }

    pub fn matmul(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = vec![0.0; n * n];
        if n > 0 {
            // SAFETY: all three buffers hold n*n contiguous row-major values and
            // the strides below describe exactly that layout.
            unsafe {
                matrixmultiply::dgemm(
                    n,
                    n,
                    n,
                    1.0,
                    self.data.as_ptr(),
                    n as isize,
                    1,
                    other.data.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        SymMatrix { n, data: out }
    }

    /// `tr(M^p)` for `p = 1..=p_max` using `ceil(p_max/2) - 1` products.
    pub fn trace_powers(&self, p_max: usize) -> Vec<f64> {
        assert!(p_max >= 1);
        let half = p_max.div_ceil(2);
        let mut powers: Vec<SymMatrix> = Vec::with_capacity(half);
        powers.push(self.clone());
        for k in 1..half {
            let next = powers[k - 1].matmul(self);
            powers.push(next);
        }
        (1..=p_max)
            .map(|p| {
                if p == 1 {
                    return self.trace();
                }
                let a = p.div_ceil(2);
                let b = p - a;
                powers[a - 1].frobenius_dot(&powers[b - 1])
            })
            .collect()
    }
}

/// Blocked pairwise summation of `Σ a_i b_i`; the reduction order depends only
/// on the length, never on thread scheduling.
pub(crate) fn pairwise_sum_products(a: &[f64], b: &[f64]) -> f64 {
    const BLOCK: usize = 4096;
    if a.len() <= BLOCK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let mid = a.len() / 2;
    pairwise_sum_products(&a[..mid], &b[..mid]) + pairwise_sum_products(&a[mid..], &b[mid..])
}

/// Pairwise summation of a slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 256;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
