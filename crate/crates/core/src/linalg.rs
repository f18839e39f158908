//! Real symmetric tridiagonal eigensolver.
//!
//! The implicit QL algorithm with Wilkinson-type shifts. Instead of
//! accumulating the dense eigenvector matrix (cubic cost, ~16 MB at
//! dimension 1401) the plane rotations are recorded in order, so that
//! `Z^T v` and `Z v` can be applied to any vector in time proportional to
//! the number of rotations. Every rotation is exactly orthogonal, which keeps
//! the resulting propagators unitary to rounding.

use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

#[derive(Clone, Copy, Debug)]
struct Givens {
    index: u32,
    c: f64,
    s: f64,
}

/// Eigendecomposition `T = Z diag(values) Z^T` of a real symmetric
/// tridiagonal matrix, with `Z` stored as a product of plane rotations.
#[derive(Clone, Debug)]
pub struct TridiagonalEigen {
    values: Vec<f64>,
    rotations: Vec<Givens>,
}

impl TridiagonalEigen {
    /// `diag` has length n, `offdiag` has length n-1 (`offdiag[i]` couples
    /// rows `i` and `i + 1`).
    pub fn new(diag: &[f64], offdiag: &[f64]) -> Result<Self> {
        let n = diag.len();
        assert!(
            offdiag.len() + 1 == n || (n == 0 && offdiag.is_empty()),
            "off-diagonal length must be n - 1"
        );
        let mut d = diag.to_vec();
        let mut e = offdiag.to_vec();
        e.push(0.0);
        let mut rotations = Vec::new();

        for l in 0..n {
            let mut iter = 0;
            loop {
                let mut m = l;
                while m + 1 < n {
                    let dd = d[m].abs() + d[m + 1].abs();
                    if e[m].abs() <= f64::EPSILON * dd {
                        break;
                    }
                    m += 1;
                }
                if m == l {
                    break;
                }
                iter += 1;
                if iter > MAX_SWEEPS_PER_EIGENVALUE {
                    return Err(Error::NoConvergence(iter));
                }
                let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                let mut r = g.hypot(1.0);
                g = d[m] - d[l] + e[l] / (g + r.copysign(g));
                let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
                let mut underflow = false;
                let mut i = m;
                while i > l {
                    i -= 1;
                    let f = s * e[i];
                    let b = c * e[i];
                    r = f.hypot(g);
                    e[i + 1] = r;
                    if r == 0.0 {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    rotations.push(Givens { index: i as u32, c, s });
                }
                if underflow {
                    continue;
                }
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        }
        Ok(Self { values: d, rotations })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    /// In place `v <- Z^T v`.
    pub fn project(&self, v: &mut [Complex64]) {
        debug_assert_eq!(v.len(), self.dim());
        for g in &self.rotations {
            let i = g.index as usize;
            let (a, b) = (v[i], v[i + 1]);
            v[i] = a * g.c - b * g.s;
            v[i + 1] = a * g.s + b * g.c;
        }
    }

    /// In place `v <- Z v`.
    pub fn reconstruct(&self, v: &mut [Complex64]) {
        debug_assert_eq!(v.len(), self.dim());
        for g in self.rotations.iter().rev() {
            let i = g.index as usize;
            let (a, b) = (v[i], v[i + 1]);
            v[i] = a * g.c + b * g.s;
            v[i + 1] = b * g.c - a * g.s;
        }
    }

    /// Dense eigenvector matrix, column `k` belongs to `eigenvalues()[k]`.
    /// Row-major `n x n`. Intended for tests and small dimensions.
    pub fn eigenvectors(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut z = vec![vec![0.0; n]; n];
        for k in 0..n {
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            col[k] = Complex64::new(1.0, 0.0);
            self.reconstruct(&mut col);
            for (row, value) in col.iter().enumerate() {
                z[row][k] = value.re;
            }
        }
        z
    }
}
