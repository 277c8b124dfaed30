//! Dense LU factorization with partial pivoting and a 1-norm condition estimate.
//!
//! All Galerkin systems in this crate are small and dense (n up to a few thousand),
//! so a direct factorization is used throughout.

use crate::scalar::Scalar;
use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular (zero pivot in column {column})")]
    Singular { column: usize },
    #[error("right-hand side has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// `P A = L U` with unit lower-triangular `L` stored below the diagonal of `lu`.
#[derive(Debug, Clone)]
pub struct LuFactorization<T> {
    lu: Array2<T>,
    /// `perm[i]` is the original row placed at position `i`.
    perm: Vec<usize>,
    norm1: T,
}

impl<T: Scalar> LuFactorization<T> {
    pub fn new(a: &Array2<T>) -> Result<Self, LinalgError> {
        let (rows, cols) = a.dim();
        if rows != cols {
            return Err(LinalgError::NotSquare { rows, cols });
        }
        let n = rows;
        let norm1 = one_norm(a);
        let mut lu = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();

        for k in 0..n {
            let mut pivot_row = k;
            let mut pivot_abs = lu[[k, k]].abs();
            for r in (k + 1)..n {
                let v = lu[[r, k]].abs();
                if v > pivot_abs {
                    pivot_abs = v;
                    pivot_row = r;
                }
            }
            if pivot_abs == T::zero() || !pivot_abs.is_finite() {
                return Err(LinalgError::Singular { column: k });
            }
            if pivot_row != k {
                for c in 0..n {
                    lu.swap([k, c], [pivot_row, c]);
                }
                perm.swap(k, pivot_row);
            }
            let pivot = lu[[k, k]];
            for r in (k + 1)..n {
                let factor = lu[[r, k]] / pivot;
                lu[[r, k]] = factor;
                if factor != T::zero() {
                    for c in (k + 1)..n {
                        let u = lu[[k, c]];
                        lu[[r, c]] -= factor * u;
                    }
                }
            }
        }
        Ok(Self { lu, perm, norm1 })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Result<Array1<T>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, got: b.len() });
        }
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        // forward: L y = P b
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s;
        }
        // backward: U x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s / self.lu[[i, i]];
        }
        Ok(Array1::from(x))
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[T]) -> Result<Array1<T>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, got: b.len() });
        }
        let mut y = b.to_vec();
        // Uᵀ y = b
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[[j, i]] * y[j];
            }
            y[i] = s / self.lu[[i, i]];
        }
        // Lᵀ z = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= self.lu[[j, i]] * y[j];
            }
            y[i] = s;
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        Ok(Array1::from(x))
    }

    /// Estimate of `‖A‖₁ ‖A⁻¹‖₁` (Hager's method with Higham's alternative test vector).
    pub fn condition_estimate(&self) -> T {
        let n = self.dim();
        if n == 0 {
            return T::one();
        }
        let nf = T::from_usize_lossy(n);
        let mut x = vec![T::one() / nf; n];
        let mut estimate = T::zero();
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let y = match self.solve(&x) {
                Ok(y) => y,
                Err(_) => return T::infinity(),
            };
            estimate = y.iter().map(|v| v.abs()).sum();
            let xi: Vec<T> = y.iter().map(|&v| if v >= T::zero() { T::one() } else { -T::one() }).collect();
            let z = match self.solve_transpose(&xi) {
                Ok(z) => z,
                Err(_) => return T::infinity(),
            };
            let (j, zmax) =
                z.iter()
                    .enumerate()
                    .fold((0, T::zero()), |(bj, bv), (i, &v)| if v.abs() > bv { (i, v.abs()) } else { (bj, bv) });
            let ztx: T = z.iter().zip(&x).map(|(&a, &b)| a * b).sum();
            if zmax <= ztx || j == last_j {
                break;
            }
            last_j = j;
            x = vec![T::zero(); n];
            x[j] = T::one();
        }
        // alternating test vector catches cases the power-like iteration misses
        let denom = if n > 1 { T::from_usize_lossy(n - 1) } else { T::one() };
        let alt: Vec<T> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { T::one() } else { -T::one() };
                s * (T::one() + T::from_usize_lossy(i) / denom)
            })
            .collect();
        if let Ok(y) = self.solve(&alt) {
            let alt_est = T::lit(2.0) * y.iter().map(|v| v.abs()).sum::<T>() / (T::lit(3.0) * nf);
            if alt_est > estimate {
                estimate = alt_est;
            }
        }
        self.norm1 * estimate
    }
}

/// Maximum absolute column sum.
pub fn one_norm<T: Scalar>(a: &Array2<T>) -> T {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<T>())
        .fold(T::zero(), |m, v| if v > m { v } else { m })
}

/// Convenience: factor and solve in one call.
pub fn solve<T: Scalar>(a: &Array2<T>, b: &[T]) -> Result<Array1<T>, LinalgError> {
    LuFactorization::new(a)?.solve(b)
}
