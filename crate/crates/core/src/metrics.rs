//! Ensemble statistics: mean, the halved empirical variance and W₂² to a Dirac mass.

use crate::scalar::Scalar;
use ndarray::{Array1, ArrayView2, Axis};
use serde::Serialize;

/// `(1/N) Σ_i X_i` over the rows of an `N × d` ensemble.
pub fn ensemble_mean<T: Scalar>(positions: ArrayView2<'_, T>) -> Array1<T> {
    let n = T::from_usize_lossy(positions.nrows());
    positions.sum_axis(Axis(0)).mapv(|s| s / n)
}

/// `(1/(2N)) Σ_i |X_i − mean|²`.
pub fn ensemble_variance<T: Scalar>(positions: ArrayView2<'_, T>) -> T {
    let mean = ensemble_mean(positions);
    let n = T::from_usize_lossy(positions.nrows());
    let total: T = positions
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&mean).map(|(&x, &m)| (x - m) * (x - m)).sum::<T>())
        .sum();
    total / (T::lit(2.0) * n)
}

/// `W₂²(ρ^N, δ_{x*}) = (1/N) Σ_i |X_i − x*|²`.
pub fn w2_to_dirac<T: Scalar>(positions: ArrayView2<'_, T>, x_star: &[T]) -> T {
    assert_eq!(positions.ncols(), x_star.len(), "minimizer dimension does not match ensemble");
    let n = T::from_usize_lossy(positions.nrows());
    let total: T = positions
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(x_star).map(|(&x, &s)| (x - s) * (x - s)).sum::<T>())
        .sum();
    total / n
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats<T> {
    pub mean: Vec<T>,
    pub variance: T,
    pub w2sq: Option<T>,
}

impl<T: Scalar> EnsembleStats<T> {
    pub fn compute(positions: ArrayView2<'_, T>, x_star: Option<&[T]>) -> Self {
        Self {
            mean: ensemble_mean(positions).to_vec(),
            variance: ensemble_variance(positions),
            w2sq: x_star.map(|s| w2_to_dirac(positions, s)),
        }
    }
}
