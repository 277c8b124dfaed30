//! Gauss–Legendre quadrature rules.

use crate::scalar::Scalar;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`, computed in `f64`.
///
/// Exact for polynomials of degree `2n - 1`.
pub fn gauss_legendre_f64(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    // ascending order
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped affinely onto `[lower, upper]`.
#[derive(Debug, Clone)]
pub struct GaussRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> GaussRule<T> {
    pub fn on_interval(n: usize, lower: T, upper: T) -> Self {
        let (x, w) = gauss_legendre_f64(n);
        let a = lower.to_f64_lossy();
        let b = upper.to_f64_lossy();
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        Self {
            nodes: x.iter().map(|&t| T::lit(mid + half * t)).collect(),
            weights: w.iter().map(|&wi| T::lit(half * wi)).collect(),
        }
    }

    /// Smallest rule integrating a polynomial of the given degree exactly, plus one spare node.
    pub fn exact_for_degree(degree: usize, lower: T, upper: T) -> Self {
        Self::on_interval(degree.div_ceil(2) + 1, lower, upper)
    }

    pub fn integrate<F: FnMut(T) -> T>(&self, mut f: F) -> T {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}
