//! Benchmark objectives with optional separable factorizations.
//!
//! Objectives are black boxes to the particle system: no gradient is exposed except through
//! [`finite_diff_gradient`], which exists only for the gradient-flow comparison.

use crate::basis::{eval_1d, BasisFamily};
use crate::quadrature::GaussRule;
use crate::scalar::Scalar;
use ndarray::Array2;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("quadratic form matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("quadratic form matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("unknown objective '{0}'")]
    Unknown(String),
}

type Scalar1d<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// One piece `[lower, upper)` of a piecewise polynomial (bounds may be infinite).
#[derive(Debug, Clone, PartialEq)]
pub struct PolyPiece<T> {
    pub lower: T,
    pub upper: T,
    /// Monomial coefficients, ascending powers.
    pub coeffs: Vec<T>,
}

/// A 1D factor `F_{(j,p)}` of a separable objective, with how to integrate it exactly.
#[derive(Clone)]
pub enum Factor1d<T> {
    /// Monomial coefficients in ascending order; integrated by an exact Gauss rule.
    Polynomial(Vec<T>),
    /// Continuous piecewise polynomial; each piece is integrated exactly.
    Piecewise(Vec<PolyPiece<T>>),
    /// Smooth non-polynomial factor, integrated by a fixed Gauss–Legendre rule.
    Smooth { f: Scalar1d<T>, nodes: usize },
}

impl<T: fmt::Debug> fmt::Debug for Factor1d<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor1d::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            Factor1d::Piecewise(p) => f.debug_tuple("Piecewise").field(p).finish(),
            Factor1d::Smooth { nodes, .. } => f.debug_struct("Smooth").field("nodes", nodes).finish(),
        }
    }
}

fn horner<T: Scalar>(coeffs: &[T], x: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + c)
}

impl<T: Scalar> Factor1d<T> {
    pub fn one() -> Self {
        Factor1d::Polynomial(vec![T::one()])
    }

    pub fn eval(&self, x: T) -> T {
        match self {
            Factor1d::Polynomial(c) => horner(c, x),
            Factor1d::Piecewise(pieces) => {
                let piece = pieces
                    .iter()
                    .find(|pc| x >= pc.lower && x < pc.upper)
                    .or_else(|| pieces.last())
                    .expect("piecewise factor has at least one piece");
                horner(&piece.coeffs, x)
            }
            Factor1d::Smooth { f, .. } => f(x),
        }
    }

    /// `∫_lower^upper F(x) φ^{(r)}(x) dx` for `r = 0..=max_degree`.
    pub fn moments_against(&self, family: BasisFamily, lower: T, upper: T, max_degree: usize) -> Vec<T> {
        let mut out = vec![T::zero(); max_degree + 1];
        let mut accumulate = |rule: GaussRule<T>, f: &dyn Fn(T) -> T| {
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let (vals, _) = eval_1d(family, lower, upper, max_degree, x);
                let fx = f(x);
                for (o, v) in out.iter_mut().zip(vals) {
                    *o += w * fx * v;
                }
            }
        };
        match self {
            Factor1d::Polynomial(c) => {
                let deg = c.len().saturating_sub(1) + max_degree;
                accumulate(GaussRule::exact_for_degree(deg, lower, upper), &|x| horner(c, x));
            }
            Factor1d::Piecewise(pieces) => {
                for pc in pieces {
                    let a = if pc.lower > lower { pc.lower } else { lower };
                    let b = if pc.upper < upper { pc.upper } else { upper };
                    if a < b {
                        let deg = pc.coeffs.len().saturating_sub(1) + max_degree;
                        accumulate(GaussRule::exact_for_degree(deg, a, b), &|x| horner(&pc.coeffs, x));
                    }
                }
            }
            Factor1d::Smooth { f, nodes } => {
                accumulate(GaussRule::on_interval(*nodes, lower, upper), &|x| f(x));
            }
        }
        out
    }
}

/// `f(x) = Σ_j Π_p F_{(j,p)}(x_p)` with separation rank `terms.len()`.
#[derive(Debug, Clone)]
pub struct SeparableForm<T> {
    terms: Vec<Vec<Factor1d<T>>>,
}

impl<T: Scalar> SeparableForm<T> {
    pub fn new(terms: Vec<Vec<Factor1d<T>>>) -> Self {
        Self { terms }
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Vec<Factor1d<T>>] {
        &self.terms
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.terms.iter().map(|term| term.iter().zip(x).fold(T::one(), |acc, (f, &xp)| acc * f.eval(xp))).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimizer<T> {
    pub point: Vec<T>,
    pub value: T,
}

/// Black-box objective `f: ℝ^d → ℝ`.
#[derive(Clone)]
pub struct Objective<T> {
    name: String,
    dim: usize,
    eval: Arc<dyn Fn(&[T]) -> T + Send + Sync>,
    separable: Option<SeparableForm<T>>,
    minimizer: Option<Minimizer<T>>,
}

impl<T: Scalar> fmt::Debug for Objective<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("separable_rank", &self.separable.as_ref().map(SeparableForm::rank))
            .field("minimizer", &self.minimizer)
            .finish()
    }
}

impl<T: Scalar> Objective<T> {
    pub fn new<F>(name: impl Into<String>, dim: usize, eval: F) -> Self
    where
        F: Fn(&[T]) -> T + Send + Sync + 'static,
    {
        Self { name: name.into(), dim, eval: Arc::new(eval), separable: None, minimizer: None }
    }

    pub fn with_separable(mut self, form: SeparableForm<T>) -> Self {
        self.separable = Some(form);
        self
    }

    pub fn with_minimizer(mut self, point: Vec<T>, value: T) -> Self {
        self.minimizer = Some(Minimizer { point, value });
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn eval(&self, x: &[T]) -> T {
        (self.eval)(x)
    }

    pub fn separable(&self) -> Option<&SeparableForm<T>> {
        self.separable.as_ref()
    }

    pub fn minimizer(&self) -> Option<&Minimizer<T>> {
        self.minimizer.as_ref()
    }
}

/// d-dimensional Ackley function shifted so that `f(0) = 1`. Not separable.
pub fn ackley<T: Scalar>(d: usize) -> Result<Objective<T>, ObjectiveError> {
    if d == 0 {
        return Err(ObjectiveError::ZeroDimension);
    }
    let inv_d = T::one() / T::from_usize_lossy(d);
    let two_pi = T::lit(2.0) * T::PI();
    let f = move |x: &[T]| {
        let sq: T = x.iter().map(|&v| v * v).sum();
        let cs: T = x.iter().map(|&v| (two_pi * v).cos()).sum();
        -T::lit(20.0) * (-T::lit(0.2) * (sq * inv_d).sqrt()).exp() - (cs * inv_d).exp() + T::lit(21.0) + T::E()
    };
    Ok(Objective::new("ackley", d, f).with_minimizer(vec![T::zero(); d], T::one()))
}

/// d-dimensional Rastrigin function `10(d+1) + Σ [x_i² − 10 cos(2πx_i)]`, separable with rank `d + 1`.
pub fn rastrigin<T: Scalar>(d: usize) -> Result<Objective<T>, ObjectiveError> {
    if d == 0 {
        return Err(ObjectiveError::ZeroDimension);
    }
    let ten = T::lit(10.0);
    let constant = ten * T::from_usize_lossy(d + 1);
    let two_pi = T::lit(2.0) * T::PI();
    let f = move |x: &[T]| constant + x.iter().map(|&v| v * v - ten * (two_pi * v).cos()).sum::<T>();

    let coord: Scalar1d<T> = Arc::new(move |v: T| v * v - ten * (two_pi * v).cos());
    let mut terms = Vec::with_capacity(d + 1);
    let mut first = vec![Factor1d::one(); d];
    first[0] = Factor1d::Polynomial(vec![constant]);
    terms.push(first);
    for p in 0..d {
        let mut term = vec![Factor1d::one(); d];
        term[p] = Factor1d::Smooth { f: coord.clone(), nodes: 64 };
        terms.push(term);
    }
    Ok(Objective::new("rastrigin", d, f)
        .with_separable(SeparableForm::new(terms))
        .with_minimizer(vec![T::zero(); d], ten))
}

/// `(x² − 2.2)² − 0.08x + 0.5`: global minimum near 1.48776, local minimum near −1.47867.
pub fn double_well_1d<T: Scalar>() -> Objective<T> {
    let coeffs: Vec<T> = [5.34, -0.08, -4.4, 0.0, 1.0].iter().map(|&c| T::lit(c)).collect();
    let c = coeffs.clone();
    Objective::new("double_well", 1, move |x: &[T]| horner(&c, x[0]))
        .with_separable(SeparableForm::new(vec![vec![Factor1d::Polynomial(coeffs)]]))
        .with_minimizer(vec![T::lit(1.4877644263966023)], T::lit(0.3811595598267712))
}

/// Piecewise `x²` (x < −2), `4` on `[−2, 0]`, `4(x − 1)²` (x > 0); minimizer `x* = 1`.
pub fn nonsmooth_1d<T: Scalar>() -> Objective<T> {
    let four = T::lit(4.0);
    let eval = move |x: &[T]| {
        let v = x[0];
        if v < -T::lit(2.0) {
            v * v
        } else if v <= T::zero() {
            four
        } else {
            four * (v - T::one()) * (v - T::one())
        }
    };
    let pieces = vec![
        PolyPiece { lower: T::neg_infinity(), upper: -T::lit(2.0), coeffs: vec![T::zero(), T::zero(), T::one()] },
        PolyPiece { lower: -T::lit(2.0), upper: T::zero(), coeffs: vec![four] },
        PolyPiece { lower: T::zero(), upper: T::infinity(), coeffs: vec![four, -T::lit(8.0), four] },
    ];
    Objective::new("nonsmooth", 1, eval)
        .with_separable(SeparableForm::new(vec![vec![Factor1d::Piecewise(pieces)]]))
        .with_minimizer(vec![T::one()], T::zero())
}

/// `f(x) = xᵀQx` for symmetric `Q`; separable with one term per nonzero entry.
pub fn quadratic<T: Scalar>(q: &Array2<T>) -> Result<Objective<T>, ObjectiveError> {
    let (rows, cols) = q.dim();
    if rows != cols {
        return Err(ObjectiveError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(ObjectiveError::ZeroDimension);
    }
    let d = rows;
    for i in 0..d {
        for j in (i + 1)..d {
            let (a, b) = (q[[i, j]], q[[j, i]]);
            let scale = a.abs().max(b.abs()).max(T::one());
            if (a - b).abs() > T::lit(1e-12) * scale {
                return Err(ObjectiveError::Asymmetric { row: i, col: j });
            }
        }
    }
    let mut terms = Vec::new();
    for i in 0..d {
        for j in 0..d {
            let v = q[[i, j]];
            if v == T::zero() {
                continue;
            }
            let mut term = vec![Factor1d::one(); d];
            if i == j {
                term[i] = Factor1d::Polynomial(vec![T::zero(), T::zero(), v]);
            } else {
                term[i] = Factor1d::Polynomial(vec![T::zero(), v]);
                term[j] = Factor1d::Polynomial(vec![T::zero(), T::one()]);
            }
            terms.push(term);
        }
    }
    let qm = q.to_owned();
    let eval = move |x: &[T]| {
        let mut s = T::zero();
        for i in 0..d {
            for j in 0..d {
                s += x[i] * qm[[i, j]] * x[j];
            }
        }
        s
    };
    Ok(Objective::new("quadratic", d, eval)
        .with_separable(SeparableForm::new(terms))
        .with_minimizer(vec![T::zero(); d], T::zero()))
}

/// Diagonal quadratic `Σ_j q_j x_j²`.
pub fn quadratic_diag<T: Scalar>(q: &[T]) -> Result<Objective<T>, ObjectiveError> {
    let d = q.len();
    quadratic(&Array2::from_shape_fn((d, d), |(i, j)| if i == j { q[i] } else { T::zero() }))
}

/// Central-difference gradient. The only gradient route exposed for objectives; used by the
/// gradient-flow comparison, never by the particle system.
pub fn finite_diff_gradient<T: Scalar>(objective: &Objective<T>, x: &[T], step: T) -> Vec<T> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|p| {
            let orig = xp[p];
            xp[p] = orig + step;
            let fp = objective.eval(&xp);
            xp[p] = orig - step;
            let fm = objective.eval(&xp);
            xp[p] = orig;
            (fp - fm) / (T::lit(2.0) * step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ackley_values() {
        for d in [1, 2, 5, 30] {
            let f = ackley::<f64>(d).unwrap();
            assert!((f.eval(&vec![0.0; d]) - 1.0).abs() < 1e-12);
        }
        // desk evaluation of the formula at (1, 1)
        let f = ackley::<f64>(2).unwrap();
        assert!((f.eval(&[1.0, 1.0]) - 4.625384938440362).abs() < 1e-12);
        assert!(f.separable().is_none());
    }

    #[test]
    fn rastrigin_values() {
        for d in [1, 2, 6] {
            let f = rastrigin::<f64>(d).unwrap();
            assert!((f.eval(&vec![0.0; d]) - 10.0).abs() < 1e-12);
            assert_eq!(f.separable().unwrap().rank(), d + 1);
        }
        let f = rastrigin::<f64>(1).unwrap();
        assert!((f.eval(&[0.5]) - 30.25).abs() < 1e-12);
    }

    #[test]
    fn double_well_values() {
        let f = double_well_1d::<f64>();
        assert!((f.eval(&[1.48776]) - 0.38116).abs() < 1e-4);
        assert!((f.eval(&[-1.47867]) - 0.618477).abs() < 1e-4);
        assert!((f.eval(&[0.0]) - 5.34).abs() < 1e-12);
        let m = f.minimizer().unwrap();
        assert!((f.eval(&m.point) - m.value).abs() < 1e-12);
    }

    #[test]
    fn nonsmooth_values() {
        let g = nonsmooth_1d::<f64>();
        assert_eq!(g.eval(&[1.0]), 0.0);
        assert_eq!(g.eval(&[-1.0]), 4.0);
        assert_eq!(g.eval(&[-3.0]), 9.0);
        assert_eq!(g.separable().unwrap().eval(&[-3.0]), 9.0);
    }

    #[test]
    fn quadratic_values_and_errors() {
        let f = quadratic(&array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(f.eval(&[1.0, 1.0]), 2.0);
        let f = quadratic_diag(&[1.0, 2.0]).unwrap();
        assert_eq!(f.eval(&[1.0, 1.0]), 3.0);
        assert_eq!(quadratic_diag(&[1.0, 1.0, 1.0]).unwrap().eval(&[0.0; 3]), 0.0);
        assert!(matches!(quadratic(&array![[1.0, 2.0], [0.0, 1.0]]), Err(ObjectiveError::Asymmetric { .. })));
        assert!(matches!(ackley::<f64>(0), Err(ObjectiveError::ZeroDimension)));
    }

    #[test]
    fn separable_forms_match_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let objs: Vec<Objective<f64>> = vec![
            rastrigin(1).unwrap(),
            rastrigin(2).unwrap(),
            rastrigin(5).unwrap(),
            double_well_1d(),
            nonsmooth_1d(),
            quadratic(&array![[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 0.5]]).unwrap(),
        ];
        for f in &objs {
            let sep = f.separable().unwrap();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..f.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let (a, b) = (f.eval(&x), sep.eval(&x));
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{} {a} {b}", f.name());
            }
        }
    }

    #[test]
    fn minimizers_are_local_minima() {
        let objs: Vec<(Objective<f64>, f64)> = vec![
            (ackley(3).unwrap(), 0.0),
            (rastrigin(3).unwrap(), 0.0),
            (quadratic_diag(&[0.5, 1.0, 2.0]).unwrap(), 0.0),
            (double_well_1d(), 1e-4),
        ];
        for (f, slack) in objs {
            let m = f.minimizer().unwrap();
            assert!((f.eval(&m.point) - m.value).abs() < 1e-12);
            for j in 0..f.dim() {
                for delta in [1e-3, -1e-3] {
                    let mut x = m.point.clone();
                    x[j] += delta;
                    assert!(f.eval(&x) >= f.eval(&m.point) - slack, "{}", f.name());
                }
            }
        }
    }

    #[test]
    fn piecewise_moments_are_exact() {
        // ∫_{-3}^{3} g(x) dx = ∫_{-3}^{-2} x² + 8 + ∫_0^3 4(x-1)² = 19/3 + 8 + 12
        let g = nonsmooth_1d::<f64>();
        let f = &g.separable().unwrap().terms()[0][0];
        let m = f.moments_against(BasisFamily::Monomial, -3.0, 3.0, 2);
        assert!((m[0] - (19.0 / 3.0 + 8.0 + 12.0)).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_gradient_of_double_well() {
        let f = double_well_1d::<f64>();
        let g = finite_diff_gradient(&f, &[-2.0], 1e-6);
        let exact = 4.0 * -2.0 * (4.0 - 2.2) - 0.08;
        assert!((g[0] - exact).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn ackley_and_rastrigin_are_even(x in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            for f in [ackley::<f64>(4).unwrap(), rastrigin::<f64>(4).unwrap()] {
                prop_assert!((f.eval(&x) - f.eval(&neg)).abs() < 1e-12);
            }
        }
    }
}
