//! Separable multivariate polynomial bases on a box.
//!
//! A basis element is `φ_i(x) = Π_p φ^{(r_i^p)}(x_p)` where `φ^{(r)}` is either the monomial
//! `x^r` or the Legendre polynomial `P_r` mapped affinely from `[-1, 1]` onto the box edge.
//! Both families have `φ^{(0)} ≡ 1`, so a basis element only depends on the coordinates where
//! its multi-index is nonzero; evaluation and table products exploit that sparsity.

use crate::quadrature::GaussRule;
use crate::scalar::Scalar;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("domain bounds have lengths {lower} and {upper}")]
    BoundsLength { lower: usize, upper: usize },
    #[error("empty interval in dimension {dim}: [{lower}, {upper}]")]
    EmptyInterval { dim: usize, lower: f64, upper: f64 },
    #[error("multi-index {index} has length {got}, expected {expected}")]
    IndexLength { index: usize, expected: usize, got: usize },
    #[error("multi-index list is inconsistent with truncation {truncation}: {reason}")]
    Inconsistent { truncation: Truncation, reason: String },
}

/// Axis-aligned box `Ω = Π_p [lower_p, upper_p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> BoxDomain<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self, BasisError> {
        if lower.len() != upper.len() {
            return Err(BasisError::BoundsLength { lower: lower.len(), upper: upper.len() });
        }
        if lower.is_empty() {
            return Err(BasisError::ZeroDimension);
        }
        for (dim, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(BasisError::EmptyInterval { dim, lower: a.to_f64_lossy(), upper: b.to_f64_lossy() });
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[lower, upper]^d`.
    pub fn cube(dim: usize, lower: T, upper: T) -> Result<Self, BasisError> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn width(&self, p: usize) -> T {
        self.upper[p] - self.lower[p]
    }

    pub fn volume(&self) -> T {
        (0..self.dim()).map(|p| self.width(p)).fold(T::one(), |a, w| a * w)
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&v, (&a, &b))| v >= a && v <= b)
    }
}

/// Exponent vector `r = (r^1, …, r^d)` of one separable basis element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn max_degree(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// `Π_p (r^p + 1)`, saturating.
    pub fn cross_product(&self) -> u64 {
        self.0.iter().fold(1u64, |acc, &r| acc.saturating_mul(u64::from(r) + 1))
    }

    /// Nonzero `(dimension, degree)` pairs.
    pub fn support(&self) -> Vec<(usize, u32)> {
        self.0.iter().enumerate().filter(|(_, &r)| r > 0).map(|(p, &r)| (p, r)).collect()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, r) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    Monomial,
    /// Standard Legendre `P_r` with `P_r(1) = 1`, rescaled to each box edge.
    Legendre,
}

impl fmt::Display for BasisFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisFamily::Monomial => write!(f, "monomial"),
            BasisFamily::Legendre => write!(f, "legendre"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "degree", rename_all = "snake_case")]
pub enum Truncation {
    /// `Σ_p r^p ≤ M`.
    TotalDegree(u32),
    /// `Π_p (r^p + 1) ≤ J + 1`.
    HyperbolicCross(u32),
}

impl Truncation {
    pub fn admits(&self, index: &MultiIndex) -> bool {
        match *self {
            Truncation::TotalDegree(m) => index.total_degree() <= m,
            Truncation::HyperbolicCross(j) => index.cross_product() <= u64::from(j) + 1,
        }
    }
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Truncation::TotalDegree(m) => write!(f, "total_degree({m})"),
            Truncation::HyperbolicCross(j) => write!(f, "hyperbolic_cross({j})"),
        }
    }
}

/// Graded lexicographic comparison: total degree first, then exponents descending
/// so that `(2,0)` precedes `(1,1)` precedes `(0,2)`.
fn graded_lex(a: &MultiIndex, b: &MultiIndex) -> std::cmp::Ordering {
    a.total_degree().cmp(&b.total_degree()).then_with(|| b.0.cmp(&a.0))
}

/// All multi-indices in `d` dimensions admitted by `truncation`, in graded lexicographic order.
pub fn enumerate_indices(truncation: Truncation, d: usize) -> Result<Vec<MultiIndex>, BasisError> {
    if d == 0 {
        return Err(BasisError::ZeroDimension);
    }
    let mut out = Vec::new();
    let mut current = vec![0u32; d];
    match truncation {
        Truncation::TotalDegree(m) => fill_total_degree(&mut current, 0, m, &mut out),
        Truncation::HyperbolicCross(j) => fill_cross(&mut current, 0, u64::from(j) + 1, &mut out),
    }
    out.sort_by(graded_lex);
    Ok(out)
}

fn fill_total_degree(cur: &mut Vec<u32>, pos: usize, budget: u32, out: &mut Vec<MultiIndex>) {
    if pos == cur.len() {
        out.push(MultiIndex(cur.clone()));
        return;
    }
    for r in 0..=budget {
        cur[pos] = r;
        fill_total_degree(cur, pos + 1, budget - r, out);
    }
    cur[pos] = 0;
}

fn fill_cross(cur: &mut Vec<u32>, pos: usize, budget: u64, out: &mut Vec<MultiIndex>) {
    if pos == cur.len() {
        out.push(MultiIndex(cur.clone()));
        return;
    }
    let mut r = 0u32;
    while u64::from(r) < budget {
        cur[pos] = r;
        fill_cross(cur, pos + 1, budget / (u64::from(r) + 1), out);
        r += 1;
    }
    cur[pos] = 0;
}

/// Values and first derivatives of the 1D family on `[lower, upper]` for degrees `0..=max_degree`.
pub fn eval_1d<T: Scalar>(family: BasisFamily, lower: T, upper: T, max_degree: usize, x: T) -> (Vec<T>, Vec<T>) {
    let mut val = vec![T::zero(); max_degree + 1];
    let mut der = vec![T::zero(); max_degree + 1];
    val[0] = T::one();
    match family {
        BasisFamily::Monomial => {
            for r in 1..=max_degree {
                val[r] = val[r - 1] * x;
                der[r] = T::from_usize_lossy(r) * val[r - 1];
            }
        }
        BasisFamily::Legendre => {
            let two = T::lit(2.0);
            let scale = two / (upper - lower);
            let t = (two * x - lower - upper) / (upper - lower);
            // d/dt: P'_{k+1} = P'_{k-1} + (2k+1) P_k
            let mut dt = vec![T::zero(); max_degree + 1];
            if max_degree >= 1 {
                val[1] = t;
                dt[1] = T::one();
            }
            for k in 1..max_degree {
                let kf = T::from_usize_lossy(k);
                val[k + 1] = ((two * kf + T::one()) * t * val[k] - kf * val[k - 1]) / (kf + T::one());
                dt[k + 1] = dt[k - 1] + (two * kf + T::one()) * val[k];
            }
            for r in 0..=max_degree {
                der[r] = dt[r] * scale;
            }
        }
    }
    (val, der)
}

/// Ordered family `Φ_n` of separable basis functions over a box.
#[derive(Debug, Clone)]
pub struct MultiIndexBasis<T> {
    family: BasisFamily,
    domain: BoxDomain<T>,
    truncation: Truncation,
    indices: Vec<MultiIndex>,
    supports: Vec<Vec<(usize, u32)>>,
    max_degree_per_dim: Vec<u32>,
}

impl<T: Scalar> MultiIndexBasis<T> {
    pub fn new(family: BasisFamily, domain: BoxDomain<T>, truncation: Truncation) -> Result<Self, BasisError> {
        let indices = enumerate_indices(truncation, domain.dim())?;
        Ok(Self::from_parts(family, domain, truncation, indices))
    }

    /// Rebuilds a basis from an explicit index list, which must equal the enumeration of
    /// `truncation` exactly (same elements, same order).
    pub fn with_indices(
        family: BasisFamily,
        domain: BoxDomain<T>,
        truncation: Truncation,
        indices: Vec<MultiIndex>,
    ) -> Result<Self, BasisError> {
        let d = domain.dim();
        for (k, idx) in indices.iter().enumerate() {
            if idx.dim() != d {
                return Err(BasisError::IndexLength { index: k, expected: d, got: idx.dim() });
            }
        }
        let inconsistent = |reason: String| BasisError::Inconsistent { truncation, reason };
        let mut seen = HashSet::new();
        for idx in &indices {
            if !truncation.admits(idx) {
                return Err(inconsistent(format!("index {idx} violates the truncation rule")));
            }
            if !seen.insert(idx.clone()) {
                return Err(inconsistent(format!("duplicate index {idx}")));
            }
        }
        let expected = enumerate_indices(truncation, d)?;
        if expected.len() != indices.len() {
            return Err(inconsistent(format!(
                "{} indices listed, truncation admits {}",
                indices.len(),
                expected.len()
            )));
        }
        if expected != indices {
            return Err(inconsistent("index order differs from graded lexicographic enumeration".into()));
        }
        Ok(Self::from_parts(family, domain, truncation, indices))
    }

    fn from_parts(family: BasisFamily, domain: BoxDomain<T>, truncation: Truncation, indices: Vec<MultiIndex>) -> Self {
        let d = domain.dim();
        let supports: Vec<_> = indices.iter().map(MultiIndex::support).collect();
        let mut max_degree_per_dim = vec![0u32; d];
        for idx in &indices {
            for (p, &r) in idx.0.iter().enumerate() {
                max_degree_per_dim[p] = max_degree_per_dim[p].max(r);
            }
        }
        Self { family, domain, truncation, indices, supports, max_degree_per_dim }
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub(crate) fn supports(&self) -> &[Vec<(usize, u32)>] {
        &self.supports
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn max_degree_per_dim(&self) -> &[u32] {
        &self.max_degree_per_dim
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree_per_dim.iter().copied().max().unwrap_or(0)
    }

    /// 1D values/derivatives in dimension `p` up to that dimension's maximum degree.
    pub fn eval_1d_in_dim(&self, p: usize, x: T) -> (Vec<T>, Vec<T>) {
        eval_1d(self.family, self.domain.lower[p], self.domain.upper[p], self.max_degree_per_dim[p] as usize, x)
    }

    fn tables_at(&self, x: &[T]) -> Vec<(Vec<T>, Vec<T>)> {
        assert_eq!(x.len(), self.dim(), "point dimension does not match basis");
        (0..self.dim()).map(|p| self.eval_1d_in_dim(p, x[p])).collect()
    }

    /// `Φ_n(x)`. Points outside the domain are evaluated by polynomial extension.
    pub fn eval(&self, x: &[T]) -> Vec<T> {
        let t = self.tables_at(x);
        self.supports.iter().map(|s| s.iter().fold(T::one(), |acc, &(p, r)| acc * t[p].0[r as usize])).collect()
    }

    /// `∇Φ_n(x)` as an `n × d` matrix; entry `(i, p) = ∂φ_i/∂x_p`.
    pub fn gradient(&self, x: &[T]) -> Array2<T> {
        let t = self.tables_at(x);
        let mut g = Array2::zeros((self.len(), self.dim()));
        for (i, s) in self.supports.iter().enumerate() {
            for (a, &(p, r)) in s.iter().enumerate() {
                let mut v = t[p].1[r as usize];
                for (b, &(q, rq)) in s.iter().enumerate() {
                    if a != b {
                        v *= t[q].0[rq as usize];
                    }
                }
                g[[i, p]] = v;
            }
        }
        g
    }

    /// `Φ_n(x)ᵀc`.
    pub fn combine_value(&self, x: &[T], coeffs: &[T]) -> T {
        assert_eq!(coeffs.len(), self.len(), "coefficient length does not match basis");
        let t = self.tables_at(x);
        self.supports
            .iter()
            .zip(coeffs)
            .map(|(s, &c)| c * s.iter().fold(T::one(), |acc, &(p, r)| acc * t[p].0[r as usize]))
            .sum()
    }

    /// `(Φ_n(x)ᵀc, ∇Φ_n(x)ᵀc)` without materializing the gradient matrix.
    pub fn combine_with_gradient(&self, x: &[T], coeffs: &[T]) -> (T, Vec<T>) {
        assert_eq!(coeffs.len(), self.len(), "coefficient length does not match basis");
        let t = self.tables_at(x);
        let mut value = T::zero();
        let mut grad = vec![T::zero(); self.dim()];
        for (s, &c) in self.supports.iter().zip(coeffs) {
            if c == T::zero() {
                continue;
            }
            value += c * s.iter().fold(T::one(), |acc, &(p, r)| acc * t[p].0[r as usize]);
            for (a, &(p, r)) in s.iter().enumerate() {
                let mut v = t[p].1[r as usize];
                for (b, &(q, rq)) in s.iter().enumerate() {
                    if a != b {
                        v *= t[q].0[rq as usize];
                    }
                }
                grad[p] += c * v;
            }
        }
        (value, grad)
    }
}

/// Exact 1D integral tables for one coordinate, stored as averages over the interval
/// (integral divided by the interval width) so that degree-0 factors are exactly 1.
#[derive(Debug, Clone)]
struct DimTables<T> {
    width: T,
    size: usize,
    t1: Vec<T>,
    t2: Vec<T>,
    t3: Vec<T>,
    d2t1: Vec<T>,
}

impl<T: Scalar> DimTables<T> {
    fn build(family: BasisFamily, lower: T, upper: T, max_degree: usize) -> Self {
        let size = max_degree + 1;
        let width = upper - lower;
        let mut t1 = vec![T::zero(); size];
        let mut t2 = vec![T::zero(); size * size];
        let mut t3 = vec![T::zero(); size * size * size];
        let mut d2t1 = vec![T::zero(); size * size * size];
        let at3 = |r: usize, s: usize, t: usize| (r * size + s) * size + t;

        match family {
            BasisFamily::Monomial => {
                // mean of x^k over [a,b]
                let top = 3 * max_degree + 1;
                let moments: Vec<T> = (0..=top)
                    .map(|k| {
                        let e = (k + 1) as i32;
                        (upper.powi(e) - lower.powi(e)) / (T::from_usize_lossy(k + 1) * width)
                    })
                    .collect();
                for r in 0..size {
                    t1[r] = moments[r];
                    for s in 0..size {
                        t2[r * size + s] = moments[r + s];
                        for t in 0..size {
                            t3[at3(r, s, t)] = moments[r + s + t];
                            if r > 0 && s > 0 {
                                d2t1[at3(r, s, t)] = T::from_usize_lossy(r * s) * moments[r + s + t - 2];
                            }
                        }
                    }
                }
            }
            BasisFamily::Legendre => {
                let rule = GaussRule::exact_for_degree(3 * max_degree, lower, upper);
                let evals: Vec<(Vec<T>, Vec<T>)> =
                    rule.nodes.iter().map(|&x| eval_1d(family, lower, upper, max_degree, x)).collect();
                let w: Vec<T> = rule.weights.iter().map(|&w| w / width).collect();
                let quad =
                    |f: &dyn Fn(&(Vec<T>, Vec<T>)) -> T| -> T { evals.iter().zip(&w).map(|(e, &wi)| wi * f(e)).sum() };
                for r in 0..size {
                    t1[r] = quad(&|e| e.0[r]);
                    for s in r..size {
                        let v = quad(&|e| e.0[r] * e.0[s]);
                        t2[r * size + s] = v;
                        t2[s * size + r] = v;
                        for t in s..size {
                            let v = quad(&|e| e.0[r] * e.0[s] * e.0[t]);
                            for (a, b, c) in [(r, s, t), (r, t, s), (s, r, t), (s, t, r), (t, r, s), (t, s, r)] {
                                t3[at3(a, b, c)] = v;
                            }
                        }
                        for t in 0..size {
                            let v = quad(&|e| e.1[r] * e.1[s] * e.0[t]);
                            d2t1[at3(r, s, t)] = v;
                            d2t1[at3(s, r, t)] = v;
                        }
                    }
                }
            }
        }
        Self { width, size, t1, t2, t3, d2t1 }
    }
}

/// Memoized exact 1D integrals per dimension:
/// `T1(r) = ∫φ_r`, `T2(r,s) = ∫φ_rφ_s`, `T3(r,s,t) = ∫φ_rφ_sφ_t`, `D2T1(r,s;t) = ∫φ_r'φ_s'φ_t`.
#[derive(Debug, Clone)]
pub struct Integral1DTables<T> {
    dims: Vec<DimTables<T>>,
    volume: T,
}

impl<T: Scalar> Integral1DTables<T> {
    /// Builds tables covering every product that Galerkin assembly of `basis` requires.
    pub fn build(basis: &MultiIndexBasis<T>) -> Self {
        let dom = basis.domain();
        let dims = (0..basis.dim())
            .map(|p| {
                DimTables::build(basis.family(), dom.lower()[p], dom.upper()[p], basis.max_degree_per_dim()[p] as usize)
            })
            .collect();
        Self { dims, volume: dom.volume() }
    }

    pub fn volume(&self) -> T {
        self.volume
    }

    pub fn max_degree(&self, p: usize) -> usize {
        self.dims[p].size - 1
    }

    pub fn t1(&self, p: usize, r: u32) -> T {
        let d = &self.dims[p];
        d.width * d.t1[r as usize]
    }

    pub fn t2(&self, p: usize, r: u32, s: u32) -> T {
        let d = &self.dims[p];
        d.width * d.t2[r as usize * d.size + s as usize]
    }

    pub fn t3(&self, p: usize, r: u32, s: u32, t: u32) -> T {
        let d = &self.dims[p];
        d.width * self.mean_t3(p, r, s, t)
    }

    pub fn d2t1(&self, p: usize, r: u32, s: u32, t: u32) -> T {
        let d = &self.dims[p];
        d.width * self.mean_d2t1(p, r, s, t)
    }

    #[inline]
    pub(crate) fn mean_t2(&self, p: usize, r: u32, s: u32) -> T {
        let d = &self.dims[p];
        d.t2[r as usize * d.size + s as usize]
    }

    #[inline]
    pub(crate) fn mean_t3(&self, p: usize, r: u32, s: u32, t: u32) -> T {
        let d = &self.dims[p];
        d.t3[(r as usize * d.size + s as usize) * d.size + t as usize]
    }

    #[inline]
    pub(crate) fn mean_d2t1(&self, p: usize, r: u32, s: u32, t: u32) -> T {
        let d = &self.dims[p];
        d.d2t1[(r as usize * d.size + s as usize) * d.size + t as usize]
    }
}
