//! Galerkin assembly of the projected generalized HJB equation.
//!
//! With `V = Φᵀc` and the frozen control `u = −(1/ε)∇Φᵀc'`, every inner product against the
//! basis reduces to the raw mass matrix `⟨φ_i, φ_j⟩`, the load `F_i = ⟨f, φ_i⟩` and the
//! third-order advection tensor `Ũ_{(i,j,k,p)} = ⟨∂_pφ_k ∂_pφ_j, φ_i⟩`. The dense `n×n×n×d`
//! tensor is never formed: only its nonzero entries, summed over `p`, are kept.

use crate::basis::{BasisError, Integral1DTables, MultiIndexBasis};
use crate::linalg::{LinalgError, LuFactorization};
use crate::objectives::{Objective, SeparableForm};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Condition estimate above which assembly fails.
pub const MASS_CONDITION_LIMIT: f64 = 1e14;
/// Condition estimate above which a warning is logged.
pub const MASS_CONDITION_WARN: f64 = 1e12;

const MC_CHUNK: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GalerkinError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("mass matrix is ill-conditioned (condition estimate {condition:.3e} exceeds {limit:.1e})")]
    IllConditioned { condition: f64, limit: f64 },
    #[error("mass matrix factorization failed: {0}")]
    Linalg(#[from] LinalgError),
    #[error("objective '{0}' has no separable form; use Monte Carlo load assembly")]
    NotSeparable(String),
    #[error("objective dimension {objective} does not match basis dimension {basis}")]
    DimensionMismatch { objective: usize, basis: usize },
    #[error("Monte Carlo load needs at least one sample")]
    NoSamples,
}

/// How the objective load `F_i = ⟨f, φ_i⟩` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LoadMode {
    /// Exact factored 1D integrals of a separable objective.
    Separable,
    /// Plain uniform Monte Carlo on the domain.
    MonteCarlo { samples: u64, seed: u64 },
}

/// `⟨φ_i, φ_j⟩ = Π_p T2_p(r_i^p, r_j^p)`.
pub fn assemble_mass<T: Scalar>(basis: &MultiIndexBasis<T>, tables: &Integral1DTables<T>) -> Array2<T> {
    let n = basis.len();
    let idx = basis.indices();
    let sup = basis.supports();
    let vol = tables.volume();
    let mut mass = Array2::zeros((n, n));
    let mut dims = Vec::new();
    for i in 0..n {
        for j in i..n {
            union_dims(&[&sup[i], &sup[j]], &mut dims);
            let mut v = vol;
            for &q in &dims {
                v *= tables.mean_t2(q, idx[i].0[q], idx[j].0[q]);
                if v == T::zero() {
                    break;
                }
            }
            mass[[i, j]] = v;
            mass[[j, i]] = v;
        }
    }
    mass
}

fn union_dims(supports: &[&Vec<(usize, u32)>], out: &mut Vec<usize>) {
    out.clear();
    for s in supports {
        for &(p, _) in s.iter() {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
}

/// `F_i = Σ_j Π_p ∫ F_{(j,p)} φ_i^p dx_p`.
pub fn assemble_load_separable<T: Scalar>(basis: &MultiIndexBasis<T>, form: &SeparableForm<T>) -> Array1<T> {
    let dom = basis.domain();
    let d = basis.dim();
    // moments[j][p][r] = ∫ F_{(j,p)} φ^{(r)} over Ω_p
    let moments: Vec<Vec<Vec<T>>> = form
        .terms()
        .iter()
        .map(|term| {
            (0..d)
                .map(|p| {
                    term[p].moments_against(
                        basis.family(),
                        dom.lower()[p],
                        dom.upper()[p],
                        basis.max_degree_per_dim()[p] as usize,
                    )
                })
                .collect()
        })
        .collect();
    Array1::from_iter(basis.indices().iter().map(|idx| {
        moments
            .iter()
            .map(|m| idx.0.iter().enumerate().fold(T::one(), |acc, (p, &r)| acc * m[p][r as usize]))
            .sum::<T>()
    }))
}

/// `F_i ≈ |Ω| (1/N) Σ_q f(x̄_q) φ_i(x̄_q)` with i.i.d. uniform samples on Ω.
///
/// Samples are drawn in fixed-size chunks, each from its own ChaCha stream, and chunk sums
/// are reduced in order, so the result depends only on `seed` and `samples`.
pub fn assemble_load_montecarlo<T: Scalar>(
    basis: &MultiIndexBasis<T>,
    objective: &Objective<T>,
    samples: u64,
    seed: u64,
) -> Result<Array1<T>, GalerkinError> {
    if samples == 0 {
        return Err(GalerkinError::NoSamples);
    }
    let n = basis.len();
    let d = basis.dim();
    let dom = basis.domain();
    let lower: Vec<f64> = dom.lower().iter().map(|v| v.to_f64_lossy()).collect();
    let width: Vec<f64> = (0..d).map(|p| dom.width(p).to_f64_lossy()).collect();
    let samples = samples as usize;
    let chunks = samples.div_ceil(MC_CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut acc = vec![0.0f64; n];
            let mut x = vec![T::zero(); d];
            for _ in 0..count {
                for p in 0..d {
                    x[p] = T::lit(lower[p] + width[p] * rng.random::<f64>());
                }
                let fx = objective.eval(&x);
                for (a, phi) in acc.iter_mut().zip(basis.eval(&x)) {
                    *a += (fx * phi).to_f64_lossy();
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0f64; n];
    for part in &partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    let scale = dom.volume().to_f64_lossy() / samples as f64;
    Ok(Array1::from_iter(total.into_iter().map(|v| T::lit(v * scale))))
}

/// Sparse form of `S_{ijk} = Σ_p Ũ_{(i,j,k,p)}`, plus on-demand access to single entries.
#[derive(Debug, Clone)]
pub struct AdvectionTensor<T> {
    n: usize,
    entries: Vec<(u32, u32, u32, T)>,
}

impl<T: Scalar> AdvectionTensor<T> {
    pub fn build(basis: &MultiIndexBasis<T>, tables: &Integral1DTables<T>) -> Self {
        let n = basis.len();
        let idx = basis.indices();
        let sup = basis.supports();
        let per_j: Vec<Vec<(u32, u32, u32, T)>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut local = Vec::new();
                let mut dims = Vec::new();
                let mut shared = Vec::new();
                let mut acc = vec![T::zero(); n];
                for k in 0..n {
                    shared.clear();
                    shared.extend(sup[j].iter().filter(|&&(p, _)| idx[k].0[p] > 0).map(|&(p, _)| p));
                    if shared.is_empty() {
                        continue;
                    }
                    acc.iter_mut().for_each(|a| *a = T::zero());
                    for i in 0..n {
                        union_dims(&[&sup[i], &sup[j], &sup[k]], &mut dims);
                        for &p in &shared {
                            acc[i] += u_entry(tables, &idx[i].0, &idx[j].0, &idx[k].0, p, &dims);
                        }
                    }
                    for (i, &s) in acc.iter().enumerate() {
                        if s != T::zero() {
                            local.push((i as u32, j as u32, k as u32, s));
                        }
                    }
                }
                local
            })
            .collect();
        let mut entries: Vec<_> = per_j.into_iter().flatten().collect();
        entries.sort_by_key(|&(i, j, k, _)| (i, j, k));
        Self { n, entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Nonzero `(i, j, k, S_ijk)` entries.
    pub fn entries(&self) -> &[(u32, u32, u32, T)] {
        &self.entries
    }

    /// `G(c)_{ij} = −(1/ε) Σ_k c_k S_{ijk}`, so that `G(c)c' = ⟨(∇Φᵀc')ᵀu_c, Φ⟩`.
    pub fn apply_g(&self, c: &[T], epsilon: T) -> Array2<T> {
        assert_eq!(c.len(), self.n);
        let mut g = Array2::zeros((self.n, self.n));
        let scale = -T::one() / epsilon;
        for &(i, j, k, s) in &self.entries {
            g[[i as usize, j as usize]] += scale * c[k as usize] * s;
        }
        g
    }

    /// `L(c)_i = (1/2ε) Σ_{j,k} c_j c_k S_{ijk} = ⟨(ε/2)|u_c|², φ_i⟩`.
    pub fn apply_l(&self, c: &[T], epsilon: T) -> Array1<T> {
        assert_eq!(c.len(), self.n);
        let mut l = Array1::zeros(self.n);
        let scale = T::one() / (T::lit(2.0) * epsilon);
        for &(i, j, k, s) in &self.entries {
            l[i as usize] += scale * c[j as usize] * c[k as usize] * s;
        }
        l
    }
}

/// `Ũ_{(i,j,k,p)}` as a product of 1D table values over the coordinates in `dims`.
fn u_entry<T: Scalar>(tables: &Integral1DTables<T>, ri: &[u32], rj: &[u32], rk: &[u32], p: usize, dims: &[usize]) -> T {
    let mut v = tables.volume() * tables.mean_d2t1(p, rj[p], rk[p], ri[p]);
    for &q in dims {
        if v == T::zero() {
            return v;
        }
        if q != p {
            v *= tables.mean_t3(q, ri[q], rj[q], rk[q]);
        }
    }
    v
}

/// Assembled, immutable Galerkin data for one basis and objective.
#[derive(Debug, Clone)]
pub struct GalerkinWorkspace<T> {
    basis: MultiIndexBasis<T>,
    tables: Integral1DTables<T>,
    mass: Array2<T>,
    mass_lu: LuFactorization<T>,
    mass_condition: f64,
    load: Array1<T>,
    advection: AdvectionTensor<T>,
}

impl<T: Scalar> GalerkinWorkspace<T> {
    pub fn assemble(
        basis: MultiIndexBasis<T>,
        objective: &Objective<T>,
        load_mode: LoadMode,
    ) -> Result<Self, GalerkinError> {
        if objective.dim() != basis.dim() {
            return Err(GalerkinError::DimensionMismatch { objective: objective.dim(), basis: basis.dim() });
        }
        let load = match load_mode {
            LoadMode::Separable => {
                let form =
                    objective.separable().ok_or_else(|| GalerkinError::NotSeparable(objective.name().to_string()))?;
                assemble_load_separable(&basis, form)
            }
            LoadMode::MonteCarlo { samples, seed } => assemble_load_montecarlo(&basis, objective, samples, seed)?,
        };
        Self::with_load(basis, load)
    }

    /// Builds the workspace around a precomputed load vector.
    pub fn with_load(basis: MultiIndexBasis<T>, load: Array1<T>) -> Result<Self, GalerkinError> {
        assert_eq!(load.len(), basis.len(), "load vector length does not match basis");
        let tables = Integral1DTables::build(&basis);
        let mass = assemble_mass(&basis, &tables);
        let mass_lu = LuFactorization::new(&mass)?;
        let mass_condition = mass_lu.condition_estimate().to_f64_lossy();
        if !(mass_condition <= MASS_CONDITION_LIMIT) {
            return Err(GalerkinError::IllConditioned { condition: mass_condition, limit: MASS_CONDITION_LIMIT });
        }
        if mass_condition > MASS_CONDITION_WARN {
            log::warn!("mass matrix condition estimate {mass_condition:.3e} exceeds {MASS_CONDITION_WARN:.0e}");
        }
        let advection = AdvectionTensor::build(&basis, &tables);
        log::debug!("galerkin workspace: n={} nnz(U)={} cond(M)={mass_condition:.3e}", basis.len(), advection.nnz());
        Ok(Self { basis, tables, mass, mass_lu, mass_condition, load, advection })
    }

    pub fn basis(&self) -> &MultiIndexBasis<T> {
        &self.basis
    }

    pub fn tables(&self) -> &Integral1DTables<T> {
        &self.tables
    }

    pub fn mass(&self) -> &Array2<T> {
        &self.mass
    }

    pub fn mass_condition(&self) -> f64 {
        self.mass_condition
    }

    pub fn load(&self) -> &Array1<T> {
        &self.load
    }

    pub fn advection(&self) -> &AdvectionTensor<T> {
        &self.advection
    }

    pub fn apply_g(&self, c: &[T], epsilon: T) -> Array2<T> {
        self.advection.apply_g(c, epsilon)
    }

    pub fn apply_l(&self, c: &[T], epsilon: T) -> Array1<T> {
        self.advection.apply_l(c, epsilon)
    }

    /// Solves `mass · a = rhs`.
    pub fn solve_mass(&self, rhs: &[T]) -> Result<Array1<T>, GalerkinError> {
        Ok(self.mass_lu.solve(rhs)?)
    }

    /// Coefficients of the L² projection `f^approx = Φᵀa` of the assembled objective.
    pub fn project_objective(&self) -> Result<Array1<T>, GalerkinError> {
        self.solve_mass(self.load.as_slice().expect("contiguous load"))
    }
}

/// L² projection coefficients `a` solving `mass · a = F` for an arbitrary load.
pub fn project_objective<T: Scalar>(workspace: &GalerkinWorkspace<T>, load: &[T]) -> Result<Array1<T>, GalerkinError> {
    workspace.solve_mass(load)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisFamily, BoxDomain, Truncation};
    use crate::objectives::{ackley, quadratic_diag, rastrigin, Factor1d};
    use crate::quadrature::GaussRule;
    use rand::{Rng, SeedableRng};

    fn basis(family: BasisFamily, trunc: Truncation, d: usize, lo: f64, hi: f64) -> MultiIndexBasis<f64> {
        MultiIndexBasis::new(family, BoxDomain::cube(d, lo, hi).unwrap(), trunc).unwrap()
    }

    #[test]
    fn monomial_mass_1d() {
        let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(2), 1, -1.0, 1.0);
        let t = Integral1DTables::build(&b);
        let m = assemble_mass(&b, &t);
        let want = [[2.0, 0.0, 2.0 / 3.0], [0.0, 2.0 / 3.0, 0.0], [2.0 / 3.0, 0.0, 0.4]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[[i, j]] - want[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn legendre_mass_is_diagonal() {
        for (d, trunc) in [(2, Truncation::TotalDegree(6)), (3, Truncation::HyperbolicCross(6))] {
            let b = basis(BasisFamily::Legendre, trunc, d, -1.0, 1.0);
            let t = Integral1DTables::build(&b);
            let m = assemble_mass(&b, &t);
            for i in 0..b.len() {
                for j in 0..b.len() {
                    if i != j {
                        assert!(m[[i, j]].abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_only_mass_is_volume() {
        for d in 1..=4 {
            let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(0), d, -2.0, 2.0);
            let t = Integral1DTables::build(&b);
            assert_eq!(assemble_mass(&b, &t)[[0, 0]], 4f64.powi(d as i32));
        }
    }

    #[test]
    fn separable_load_examples() {
        let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(0), 3, -2.0, 2.0);
        let c = SeparableForm::new(vec![vec![Factor1d::Polynomial(vec![2.5]), Factor1d::one(), Factor1d::one()]]);
        assert!((assemble_load_separable(&b, &c)[0] - 2.5 * 64.0).abs() < 1e-12);

        let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(3), 1, -1.0, 1.0);
        let f = quadratic_diag(&[1.0]).unwrap();
        let load = assemble_load_separable(&b, f.separable().unwrap());
        let want = [2.0 / 3.0, 0.0, 0.4, 0.0];
        for (a, w) in load.iter().zip(want) {
            assert!((a - w).abs() < 1e-14);
        }
    }

    #[test]
    fn montecarlo_load_constant_and_determinism() {
        let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(0), 2, -2.0, 2.0);
        let one = Objective::new("one", 2, |_x: &[f64]| 1.0);
        let f = assemble_load_montecarlo(&b, &one, 1000, 3).unwrap();
        assert!((f[0] - 16.0).abs() < 1e-12);

        let b = basis(BasisFamily::Monomial, Truncation::HyperbolicCross(2), 2, -2.0, 2.0);
        let a = ackley(2).unwrap();
        let f1 = assemble_load_montecarlo(&b, &a, 200_000, 11).unwrap();
        let f2 = assemble_load_montecarlo(&b, &a, 200_000, 11).unwrap();
        assert!(f1.iter().zip(&f2).all(|(x, y)| x.to_bits() == y.to_bits()));
        let f3 = assemble_load_montecarlo(&b, &a, 200_000, 12).unwrap();
        assert!(f1 != f3);
        assert_eq!(assemble_load_montecarlo(&b, &a, 0, 1), Err(GalerkinError::NoSamples));
    }

    #[test]
    fn montecarlo_error_decays_like_inverse_sqrt() {
        let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(0), 2, -2.0, 2.0);
        let a = ackley(2).unwrap();
        let std_at = |n: u64| {
            let vals: Vec<f64> = (0..30).map(|s| assemble_load_montecarlo(&b, &a, n, 100 + s).unwrap()[0]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        };
        let s3 = std_at(1_000);
        let s4 = std_at(10_000);
        let s5 = std_at(100_000);
        // each decade should shrink the spread by about √10 ≈ 3.16
        for ratio in [s3 / s4, s4 / s5] {
            assert!(ratio > 1.8 && ratio < 5.5, "ratio {ratio} ({s3}, {s4}, {s5})");
        }
    }

    #[test]
    fn rastrigin_separable_load_matches_montecarlo() {
        let b = basis(BasisFamily::Legendre, Truncation::TotalDegree(2), 2, -2.0, 2.0);
        let f = rastrigin(2).unwrap();
        let exact = assemble_load_separable(&b, f.separable().unwrap());
        let n_mc = 10_000_000u64;
        let mc = assemble_load_montecarlo(&b, &f, n_mc, 5).unwrap();
        // standard error estimate from an independent smaller sample of the integrand
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m = 200_000;
        let mut s1 = vec![0.0; b.len()];
        let mut s2 = vec![0.0; b.len()];
        for _ in 0..m {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let fx = f.eval(&x);
            for (i, phi) in b.eval(&x).into_iter().enumerate() {
                let v = 16.0 * fx * phi;
                s1[i] += v;
                s2[i] += v * v;
            }
        }
        for i in 0..b.len() {
            let mean = s1[i] / m as f64;
            let sd = (s2[i] / m as f64 - mean * mean).sqrt();
            let se = sd / (n_mc as f64).sqrt();
            assert!((exact[i] - mc[i]).abs() <= 3.0 * se, "i={i} exact={} mc={} se={se}", exact[i], mc[i]);
        }
    }

    /// Brute-force oracle: materialize Ũ by tensor Gauss quadrature of the basis functions.
    fn dense_u(b: &MultiIndexBasis<f64>) -> Vec<f64> {
        let n = b.len();
        let d = b.dim();
        let dom = b.domain();
        let nodes = 3 * b.max_degree() as usize / 2 + 3;
        let rules: Vec<GaussRule<f64>> =
            (0..d).map(|p| GaussRule::on_interval(nodes, dom.lower()[p], dom.upper()[p])).collect();
        let mut u = vec![0.0; n * n * n * d];
        let total = nodes.pow(d as u32);
        for code in 0..total {
            let mut c = code;
            let mut x = vec![0.0; d];
            let mut w = 1.0;
            for p in 0..d {
                let k = c % nodes;
                c /= nodes;
                x[p] = rules[p].nodes[k];
                w *= rules[p].weights[k];
            }
            let phi = b.eval(&x);
            let g = b.gradient(&x);
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for p in 0..d {
                            u[((i * n + j) * n + k) * d + p] += w * g[[k, p]] * g[[j, p]] * phi[i];
                        }
                    }
                }
            }
        }
        u
    }

    fn check_against_dense(b: MultiIndexBasis<f64>) {
        let n = b.len();
        let d = b.dim();
        let u = dense_u(&b);
        let tables = Integral1DTables::build(&b);
        let tensor = AdvectionTensor::build(&b, &tables);
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let eps = 0.1;
        for _ in 0..5 {
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = tensor.apply_g(&c, eps);
            let l = tensor.apply_l(&c, eps);
            for i in 0..n {
                let mut li = 0.0;
                for j in 0..n {
                    let mut gij = 0.0;
                    for k in 0..n {
                        let s: f64 = (0..d).map(|p| u[((i * n + j) * n + k) * d + p]).sum();
                        gij += -c[k] * s / eps;
                        li += c[j] * c[k] * s / (2.0 * eps);
                    }
                    assert!((g[[i, j]] - gij).abs() < 1e-9 * gij.abs().max(1.0), "G[{i},{j}] {} vs {gij}", g[[i, j]]);
                }
                assert!((l[i] - li).abs() < 1e-9 * li.abs().max(1.0), "L[{i}] {} vs {li}", l[i]);
            }
            // symmetry of Ũ in j, k and single-entry access
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for p in 0..d {
                            let a = u[((i * n + j) * n + k) * d + p];
                            let bb = u[((i * n + k) * n + j) * d + p];
                            assert!((a - bb).abs() < 1e-9 * a.abs().max(1.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn advection_matches_dense_oracle() {
        check_against_dense(basis(BasisFamily::Monomial, Truncation::TotalDegree(2), 1, -1.0, 1.0));
        check_against_dense(basis(BasisFamily::Monomial, Truncation::TotalDegree(3), 2, -2.0, 2.0));
        check_against_dense(basis(BasisFamily::Legendre, Truncation::TotalDegree(3), 2, -2.0, 2.0));
        check_against_dense(basis(BasisFamily::Legendre, Truncation::HyperbolicCross(4), 2, -1.0, 3.0));
        check_against_dense(
            MultiIndexBasis::new(
                BasisFamily::Monomial,
                BoxDomain::new(vec![-1.0, 0.0], vec![2.0, 1.5]).unwrap(),
                Truncation::HyperbolicCross(3),
            )
            .unwrap(),
        );
    }

    #[test]
    fn g_matrix_hand_integrals_1d() {
        // basis {1, x, x²} on [-1,1], c = (0,0,1): Σ_k c_k Ũ_{ijk} = ∫ 2x φ_j' φ_i
        let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(2), 1, -1.0, 1.0);
        let t = Integral1DTables::build(&b);
        let tensor = AdvectionTensor::build(&b, &t);
        let g = tensor.apply_g(&[0.0, 0.0, 1.0], 0.1);
        // φ_j' = (0, 1, 2x): ∫2x·1·φ_i = (0, 4/3, 0); ∫2x·2x·φ_i = (8/3, 0, 8/5)
        let want = [[0.0, 0.0, 8.0 / 3.0], [0.0, 4.0 / 3.0, 0.0], [0.0, 0.0, 8.0 / 5.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[[i, j]] + 10.0 * want[i][j]).abs() < 1e-13, "G[{i},{j}]={}", g[[i, j]]);
            }
        }
        assert!(tensor.apply_g(&[0.0; 3], 0.1).iter().all(|&v| v == 0.0));
        assert!(tensor.apply_l(&[0.0; 3], 0.1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l_hand_integrals_1d() {
        // basis {1, x}, c = (0, 2): |u|² ε/2 = (1/2ε) 4 → L_i = (2/ε) ∫ φ_i
        let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(1), 1, -1.0, 1.0);
        let t = Integral1DTables::build(&b);
        let l = AdvectionTensor::build(&b, &t).apply_l(&[0.0, 2.0], 0.5);
        assert!((l[0] - 8.0).abs() < 1e-14);
        assert_eq!(l[1], 0.0);
    }

    #[test]
    fn g_and_l_identity() {
        let b = basis(BasisFamily::Legendre, Truncation::TotalDegree(4), 2, -2.0, 2.0);
        let t = Integral1DTables::build(&b);
        let tensor = AdvectionTensor::build(&b, &t);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let c: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let eps = 0.1;
            let gc = tensor.apply_g(&c, eps).dot(&Array1::from(c.clone()));
            let l = tensor.apply_l(&c, eps);
            for i in 0..b.len() {
                assert!((gc[i] + 2.0 * l[i]).abs() < 1e-10 * l[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn monomial_parity_sparsity() {
        let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(4), 2, -2.0, 2.0);
        let t = Integral1DTables::build(&b);
        let tensor = AdvectionTensor::build(&b, &t);
        let idx = b.indices();
        for &(i, j, k, _) in tensor.entries() {
            for p in 0..2 {
                // each coordinate's combined degree (counting derivatives) must be even
                let ri = idx[i as usize].0[p] + idx[j as usize].0[p] + idx[k as usize].0[p];
                assert_eq!(ri % 2, 0);
            }
        }
    }

    #[test]
    fn projection_reproduces_span_members() {
        let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(4), 1, -2.0, 2.0);
        let f = quadratic_diag(&[1.0]).unwrap();
        let ws = GalerkinWorkspace::assemble(b.clone(), &f, LoadMode::Separable).unwrap();
        let a = ws.project_objective().unwrap();
        let want = [0.0, 0.0, 1.0, 0.0, 0.0];
        for (x, w) in a.iter().zip(want) {
            assert!((x - w).abs() < 1e-8);
        }
        let five = Objective::new("five", 1, |_x: &[f64]| 5.0)
            .with_separable(SeparableForm::new(vec![vec![Factor1d::Polynomial(vec![5.0])]]));
        let ws = GalerkinWorkspace::assemble(b, &five, LoadMode::Separable).unwrap();
        let a = ws.project_objective().unwrap();
        assert!((a[0] - 5.0).abs() < 1e-10);
        assert!(a.iter().skip(1).all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn projection_residual_decreases_with_degree() {
        let f = rastrigin::<f64>(1).unwrap();
        let rule = GaussRule::on_interval(200, -2.0, 2.0);
        let mut last = f64::INFINITY;
        for m in [2, 4, 6, 8] {
            let b = basis(BasisFamily::Legendre, Truncation::TotalDegree(m), 1, -2.0, 2.0);
            let ws = GalerkinWorkspace::assemble(b.clone(), &f, LoadMode::Separable).unwrap();
            let a = ws.project_objective().unwrap();
            let res = rule
                .integrate(|x| {
                    let e = f.eval(&[x]) - b.combine_value(&[x], a.as_slice().unwrap());
                    e * e
                })
                .sqrt();
            assert!(res < last, "M={m} residual {res} not below {last}");
            last = res;
        }
    }

    #[test]
    fn ill_conditioned_mass_rejected() {
        let b = basis(BasisFamily::Monomial, Truncation::TotalDegree(24), 1, 0.0, 1.0);
        let load = Array1::zeros(b.len());
        let err = GalerkinWorkspace::with_load(b, load).unwrap_err();
        assert!(matches!(err, GalerkinError::IllConditioned { .. } | GalerkinError::Linalg(_)), "{err:?}");
    }

    #[test]
    fn non_separable_requires_montecarlo() {
        let b = basis(BasisFamily::Monomial, Truncation::HyperbolicCross(2), 2, -2.0, 2.0);
        let a = ackley(2).unwrap();
        assert!(matches!(
            GalerkinWorkspace::assemble(b.clone(), &a, LoadMode::Separable),
            Err(GalerkinError::NotSeparable(_))
        ));
        assert!(GalerkinWorkspace::assemble(b, &a, LoadMode::MonteCarlo { samples: 1000, seed: 1 }).is_ok());
    }

    #[test]
    fn mass_is_symmetric_positive_definite() {
        for (fam, trunc, d) in [
            (BasisFamily::Monomial, Truncation::TotalDegree(4), 3),
            (BasisFamily::Legendre, Truncation::HyperbolicCross(2), 6),
            (BasisFamily::Monomial, Truncation::HyperbolicCross(2), 2),
        ] {
            let b = basis(fam, trunc, d, -2.0, 2.0);
            let t = Integral1DTables::build(&b);
            let m = assemble_mass(&b, &t);
            assert_eq!(m, m.t());
            // positive definiteness via Cholesky
            let n = b.len();
            let mut l = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in 0..=i {
                    let s: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
                    if i == j {
                        let v = m[[i, i]] - s;
                        assert!(v > 0.0, "not positive definite");
                        l[[i, j]] = v.sqrt();
                    } else {
                        l[[i, j]] = (m[[i, j]] - s) / l[[j, j]];
                    }
                }
            }
        }
    }
}
