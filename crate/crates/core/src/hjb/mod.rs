//! Successive approximation (policy iteration) on the Galerkin-projected GHJB equation.
//!
//! Each inner step freezes the control `u = −(1/ε)∇Φᵀc_prev` and solves the linear system
//! `(−μ·mass + G(c_prev))·c = −F − L(c_prev)`. Discount continuation repeats the inner loop
//! for a geometrically shrinking μ, warm-starting every stage from the previous coefficients.

mod file;
mod flow;

pub use file::{from_json, load_value_function, save_value_function, to_json, FileError, FORMAT_NAME, FORMAT_VERSION};
pub use flow::{integrate_flow, step_count, FlowError, FlowField, Trajectory};

use crate::basis::MultiIndexBasis;
use crate::galerkin::{GalerkinError, GalerkinWorkspace, LoadMode};
use crate::linalg::{LinalgError, LuFactorization};
use crate::scalar::{norm2, Scalar};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of fixed sample points used for the monotonicity diagnostic.
pub const MONOTONICITY_SAMPLES: usize = 50;
/// Slack allowed before a sampled increase of `V` between iterates is counted.
pub const MONOTONICITY_SLACK: f64 = 1e-6;
/// Growth factor of `‖c‖` in a single inner step that aborts a stage.
pub const DIVERGENCE_GROWTH: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HjbError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("linear solve failed at mu={mu}, iteration {iteration}: {source}")]
    LinearSolve { mu: f64, iteration: usize, source: LinalgError },
    #[error("non-finite coefficients at mu={mu}, iteration {iteration}")]
    NonFinite { mu: f64, iteration: usize },
    #[error("no convergence at mu={mu} within {max_inner_iters} iterations (last change {last_change:.3e})")]
    NonConvergence { mu: f64, max_inner_iters: usize, last_change: f64 },
    #[error("iterates diverged at mu={mu}, iteration {iteration}: norm grew by {growth:.3e}")]
    Diverged { mu: f64, iteration: usize, growth: f64 },
    #[error(transparent)]
    Galerkin(#[from] GalerkinError),
    #[error("initial coefficients have length {got}, basis has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Solver parameters for policy iteration and discount continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjbConfig {
    pub mu: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub max_inner_iters: usize,
    pub theta: f64,
    pub tol_mu: f64,
    pub load_mode: LoadMode,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self {
            mu: 0.1,
            epsilon: 0.1,
            tol: 1e-8,
            max_inner_iters: 200,
            theta: 0.5,
            tol_mu: 0.01,
            load_mode: LoadMode::Separable,
        }
    }
}

impl HjbConfig {
    pub fn validate(&self) -> Result<(), HjbError> {
        let bad = |m: &str| Err(HjbError::InvalidConfig(m.to_string()));
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad("epsilon must lie in (0, 1]");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_inner_iters == 0 {
            return bad("max_inner_iters must be at least 1");
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad("theta must lie in (0, 1)");
        }
        if !(self.tol_mu > 0.0) {
            return bad("tol_mu must be positive");
        }
        if let LoadMode::MonteCarlo { samples: 0, .. } = self.load_mode {
            return bad("Monte Carlo load needs at least one sample");
        }
        Ok(())
    }

    /// Discount factors visited by continuation: `μ, θμ, θ²μ, …`; the first stage always runs,
    /// later ones only while the factor stays above `tol_mu`.
    pub fn mu_schedule(&self) -> Vec<f64> {
        let mut out = vec![self.mu];
        let mut mu = self.mu * self.theta;
        while mu > self.tol_mu {
            out.push(mu);
            mu *= self.theta;
        }
        out
    }
}

/// Where a value function came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: HjbConfig,
    pub mu_schedule: Vec<f64>,
    pub inner_iterations: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// `V_n(x) = Φ_n(x)ᵀc` together with its feedback `u_n(x) = −(1/ε)∇Φ_n(x)ᵀc`.
#[derive(Debug, Clone)]
pub struct ValueFunctionApprox<T> {
    basis: MultiIndexBasis<T>,
    coeffs: Array1<T>,
    epsilon: T,
    projection: Option<Array1<T>>,
    provenance: Provenance,
}

impl<T: Scalar> ValueFunctionApprox<T> {
    pub fn new(
        basis: MultiIndexBasis<T>,
        coeffs: Array1<T>,
        epsilon: T,
        provenance: Provenance,
    ) -> Result<Self, HjbError> {
        if coeffs.len() != basis.len() {
            return Err(HjbError::DimensionMismatch { expected: basis.len(), got: coeffs.len() });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(HjbError::NonFinite { mu: f64::NAN, iteration: 0 });
        }
        Ok(Self { basis, coeffs, epsilon, projection: None, provenance })
    }

    /// Attaches the coefficients of `f^approx` on the same basis.
    pub fn with_projection(mut self, projection: Array1<T>) -> Result<Self, HjbError> {
        if projection.len() != self.basis.len() {
            return Err(HjbError::DimensionMismatch { expected: self.basis.len(), got: projection.len() });
        }
        self.projection = Some(projection);
        Ok(self)
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.provenance.config_hash = Some(hash.into());
        self
    }

    pub fn basis(&self) -> &MultiIndexBasis<T> {
        &self.basis
    }

    pub fn coeffs(&self) -> &Array1<T> {
        &self.coeffs
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Coefficients of `f^approx`, if stored.
    pub fn projection(&self) -> Option<&Array1<T>> {
        self.projection.as_ref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn eval_value(&self, x: &[T]) -> T {
        self.basis.combine_value(x, self.coeffs.as_slice().expect("contiguous coefficients"))
    }

    pub fn eval_feedback(&self, x: &[T]) -> Vec<T> {
        self.eval_value_and_feedback(x).1
    }

    pub fn eval_value_and_feedback(&self, x: &[T]) -> (T, Vec<T>) {
        let (v, mut g) = self.basis.combine_with_gradient(x, self.coeffs.as_slice().expect("contiguous coefficients"));
        let scale = -T::one() / self.epsilon;
        g.iter_mut().for_each(|gi| *gi *= scale);
        (v, g)
    }

    /// `f^approx(x)`, if the projection is stored.
    pub fn eval_projection(&self, x: &[T]) -> Option<T> {
        self.projection.as_ref().map(|a| self.basis.combine_value(x, a.as_slice().expect("contiguous coefficients")))
    }
}

/// Diagnostics of one continuation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub mu: f64,
    pub inner_iterations: usize,
    pub control_change: f64,
    /// `‖(−μ·mass + G(c))c + F + L(c)‖₂` at the returned coefficients.
    pub residual_norm: f64,
    /// Count of sampled points where `V` increased by more than the slack, over all iterates.
    pub monotonicity_violations: usize,
    pub max_monotonicity_increase: f64,
    /// Sampled `V^{(m)}` at the diagnostic points, one row per iterate.
    pub sampled_values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub basis_size: usize,
    pub mass_condition: f64,
    pub sample_points: Vec<Vec<f64>>,
    pub stages: Vec<StageReport>,
}

/// One policy-iteration step: solves `(−μ·mass + G(c_prev))·c = −F − L(c_prev)`.
pub fn ghjb_step<T: Scalar>(
    workspace: &GalerkinWorkspace<T>,
    c_prev: &[T],
    mu: T,
    epsilon: T,
) -> Result<Array1<T>, LinalgError> {
    let mut system = workspace.apply_g(c_prev, epsilon);
    system.scaled_add(-mu, workspace.mass());
    let rhs = -(workspace.load() + &workspace.apply_l(c_prev, epsilon));
    LuFactorization::new(&system)?.solve(rhs.as_slice().expect("contiguous rhs"))
}

/// `‖(−μ·mass + G(c))c + F + L(c)‖₂`, zero exactly at a fixed point of [`ghjb_step`].
pub fn fixed_point_residual<T: Scalar>(workspace: &GalerkinWorkspace<T>, c: &[T], mu: T, epsilon: T) -> T {
    let mut system = workspace.apply_g(c, epsilon);
    system.scaled_add(-mu, workspace.mass());
    let r = system.dot(&Array1::from(c.to_vec())) + workspace.load() + workspace.apply_l(c, epsilon);
    norm2(r.as_slice().expect("contiguous residual"))
}

/// `‖c_new − c_old‖₂ / max(1, ‖c_old‖₂)`.
pub fn control_change<T: Scalar>(c_new: &[T], c_old: &[T]) -> T {
    let diff: Vec<T> = c_new.iter().zip(c_old).map(|(&a, &b)| a - b).collect();
    norm2(&diff) / T::one().max(norm2(c_old))
}

fn sample_points<T: Scalar>(basis: &MultiIndexBasis<T>) -> Vec<Vec<T>> {
    let dom = basis.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..MONOTONICITY_SAMPLES)
        .map(|_| {
            (0..dom.dim())
                .map(|p| {
                    let a = dom.lower()[p].to_f64_lossy();
                    let b = dom.upper()[p].to_f64_lossy();
                    T::lit(rng.random_range(a..=b))
                })
                .collect()
        })
        .collect()
}

fn run_stage<T: Scalar>(
    workspace: &GalerkinWorkspace<T>,
    config: &HjbConfig,
    mu: f64,
    c_init: Array1<T>,
    points: &[Vec<T>],
) -> Result<(Array1<T>, StageReport), HjbError> {
    let basis = workspace.basis();
    let eps = T::lit(config.epsilon);
    let mu_t = T::lit(mu);
    let sample = |c: &Array1<T>| -> Vec<f64> {
        let cs = c.as_slice().expect("contiguous coefficients");
        points.iter().map(|x| basis.combine_value(x, cs).to_f64_lossy()).collect()
    };

    let mut c = c_init;
    let mut sampled_values = vec![sample(&c)];
    let mut violations = 0;
    let mut max_increase = f64::NEG_INFINITY;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_inner_iters {
        let iteration = iterations + 1;
        let prev = c.as_slice().expect("contiguous coefficients");
        let next =
            ghjb_step(workspace, prev, mu_t, eps).map_err(|source| HjbError::LinearSolve { mu, iteration, source })?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(HjbError::NonFinite { mu, iteration });
        }
        let n_prev = norm2(prev).to_f64_lossy();
        let n_next = norm2(next.as_slice().expect("contiguous coefficients")).to_f64_lossy();
        if n_prev > 0.0 && n_next > DIVERGENCE_GROWTH * n_prev {
            return Err(HjbError::Diverged { mu, iteration, growth: n_next / n_prev });
        }
        change = control_change(next.as_slice().expect("contiguous coefficients"), prev).to_f64_lossy();

        // the first step leaves the arbitrary initial guess, so only later steps are checked
        let values = sample(&next);
        if iterations > 0 {
            let last = sampled_values.last().expect("initial sample present");
            for (&new, &old) in values.iter().zip(last) {
                let inc = new - old;
                max_increase = max_increase.max(inc);
                if inc > MONOTONICITY_SLACK * old.abs().max(1.0) {
                    violations += 1;
                }
            }
        }
        sampled_values.push(values);
        c = next;
        iterations = iteration;
        log::trace!("mu={mu} iteration {iteration}: change {change:.3e}");
        if change <= config.tol {
            break;
        }
    }
    if change > config.tol {
        return Err(HjbError::NonConvergence { mu, max_inner_iters: config.max_inner_iters, last_change: change });
    }
    if violations > 0 {
        log::debug!("mu={mu}: {violations} sampled monotonicity violations (max increase {max_increase:.3e})");
    }
    let residual_norm =
        fixed_point_residual(workspace, c.as_slice().expect("contiguous coefficients"), mu_t, eps).to_f64_lossy();
    let report = StageReport {
        mu,
        inner_iterations: iterations,
        control_change: change,
        residual_norm,
        monotonicity_violations: violations,
        max_monotonicity_increase: if max_increase.is_finite() { max_increase } else { 0.0 },
        sampled_values,
    };
    Ok((c, report))
}

fn solve_schedule<T: Scalar>(
    workspace: &GalerkinWorkspace<T>,
    config: &HjbConfig,
    schedule: Vec<f64>,
    c_init: Option<Array1<T>>,
) -> Result<(ValueFunctionApprox<T>, SolveReport), HjbError> {
    config.validate()?;
    let basis = workspace.basis();
    let mut c = match c_init {
        Some(c) if c.len() != basis.len() => {
            return Err(HjbError::DimensionMismatch { expected: basis.len(), got: c.len() })
        }
        Some(c) => c,
        None => Array1::zeros(basis.len()),
    };
    let points = sample_points(basis);
    let mut stages = Vec::with_capacity(schedule.len());
    for &mu in &schedule {
        let (next, report) = run_stage(workspace, config, mu, c, &points)?;
        log::info!(
            "mu={mu}: {} iterations, change {:.3e}, residual {:.3e}",
            report.inner_iterations,
            report.control_change,
            report.residual_norm
        );
        c = next;
        stages.push(report);
    }
    let provenance = Provenance {
        config: *config,
        inner_iterations: stages.iter().map(|s| s.inner_iterations).collect(),
        mu_schedule: schedule,
        config_hash: None,
    };
    let projection = workspace.project_objective()?;
    let vfa =
        ValueFunctionApprox::new(basis.clone(), c, T::lit(config.epsilon), provenance)?.with_projection(projection)?;
    let report = SolveReport {
        basis_size: basis.len(),
        mass_condition: workspace.mass_condition(),
        sample_points: points.iter().map(|x| x.iter().map(|v| v.to_f64_lossy()).collect()).collect(),
        stages,
    };
    Ok((vfa, report))
}

/// Policy iteration at the single discount factor `config.mu`, starting from `c_init`
/// (zero coefficients, i.e. `u⁰ ≡ 0`, when `None`).
pub fn successive_approximation<T: Scalar>(
    workspace: &GalerkinWorkspace<T>,
    config: &HjbConfig,
    c_init: Option<Array1<T>>,
) -> Result<(ValueFunctionApprox<T>, SolveReport), HjbError> {
    solve_schedule(workspace, config, vec![config.mu], c_init)
}

/// Policy iteration over the continuation schedule [`HjbConfig::mu_schedule`], each stage
/// warm-started from the previous one; the first stage starts from `u⁰ ≡ 0`.
pub fn discount_continuation<T: Scalar>(
    workspace: &GalerkinWorkspace<T>,
    config: &HjbConfig,
) -> Result<(ValueFunctionApprox<T>, SolveReport), HjbError> {
    solve_schedule(workspace, config, config.mu_schedule(), None)
}

#[cfg(test)]
mod tests;
