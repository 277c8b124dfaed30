//! Deterministic forward-Euler flows `ẋ = u_n(x)` and `ẋ = −∇f(x)`.

use super::ValueFunctionApprox;
use crate::objectives::{finite_diff_gradient, Objective};
use crate::scalar::{norm2, Scalar};
use std::fmt;
use thiserror::Error;

/// Trajectories leaving this ball are treated as diverged.
pub const DIVERGENCE_RADIUS: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("time step and horizon must be positive and finite (dt={dt}, horizon={horizon})")]
    InvalidTime { dt: f64, horizon: f64 },
    #[error("initial point has dimension {got}, field has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trajectory diverged at step {step}: |x| = {norm:.3e}")]
    Diverged { step: usize, norm: f64, position: Vec<f64>, partial: Trajectory<f64> },
}

/// Right-hand side of the flow.
#[derive(Clone, Copy)]
pub enum FlowField<'a, T> {
    /// `ẋ = −(1/ε)∇V_n(x)`.
    Feedback(&'a ValueFunctionApprox<T>),
    /// `ẋ = −∇f(x)` by central differences of width `fd_step`.
    NegGradient { objective: &'a Objective<T>, fd_step: T },
}

impl<T: Scalar> fmt::Debug for FlowField<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowField::Feedback(v) => f.debug_tuple("Feedback").field(&v.basis().len()).finish(),
            FlowField::NegGradient { objective, fd_step } => {
                f.debug_struct("NegGradient").field("objective", objective).field("fd_step", fd_step).finish()
            }
        }
    }
}

impl<T: Scalar> FlowField<'_, T> {
    pub fn dim(&self) -> usize {
        match self {
            FlowField::Feedback(v) => v.dim(),
            FlowField::NegGradient { objective, .. } => objective.dim(),
        }
    }

    pub fn velocity(&self, x: &[T]) -> Vec<T> {
        match self {
            FlowField::Feedback(v) => v.eval_feedback(x),
            FlowField::NegGradient { objective, fd_step } => {
                finite_diff_gradient(objective, x, *fd_step).into_iter().map(|g| -g).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn endpoint(&self) -> &[T] {
        self.states.last().expect("trajectory holds the initial state")
    }

    fn to_f64(&self) -> Trajectory<f64> {
        Trajectory {
            times: self.times.iter().map(|t| t.to_f64_lossy()).collect(),
            states: self.states.iter().map(|s| s.iter().map(|v| v.to_f64_lossy()).collect()).collect(),
        }
    }
}

/// `⌈horizon/dt⌉`, treating ratios within a few ulps of an integer as that integer.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    let ratio = horizon / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Forward Euler over `⌈horizon/dt⌉` steps; the returned path includes `x0` at `t = 0`.
pub fn integrate_flow<T: Scalar>(
    field: FlowField<'_, T>,
    x0: &[T],
    dt: T,
    horizon: T,
) -> Result<Trajectory<T>, FlowError> {
    let (dt64, h64) = (dt.to_f64_lossy(), horizon.to_f64_lossy());
    if !(dt64 > 0.0 && dt64.is_finite() && h64 > 0.0 && h64.is_finite()) {
        return Err(FlowError::InvalidTime { dt: dt64, horizon: h64 });
    }
    if x0.len() != field.dim() {
        return Err(FlowError::DimensionMismatch { expected: field.dim(), got: x0.len() });
    }
    let steps = step_count(h64, dt64);
    let mut path = Trajectory { times: Vec::with_capacity(steps + 1), states: Vec::with_capacity(steps + 1) };
    path.times.push(T::zero());
    path.states.push(x0.to_vec());
    let mut x = x0.to_vec();
    for k in 1..=steps {
        let v = field.velocity(&x);
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi += dt * vi;
        }
        let norm = norm2(&x).to_f64_lossy();
        if !(norm <= DIVERGENCE_RADIUS) {
            return Err(FlowError::Diverged {
                step: k,
                norm,
                position: x.iter().map(|v| v.to_f64_lossy()).collect(),
                partial: path.to_f64(),
            });
        }
        path.times.push(T::from_usize_lossy(k) * dt);
        path.states.push(x.clone());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{double_well_1d, Objective};

    #[test]
    fn step_count_tolerates_rounding() {
        assert_eq!(step_count(10.0, 0.1), 100);
        assert_eq!(step_count(10.0, 0.01), 1000);
        assert_eq!(step_count(1.0, 0.3), 4);
        assert_eq!(step_count(0.3, 0.1), 3);
    }

    #[test]
    fn zero_field_is_constant() {
        let zero = Objective::<f64>::new("zero", 2, |_| 0.0);
        let field = FlowField::NegGradient { objective: &zero, fd_step: 1e-5 };
        let path = integrate_flow(field, &[0.3, -1.0], 0.1, 1.0).unwrap();
        assert_eq!(path.len(), 11);
        assert!(path.states.iter().all(|s| s == &[0.3, -1.0]));
    }

    #[test]
    fn gradient_flow_stays_in_local_well() {
        let f = double_well_1d::<f64>();
        let field = FlowField::NegGradient { objective: &f, fd_step: 1e-6 };
        let path = integrate_flow(field, &[-2.0], 0.01, 10.0).unwrap();
        assert!((path.endpoint()[0] + 1.47867).abs() < 0.1, "{:?}", path.endpoint());
    }

    #[test]
    fn divergence_aborts_with_partial_path() {
        let f = Objective::<f64>::new("repel", 1, |x| -x[0].powi(4));
        let field = FlowField::NegGradient { objective: &f, fd_step: 1e-4 };
        match integrate_flow(field, &[2.0], 0.1, 100.0) {
            Err(FlowError::Diverged { step, partial, .. }) => {
                assert_eq!(partial.len(), step);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_time() {
        let f = double_well_1d::<f64>();
        let field = FlowField::NegGradient { objective: &f, fd_step: 1e-6 };
        assert!(matches!(integrate_flow(field, &[0.0], 0.0, 1.0), Err(FlowError::InvalidTime { .. })));
        assert!(matches!(integrate_flow(field, &[0.0, 1.0], 0.1, 1.0), Err(FlowError::DimensionMismatch { .. })));
    }
}
