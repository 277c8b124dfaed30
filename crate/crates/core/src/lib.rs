//! Controlled consensus-based optimization.
//!
//! An offline phase approximates the value function of a discounted optimal control problem
//! `min ∫ e^{−μt} (f(y) + ε/2 |u|²) dt, ẏ = u` by Galerkin-projected policy iteration on a
//! sparse polynomial basis. Its feedback `u = −(1/ε)∇V` then drives an interacting particle
//! system alongside the usual consensus drift, without ever evaluating a gradient of `f`.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`, which is what the CLI and the experiments use.

pub mod basis;
pub mod cbo;
pub mod galerkin;
pub mod hjb;
pub mod linalg;
pub mod metrics;
pub mod objectives;
pub mod quadrature;
pub mod scalar;

pub use basis::{enumerate_indices, BasisFamily, MultiIndex, Truncation};
pub use cbo::{CboConfig, InitSpec, Variant};
pub use galerkin::LoadMode;
pub use hjb::HjbConfig;
pub use scalar::Scalar;

pub type BoxDomain = basis::BoxDomain<f64>;
pub type Basis = basis::MultiIndexBasis<f64>;
pub type Basis32 = basis::MultiIndexBasis<f32>;
pub type Objective = objectives::Objective<f64>;
pub type GalerkinWorkspace = galerkin::GalerkinWorkspace<f64>;
pub type ValueFunctionApprox = hjb::ValueFunctionApprox<f64>;
pub type ParticleEnsemble = cbo::ParticleEnsemble<f64>;
pub type EnsembleStats = metrics::EnsembleStats<f64>;
