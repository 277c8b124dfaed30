//! Standard and controlled consensus-based optimization, discretized by Euler–Maruyama.
//!
//! One step, with `v` the consensus point of the pre-step ensemble and `ξ_i ~ 𝒩(0, I_d)`:
//!
//! `X_i' = X_i + dt·[−λ̃_i(X_i − v) + β̃_i·u_n(X_i)] + σ√dt·(X_i − v)∘ξ_i`
//!
//! where `λ̃_i = λ·H(f(X_i) − f(v))` and `β̃_i = β·H(f(X_i) − f^approx(X_i))` in the controlled
//! variant, with `H(0) = 1`. The standard variant uses `λ̃ ≡ λ`, `β̃ ≡ 0`.

mod output;

pub use output::{csv_header, write_particles_csv, write_run_csv};

use crate::hjb::{step_count, ValueFunctionApprox};
use crate::metrics::{ensemble_variance, w2_to_dirac};
use crate::objectives::Objective;
use crate::scalar::Scalar;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CboError {
    #[error("invalid particle configuration: {0}")]
    InvalidConfig(String),
    #[error("{0:?} variant needs a value function")]
    MissingValueFunction(Variant),
    #[error("controlled variant needs the objective projection f^approx")]
    MissingProjection,
    #[error("{what} has dimension {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite value for particle {particle} at step {step} (t={t})")]
    NonFinite { step: usize, particle: usize, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    Controlled,
    ControlledUngated,
}

impl Variant {
    pub fn needs_value_function(self) -> bool {
        !matches!(self, Variant::Standard)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Controlled => "controlled",
            Variant::ControlledUngated => "controlled_ungated",
        }
    }
}

/// Initial particle distribution. Bounds of length 1 are broadcast to every dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    UniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// First `N` points, row-major, of the smallest `m^d ≥ N` lattice including the box corners.
    EquidistantGrid {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl InitSpec {
    pub fn uniform(lower: f64, upper: f64) -> Self {
        InitSpec::UniformBox { lower: vec![lower], upper: vec![upper] }
    }

    pub fn grid(lower: f64, upper: f64) -> Self {
        InitSpec::EquidistantGrid { lower: vec![lower], upper: vec![upper] }
    }

    /// Per-dimension bounds for a `d`-dimensional ensemble.
    pub fn bounds(&self, d: usize) -> Result<(Vec<f64>, Vec<f64>), CboError> {
        let (lo, hi) = match self {
            InitSpec::UniformBox { lower, upper } | InitSpec::EquidistantGrid { lower, upper } => (lower, upper),
        };
        let expand = |v: &Vec<f64>, what| match v.len() {
            1 => Ok(vec![v[0]; d]),
            n if n == d => Ok(v.clone()),
            n => Err(CboError::DimensionMismatch { what, expected: d, got: n }),
        };
        let (lo, hi) = (expand(lo, "initial lower bound")?, expand(hi, "initial upper bound")?);
        for (p, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !(a <= b) || !a.is_finite() || !b.is_finite() {
                return Err(CboError::InvalidConfig(format!("empty initial box in dimension {p}: [{a}, {b}]")));
            }
        }
        Ok((lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CboConfig {
    pub n_particles: usize,
    pub lambda: f64,
    pub beta: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub dt: f64,
    pub horizon: f64,
    pub variant: Variant,
    pub init: InitSpec,
    pub seed: u64,
    /// A run succeeds when its final `W₂²` is below this value.
    pub success_threshold: f64,
    /// Keep every particle position of every step in the run record.
    pub record_particles: bool,
}

impl Default for CboConfig {
    fn default() -> Self {
        Self {
            n_particles: 50,
            lambda: 1.0,
            beta: 1.0,
            sigma: 0.7,
            alpha: 40.0,
            dt: 0.1,
            horizon: 10.0,
            variant: Variant::Controlled,
            init: InitSpec::uniform(-1.0, 0.5),
            seed: 0,
            success_threshold: 0.0625,
            record_particles: false,
        }
    }
}

impl CboConfig {
    pub fn validate(&self) -> Result<(), CboError> {
        let bad = |m: &str| Err(CboError::InvalidConfig(m.to_string()));
        if self.n_particles == 0 {
            return bad("need at least one particle");
        }
        for (name, v) in [("lambda", self.lambda), ("beta", self.beta), ("sigma", self.sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CboError::InvalidConfig(format!("{name} must be non-negative and finite")));
            }
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be non-negative");
        }
        if !(self.success_threshold > 0.0) {
            return bad("success_threshold must be positive");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        step_count(self.horizon, self.dt)
    }
}

/// Particle positions (`N × d`), the current time and the noise generator.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble<T> {
    positions: Array2<T>,
    step: usize,
    dt: T,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ParticleEnsemble<T> {
    /// Samples the initial ensemble from `config.init` using `config.seed`.
    pub fn initialize(config: &CboConfig, d: usize) -> Result<Self, CboError> {
        config.validate()?;
        let (lo, hi) = config.init.bounds(d)?;
        let n = config.n_particles;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let positions = match &config.init {
            InitSpec::UniformBox { .. } => Array2::from_shape_fn((n, d), |(_, p)| {
                let u: f64 = rng.random();
                T::lit(lo[p] + (hi[p] - lo[p]) * u)
            }),
            InitSpec::EquidistantGrid { .. } => equidistant_grid(n, &lo, &hi),
        };
        Ok(Self { positions, step: 0, dt: T::lit(config.dt), rng })
    }

    /// Wraps explicit positions; noise is drawn from a generator seeded with `seed`.
    pub fn from_positions(positions: Array2<T>, dt: T, seed: u64) -> Self {
        Self { positions, step: 0, dt, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn positions(&self) -> ArrayView2<'_, T> {
        self.positions.view()
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> T {
        T::from_usize_lossy(self.step) * self.dt
    }
}

fn equidistant_grid<T: Scalar>(n: usize, lo: &[f64], hi: &[f64]) -> Array2<T> {
    let d = lo.len();
    let mut m = 1usize;
    while m.checked_pow(d as u32).is_some_and(|c| c < n) {
        m += 1;
    }
    let coord = |p: usize, j: usize| {
        if m == 1 {
            0.5 * (lo[p] + hi[p])
        } else {
            lo[p] + (hi[p] - lo[p]) * j as f64 / (m - 1) as f64
        }
    };
    Array2::from_shape_fn((n, d), |(i, p)| {
        // row-major: the first coordinate varies slowest
        let j = (i / m.pow((d - 1 - p) as u32)) % m;
        T::lit(coord(p, j))
    })
}

/// `Σ X_i w_i / Σ w_i` with `w_i = exp(−α(f_i − min_j f_j))`.
pub fn consensus_from_values<T: Scalar>(positions: ArrayView2<'_, T>, values: &[T], alpha: T) -> Vec<T> {
    assert_eq!(positions.nrows(), values.len(), "one objective value per particle");
    let fmin = values.iter().copied().fold(T::infinity(), T::min);
    let mut num = vec![T::zero(); positions.ncols()];
    let mut den = T::zero();
    for (row, &f) in positions.rows().into_iter().zip(values) {
        let w = (-alpha * (f - fmin)).exp();
        den += w;
        for (acc, &x) in num.iter_mut().zip(row) {
            *acc += w * x;
        }
    }
    num.into_iter().map(|s| s / den).collect()
}

pub fn consensus_point<T: Scalar>(positions: ArrayView2<'_, T>, f: &Objective<T>, alpha: T) -> Vec<T> {
    let values: Vec<T> =
        positions.rows().into_iter().map(|r| f.eval(r.as_slice().expect("row-major positions"))).collect();
    consensus_from_values(positions, &values, alpha)
}

/// Value function and `f^approx` coefficients resolved for a given variant.
#[derive(Debug, Clone, Copy)]
struct Drive<'a, T> {
    vfa: Option<&'a ValueFunctionApprox<T>>,
    f_approx: Option<&'a [T]>,
}

fn resolve<'a, T: Scalar>(
    config: &CboConfig,
    d: usize,
    vfa: Option<&'a ValueFunctionApprox<T>>,
    f_approx: Option<&'a [T]>,
) -> Result<Drive<'a, T>, CboError> {
    if config.variant == Variant::Standard {
        return Ok(Drive { vfa: None, f_approx: None });
    }
    let v = vfa.ok_or(CboError::MissingValueFunction(config.variant))?;
    if v.dim() != d {
        return Err(CboError::DimensionMismatch { what: "value function", expected: d, got: v.dim() });
    }
    let f_approx = match config.variant {
        Variant::Controlled => {
            let a = f_approx
                .or_else(|| v.projection().map(|p| p.as_slice().expect("contiguous projection")))
                .ok_or(CboError::MissingProjection)?;
            if a.len() != v.basis().len() {
                return Err(CboError::DimensionMismatch {
                    what: "f^approx coefficients",
                    expected: v.basis().len(),
                    got: a.len(),
                });
            }
            Some(a)
        }
        _ => None,
    };
    Ok(Drive { vfa: Some(v), f_approx })
}

/// Consensus point and per-particle gates of one ensemble state.
#[derive(Debug, Clone)]
struct Evaluation<T> {
    v: Vec<T>,
    lambda: Vec<T>,
    beta: Vec<T>,
}

impl<T: Scalar> Evaluation<T> {
    fn lambda_count(&self) -> usize {
        self.lambda.iter().filter(|&&l| l != T::zero()).count()
    }

    fn beta_count(&self) -> usize {
        self.beta.iter().filter(|&&b| b != T::zero()).count()
    }
}

fn heaviside<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

fn evaluate<T: Scalar>(
    ens: &ParticleEnsemble<T>,
    config: &CboConfig,
    f: &Objective<T>,
    drive: Drive<'_, T>,
) -> Result<Evaluation<T>, CboError> {
    let x = ens.positions.view();
    let t = ens.time().to_f64_lossy();
    let values: Vec<T> = x.rows().into_iter().map(|r| f.eval(r.as_slice().expect("row-major positions"))).collect();
    if let Some(particle) = values.iter().position(|v| !v.is_finite()) {
        return Err(CboError::NonFinite { step: ens.step, particle, t });
    }
    let v = consensus_from_values(x, &values, T::lit(config.alpha));
    let (lam, bet) = (T::lit(config.lambda), T::lit(config.beta));
    let n = ens.len();
    let (lambda, beta) = match config.variant {
        Variant::Standard => (vec![lam; n], vec![T::zero(); n]),
        Variant::ControlledUngated => (vec![lam; n], vec![bet; n]),
        Variant::Controlled => {
            let fv = f.eval(&v);
            let vfa = drive.vfa.expect("resolved value function");
            let a = drive.f_approx.expect("resolved projection");
            let lambda = values.iter().map(|&fx| lam * heaviside(fx - fv)).collect();
            let beta = x
                .rows()
                .into_iter()
                .zip(&values)
                .map(|(r, &fx)| {
                    bet * heaviside(fx - vfa.basis().combine_value(r.as_slice().expect("row-major positions"), a))
                })
                .collect();
            (lambda, beta)
        }
    };
    Ok(Evaluation { v, lambda, beta })
}

fn apply<T: Scalar>(
    ens: &mut ParticleEnsemble<T>,
    config: &CboConfig,
    drive: Drive<'_, T>,
    eval: &Evaluation<T>,
) -> Result<(), CboError> {
    let dt = ens.dt;
    let noise = T::lit(config.sigma) * dt.sqrt();
    let d = ens.dim();
    let mut xi = vec![T::zero(); d];
    for (i, mut row) in ens.positions.rows_mut().into_iter().enumerate() {
        for z in xi.iter_mut() {
            let s: f64 = ens.rng.sample(StandardNormal);
            *z = T::lit(s);
        }
        let u = match drive.vfa {
            Some(vfa) if eval.beta[i] != T::zero() => vfa.eval_feedback(row.as_slice().expect("row-major positions")),
            _ => vec![T::zero(); d],
        };
        for p in 0..d {
            let diff = row[p] - eval.v[p];
            row[p] += dt * (-eval.lambda[i] * diff + eval.beta[i] * u[p]) + noise * diff * xi[p];
        }
    }
    ens.step += 1;
    let t = ens.time().to_f64_lossy();
    for (particle, row) in ens.positions.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(CboError::NonFinite { step: ens.step, particle, t });
        }
    }
    Ok(())
}

/// Consensus point and gate activity of the state a step started from.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo<T> {
    pub v: Vec<T>,
    pub lambda_gate_count: usize,
    pub beta_gate_count: usize,
}

/// Advances the ensemble by one Euler–Maruyama step.
pub fn em_step<T: Scalar>(
    ensemble: &mut ParticleEnsemble<T>,
    config: &CboConfig,
    f: &Objective<T>,
    vfa: Option<&ValueFunctionApprox<T>>,
    f_approx: Option<&[T]>,
) -> Result<StepInfo<T>, CboError> {
    let drive = resolve(config, ensemble.dim(), vfa, f_approx)?;
    let eval = evaluate(ensemble, config, f, drive)?;
    apply(ensemble, config, drive, &eval)?;
    Ok(StepInfo { lambda_gate_count: eval.lambda_count(), beta_gate_count: eval.beta_count(), v: eval.v })
}

/// Diagnostics of the ensemble at time `t = step·dt`; gate counts refer to the gates evaluated
/// on this state, i.e. those driving the following step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub v: Vec<f64>,
    pub variance: f64,
    pub w2sq: Option<f64>,
    pub lambda_gate_count: usize,
    pub beta_gate_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub dim: usize,
    pub steps: Vec<StepRecord>,
    pub final_positions: Vec<Vec<f64>>,
    /// Row-major `N × d` positions per step, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<Vec<Vec<f64>>>,
}

impl RunRecord {
    pub fn final_record(&self) -> &StepRecord {
        self.steps.last().expect("run records hold the initial state")
    }

    pub fn final_w2sq(&self) -> Option<f64> {
        self.final_record().w2sq
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

/// Simulates `⌈T/dt⌉` steps and records every state including the initial one.
pub fn run<T: Scalar>(
    config: &CboConfig,
    f: &Objective<T>,
    vfa: Option<&ValueFunctionApprox<T>>,
    f_approx: Option<&[T]>,
) -> Result<RunRecord, CboError> {
    let d = f.dim();
    let drive = resolve(config, d, vfa, f_approx)?;
    let mut ens = ParticleEnsemble::initialize(config, d)?;
    let x_star: Option<Vec<T>> = f.minimizer().map(|m| m.point.clone());
    let steps = config.steps();
    let mut records = Vec::with_capacity(steps + 1);
    let mut particles = config.record_particles.then(Vec::new);
    for k in 0..=steps {
        let eval = evaluate(&ens, config, f, drive)?;
        let x = ens.positions.view();
        records.push(StepRecord {
            step: k,
            t: ens.time().to_f64_lossy(),
            v: to_f64(&eval.v),
            variance: ensemble_variance(x).to_f64_lossy(),
            w2sq: x_star.as_ref().map(|s| w2_to_dirac(x, s).to_f64_lossy()),
            lambda_gate_count: eval.lambda_count(),
            beta_gate_count: eval.beta_count(),
        });
        if let Some(p) = particles.as_mut() {
            p.push(x.iter().map(|v| v.to_f64_lossy()).collect());
        }
        if k < steps {
            apply(&mut ens, config, drive, &eval)?;
        }
    }
    Ok(RunRecord {
        seed: config.seed,
        dim: d,
        steps: records,
        final_positions: ens
            .positions
            .rows()
            .into_iter()
            .map(|r| to_f64(r.as_slice().expect("row-major positions")))
            .collect(),
        particles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

/// Statistics of the final `W₂²` over a batch. Failed runs count as unsuccessful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n_runs: usize,
    pub completed: usize,
    pub failed: usize,
    pub base_seed: u64,
    pub success_threshold: f64,
    pub mean_final_w2sq: Option<f64>,
    pub median_final_w2sq: Option<f64>,
    pub std_final_w2sq: Option<f64>,
    pub min_final_w2sq: Option<f64>,
    pub max_final_w2sq: Option<f64>,
    pub success_rate: Option<f64>,
    pub final_w2sq: Vec<Option<f64>>,
    pub failures: Vec<RunFailure>,
}

impl BatchSummary {
    pub fn from_runs(runs: &[Result<RunRecord, CboError>], base_seed: u64, success_threshold: f64) -> Self {
        let final_w2sq: Vec<Option<f64>> =
            runs.iter().map(|r| r.as_ref().ok().and_then(RunRecord::final_w2sq)).collect();
        let failures: Vec<RunFailure> = runs
            .iter()
            .enumerate()
            .filter_map(|(k, r)| {
                r.as_ref().err().map(|e| RunFailure { seed: base_seed.wrapping_add(k as u64), error: e.to_string() })
            })
            .collect();
        let mut vals: Vec<f64> = final_w2sq.iter().flatten().copied().collect();
        let known = !vals.is_empty();
        let n = vals.len() as f64;
        let mean = known.then(|| vals.iter().sum::<f64>() / n);
        let std = mean.map(|m| {
            if vals.len() > 1 {
                (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            }
        });
        vals.sort_by(f64::total_cmp);
        let median = known.then(|| {
            let k = vals.len();
            if k % 2 == 1 {
                vals[k / 2]
            } else {
                0.5 * (vals[k / 2 - 1] + vals[k / 2])
            }
        });
        let successes = vals.iter().filter(|&&v| v < success_threshold).count();
        Self {
            n_runs: runs.len(),
            completed: runs.len() - failures.len(),
            failed: failures.len(),
            base_seed,
            success_threshold,
            mean_final_w2sq: mean,
            median_final_w2sq: median,
            std_final_w2sq: std,
            min_final_w2sq: vals.first().copied(),
            max_final_w2sq: vals.last().copied(),
            success_rate: (known || runs.is_empty()).then(|| successes as f64 / runs.len().max(1) as f64),
            final_w2sq,
            failures,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub summary: BatchSummary,
    pub runs: Vec<Result<RunRecord, CboError>>,
}

/// Runs `n_runs` independent simulations with seeds `base_seed + k`, in parallel on the
/// current rayon pool; results are returned in seed order.
pub fn run_batch<T: Scalar>(
    config: &CboConfig,
    f: &Objective<T>,
    vfa: Option<&ValueFunctionApprox<T>>,
    f_approx: Option<&[T]>,
    n_runs: usize,
    base_seed: u64,
) -> Result<BatchResult, CboError> {
    if n_runs == 0 {
        return Err(CboError::InvalidConfig("n_runs must be at least 1".into()));
    }
    config.validate()?;
    resolve(config, f.dim(), vfa, f_approx)?;
    let runs: Vec<Result<RunRecord, CboError>> = (0..n_runs)
        .into_par_iter()
        .map(|k| {
            let cfg = CboConfig { seed: base_seed.wrapping_add(k as u64), ..config.clone() };
            run(&cfg, f, vfa, f_approx)
        })
        .collect();
    let summary = BatchSummary::from_runs(&runs, base_seed, config.success_threshold);
    Ok(BatchResult { summary, runs })
}
