use super::*;
use crate::basis::{BasisFamily, BoxDomain, Truncation};
use crate::objectives::{double_well_1d, quadratic_diag, rastrigin, Objective};
use crate::quadrature::GaussRule;
use approx::assert_relative_eq;

fn workspace(obj: &Objective<f64>, family: BasisFamily, trunc: Truncation, lo: f64, hi: f64) -> GalerkinWorkspace<f64> {
    let basis = MultiIndexBasis::new(family, BoxDomain::cube(obj.dim(), lo, hi).unwrap(), trunc).unwrap();
    GalerkinWorkspace::assemble(basis, obj, LoadMode::Separable).unwrap()
}

fn riccati_root(q: f64, eps: f64, mu: f64) -> f64 {
    eps * (-mu + (mu * mu + 8.0 * q / eps).sqrt()) / 4.0
}

fn single_stage(mu: f64, tol: f64) -> HjbConfig {
    HjbConfig { mu, tol, tol_mu: mu, ..HjbConfig::default() }
}

#[test]
fn riccati_root_desk_values() {
    assert_relative_eq!(riccati_root(0.5, 0.1, 0.1), 0.1556336460086847, epsilon = 1e-15);
    assert_relative_eq!(riccati_root(1.0, 0.1, 0.1), 0.22112077273813366, epsilon = 1e-15);
    assert_relative_eq!(riccati_root(2.0, 0.1, 0.1), 0.3137376479801227, epsilon = 1e-15);
}

#[test]
fn scalar_quadratic_matches_policy_iteration_oracle() {
    let (eps, mu, q) = (0.1, 0.1, 1.0);
    let f = quadratic_diag(&[q]).unwrap();
    let ws = workspace(&f, BasisFamily::Monomial, Truncation::TotalDegree(2), -2.0, 2.0);
    let cfg = single_stage(mu, 1e-9);
    let (vfa, report) = successive_approximation(&ws, &cfg, None).unwrap();
    let stage = &report.stages[0];
    assert!(stage.inner_iterations <= 30, "{}", stage.inner_iterations);

    // V = s x² is closed under the frozen-control GHJB, so each Galerkin iterate is exact
    let mut c = Array1::zeros(3);
    let mut s = 0.0f64;
    for _ in 0..stage.inner_iterations {
        let a = 2.0 * s / eps;
        s = (q + 0.5 * eps * a * a) / (mu + 2.0 * a);
        c = ghjb_step(&ws, c.as_slice().unwrap(), mu, eps).unwrap();
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
        assert_relative_eq!(c[2], s, max_relative = 1e-12);
    }
    assert_relative_eq!(vfa.coeffs()[2], riccati_root(q, eps, mu), epsilon = 1e-10);
    assert_eq!(stage.monotonicity_violations, 0);
}

#[test]
fn diagonal_quadratic_in_two_dimensions() {
    let q = [0.5, 2.0];
    let f = quadratic_diag(&q).unwrap();
    let ws = workspace(&f, BasisFamily::Monomial, Truncation::TotalDegree(4), -2.0, 2.0);
    let (vfa, _) = successive_approximation(&ws, &single_stage(0.1, 1e-10), None).unwrap();
    for (idx, &c) in vfa.basis().indices().iter().zip(vfa.coeffs()) {
        match idx.0.as_slice() {
            [2, 0] => assert!((c - riccati_root(q[0], 0.1, 0.1)).abs() < 1e-8),
            [0, 2] => assert!((c - riccati_root(q[1], 0.1, 0.1)).abs() < 1e-8),
            _ => assert!(c.abs() < 1e-8, "{idx}: {c}"),
        }
    }
    let u = vfa.eval_feedback(&[0.7, -1.1]);
    assert_relative_eq!(u[0], -2.0 / 0.1 * riccati_root(q[0], 0.1, 0.1) * 0.7, epsilon = 1e-6);
    assert_relative_eq!(u[1], -2.0 / 0.1 * riccati_root(q[1], 0.1, 0.1) * -1.1, epsilon = 1e-6);
}

#[test]
fn first_iterate_is_scaled_projection() {
    let f = rastrigin(2).unwrap();
    let ws = workspace(&f, BasisFamily::Legendre, Truncation::HyperbolicCross(2), -2.0, 2.0);
    let mu = 0.1;
    let c1 = ghjb_step(&ws, &[0.0; 5], mu, 0.1).unwrap();
    let proj = ws.project_objective().unwrap();
    for (a, b) in c1.iter().zip(proj.iter()) {
        assert!((a - b / mu).abs() < 1e-10 * b.abs().max(1.0), "{a} vs {}", b / mu);
    }
}

#[test]
fn zero_objective_is_fixed_immediately() {
    let zero = Objective::new("zero", 1, |_: &[f64]| 0.0);
    let basis =
        MultiIndexBasis::new(BasisFamily::Legendre, BoxDomain::cube(1, -1.0, 1.0).unwrap(), Truncation::TotalDegree(4))
            .unwrap();
    let ws = GalerkinWorkspace::with_load(basis, Array1::zeros(5)).unwrap();
    let (vfa, report) = successive_approximation(&ws, &single_stage(0.1, 1e-8), None).unwrap();
    assert_eq!(report.stages[0].inner_iterations, 1);
    assert!(vfa.coeffs().iter().all(|&c| c == 0.0));
    assert_eq!(vfa.eval_value(&[0.3]), 0.0);
    assert!(vfa.eval_feedback(&[0.3]).iter().all(|&u| u == 0.0));
    assert_eq!(zero.eval(&[1.0]), 0.0);
}

#[test]
fn converged_coefficients_are_a_fixed_point() {
    let f = double_well_1d();
    let ws = workspace(&f, BasisFamily::Legendre, Truncation::TotalDegree(6), -4.0, 4.0);
    let cfg = single_stage(0.1, 1e-10);
    let (vfa, report) = successive_approximation(&ws, &cfg, None).unwrap();
    let c = vfa.coeffs().as_slice().unwrap();
    let again = ghjb_step(&ws, c, 0.1, 0.1).unwrap();
    assert!(control_change(again.as_slice().unwrap(), c) <= cfg.tol);
    assert!(report.stages[0].residual_norm < 1e-6 * ws.load().iter().fold(0.0f64, |m, v| m.max(v.abs())));
}

#[test]
fn continuation_schedule() {
    let cfg = HjbConfig::default();
    assert_eq!(cfg.mu_schedule(), vec![0.1, 0.05, 0.025, 0.0125]);
    let one = HjbConfig { tol_mu: 0.5, ..cfg };
    assert_eq!(one.mu_schedule(), vec![0.1]);

    let f = rastrigin(2).unwrap();
    let ws = workspace(&f, BasisFamily::Legendre, Truncation::HyperbolicCross(2), -2.0, 2.0);
    let (vfa, report) = discount_continuation(&ws, &cfg).unwrap();
    assert_eq!(report.stages.len(), 4);
    assert_eq!(vfa.provenance().mu_schedule, cfg.mu_schedule());
    assert_eq!(vfa.provenance().inner_iterations.len(), 4);
    assert!(report.stages.iter().all(|s| s.inner_iterations <= cfg.max_inner_iters && s.control_change <= cfg.tol));

    // the last stage alone, warm-started from the second to last, reproduces the result
    let (prev, _) = solve_schedule(&ws, &cfg, vec![0.1, 0.05, 0.025], None).unwrap();
    let last = HjbConfig { mu: 0.0125, tol_mu: 0.0125, ..cfg };
    let (again, _) = successive_approximation(&ws, &last, Some(prev.coeffs().clone())).unwrap();
    assert_eq!(again.coeffs(), vfa.coeffs());
}

#[test]
fn residual_orthogonal_to_basis_by_independent_quadrature() {
    let f = rastrigin(2).unwrap();
    let ws = workspace(&f, BasisFamily::Legendre, Truncation::HyperbolicCross(2), -2.0, 2.0);
    let cfg = single_stage(0.1, 1e-8);
    let (vfa, _) = successive_approximation(&ws, &cfg, None).unwrap();
    let (mu, eps) = (cfg.mu, cfg.epsilon);
    let rule = GaussRule::<f64>::on_interval(96, -2.0, 2.0);
    let n = vfa.basis().len();
    let mut proj = vec![0.0; n];
    for (&x, &wx) in rule.nodes.iter().zip(&rule.weights) {
        for (&y, &wy) in rule.nodes.iter().zip(&rule.weights) {
            let p = [x, y];
            let (v, u) = vfa.eval_value_and_feedback(&p);
            // ∇V = −ε u, so ∇V·u + (ε/2)|u|² = −(ε/2)|u|²
            let u2: f64 = u.iter().map(|a| a * a).sum();
            let r = mu * v - f.eval(&p) + 0.5 * eps * u2;
            for (acc, phi) in proj.iter_mut().zip(vfa.basis().eval(&p)) {
                *acc += wx * wy * r * phi;
            }
        }
    }
    let scale = ws.load().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = proj.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= 10.0 * cfg.tol * scale, "worst {worst:.3e}, bound {:.3e}", 10.0 * cfg.tol * scale);
}

#[test]
fn feedback_matches_finite_differences_of_value() {
    let f = double_well_1d();
    let ws = workspace(&f, BasisFamily::Legendre, Truncation::TotalDegree(8), -4.0, 4.0);
    let (vfa, _) = discount_continuation(&ws, &HjbConfig::default()).unwrap();
    let h = 1e-5;
    for k in 0..100 {
        let x = -4.0 + 8.0 * (k as f64 + 0.5) / 100.0;
        let fd = (vfa.eval_value(&[x + h]) - vfa.eval_value(&[x - h])) / (2.0 * h);
        let u = vfa.eval_feedback(&[x])[0];
        let want = -fd / vfa.epsilon();
        assert!((u - want).abs() <= 1e-6 * want.abs().max(1.0), "x={x}: {u} vs {want}");
    }
}

#[test]
fn identical_inputs_give_identical_files() {
    let f = rastrigin(2).unwrap();
    let ws = workspace(&f, BasisFamily::Legendre, Truncation::HyperbolicCross(2), -2.0, 2.0);
    let (a, _) = discount_continuation(&ws, &HjbConfig::default()).unwrap();
    let ws2 = workspace(&f, BasisFamily::Legendre, Truncation::HyperbolicCross(2), -2.0, 2.0);
    let (b, _) = discount_continuation(&ws2, &HjbConfig::default()).unwrap();
    assert_eq!(to_json(&a), to_json(&b));
}

#[test]
fn config_validation() {
    let ok = HjbConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        HjbConfig { mu: 0.0, ..ok },
        HjbConfig { epsilon: 1.5, ..ok },
        HjbConfig { theta: 1.0, ..ok },
        HjbConfig { tol: 0.0, ..ok },
        HjbConfig { max_inner_iters: 0, ..ok },
        HjbConfig { tol_mu: -1.0, ..ok },
        HjbConfig { load_mode: LoadMode::MonteCarlo { samples: 0, seed: 1 }, ..ok },
    ] {
        assert!(matches!(bad.validate(), Err(HjbError::InvalidConfig(_))), "{bad:?}");
    }
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let f = double_well_1d();
    let ws = workspace(&f, BasisFamily::Legendre, Truncation::TotalDegree(8), -4.0, 4.0);
    let cfg = HjbConfig { max_inner_iters: 2, tol: 1e-14, ..single_stage(0.1, 1e-14) };
    match successive_approximation(&ws, &cfg, None) {
        Err(HjbError::NonConvergence { max_inner_iters: 2, last_change, .. }) => assert!(last_change > 1e-14),
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn wrong_initial_length_rejected() {
    let f = double_well_1d();
    let ws = workspace(&f, BasisFamily::Legendre, Truncation::TotalDegree(4), -4.0, 4.0);
    let r = successive_approximation(&ws, &HjbConfig::default(), Some(Array1::zeros(3)));
    assert!(matches!(r, Err(HjbError::DimensionMismatch { expected: 5, got: 3 })));
}

#[test]
fn single_precision_solve() {
    let f = quadratic_diag::<f32>(&[1.0]).unwrap();
    let basis = MultiIndexBasis::new(
        BasisFamily::Monomial,
        BoxDomain::cube(1, -2.0f32, 2.0).unwrap(),
        Truncation::TotalDegree(2),
    )
    .unwrap();
    let ws = GalerkinWorkspace::assemble(basis, &f, LoadMode::Separable).unwrap();
    let cfg = HjbConfig { tol: 1e-5, ..single_stage(0.1, 1e-5) };
    let (vfa, _) = successive_approximation(&ws, &cfg, None).unwrap();
    assert!((vfa.coeffs()[2] as f64 - riccati_root(1.0, 0.1, 0.1)).abs() < 1e-4);
}
