use std::sync::Arc;

use lcpg::drivers::{lcpg_run, Mode, RunConfig, StochasticParams, Subsolver, SvrgParams};
use lcpg::problem::{Composite, ConstrainedProblem, ConvexityMode, LeastSquares, Quadratic, SmoothOracle, SquaredDistance};
use lcpg::prox::ProxTerm;
use lcpg::{Error, Vector};
use nalgebra::DMatrix;

/// Least squares pulled towards (3, 3, 3) inside two balls.
fn ls_problem() -> ConstrainedProblem {
    let a = DMatrix::from_fn(40, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
    let y = &a * Vector::from_element(3, 3.0);
    let ls = LeastSquares { a, y };
    let l0 = (0..ls.n_components()).map(|i| ls.a.row(i).norm_squared()).fold(0.0, f64::max);
    let obj = Composite::new(Arc::new(ls), ProxTerm::Zero, l0);
    let ball = |c: f64| Composite::new(Arc::new(SquaredDistance { scale: 1.0, a: Vector::from_element(3, c), c: 0.0 }), ProxTerm::Zero, 1.0);
    ConstrainedProblem::new(obj, vec![ball(0.0), ball(0.5)], Vector::from_column_slice(&[2.0, 2.0]), Vector::from_column_slice(&[1.0, 1.5]), Vector::zeros(3))
        .unwrap()
}

fn final_violation(p: &ConstrainedProblem, x: &Vector) -> f64 {
    p.constraints.iter().enumerate().map(|(i, c)| c.value(x) - p.eta[i]).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn every_mode_ends_feasible_without_invariant_violations() {
    let p = ls_problem();
    let modes = [
        Mode::Exact,
        Mode::Inexact { fraction: 0.5 },
        Mode::Stochastic(StochasticParams { batch: Some(16), gamma: None, beta: None }),
        Mode::Svrg(SvrgParams { epoch: None, batch: None, gamma: None, beta: None }),
        Mode::Convex,
    ];
    for mode in modes {
        let r = lcpg_run(&p, &RunConfig::new(mode, 60).with_seed(4)).unwrap();
        assert!(r.violations.is_empty(), "{mode:?}: {:?}", r.violations);
        assert!(final_violation(&p, r.final_x()) <= 1e-9, "{mode:?}");
        assert!(r.k_hat < 60);
        assert!(p.objective.value(r.final_x()) < p.objective.value(&p.x0));
    }
}

#[test]
fn ipm_and_first_order_trajectories_agree() {
    let p = ls_problem();
    let ipm = lcpg_run(&p, &RunConfig::new(Mode::Exact, 25).with_subsolver(Subsolver::Ipm)).unwrap();
    let pd = lcpg_run(&p, &RunConfig::new(Mode::Exact, 25).with_subsolver(Subsolver::Firstorder)).unwrap();
    for (a, b) in ipm.iterates.iter().zip(&pd.iterates) {
        assert!((a - b).norm() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn ipm_rejects_nonzero_chi() {
    let obj = Composite::new(Arc::new(SquaredDistance { scale: 1.0, a: Vector::from_element(2, 2.0), c: 0.0 }), ProxTerm::l1(0.1), 1.0);
    let con = Composite::new(Arc::new(SquaredDistance { scale: 1.0, a: Vector::zeros(2), c: 0.0 }), ProxTerm::Zero, 1.0);
    let p = ConstrainedProblem::new(obj, vec![con], Vector::from_element(1, 1.0), Vector::from_element(1, 0.5), Vector::zeros(2)).unwrap();
    let err = lcpg_run(&p, &RunConfig::new(Mode::Exact, 3).with_subsolver(Subsolver::Ipm)).unwrap_err();
    assert!(matches!(err, Error::Subsolver { k: 0, .. }), "{err}");
    // Auto falls back to the first-order solver.
    assert!(lcpg_run(&p, &RunConfig::new(Mode::Exact, 3)).unwrap().violations.is_empty());
}

#[test]
fn strongly_convex_mode_needs_a_modulus() {
    let q = Quadratic { q: DMatrix::identity(2, 2), b: Vector::zeros(2), c: 0.0 };
    let obj = Composite::new(Arc::new(q), ProxTerm::Zero, 2.0);
    let p = ConstrainedProblem::new(obj, vec![], Vector::zeros(0), Vector::zeros(0), Vector::from_element(2, 1.0)).unwrap();
    assert!(matches!(lcpg_run(&p, &RunConfig::new(Mode::StronglyConvex { a: 0.5 }, 5)), Err(Error::Config(_))));
    let p = p.with_convexity(ConvexityMode::StronglyConvex, 1.0);
    let r = lcpg_run(&p, &RunConfig::new(Mode::StronglyConvex { a: 0.5 }, 5)).unwrap();
    // With γ = 2 on an identity Hessian every step halves x.
    assert!((p.objective.value(r.final_x()) - 0.25f64.powi(5)).abs() < 1e-15);
}

#[test]
fn run_config_json_round_trip_and_strictness() {
    let cfg = RunConfig::new(Mode::Svrg(SvrgParams { epoch: Some(5), batch: Some(20), gamma: None, beta: None }), 50).with_seed(9);
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    let minimal: RunConfig = serde_json::from_str(r#"{"mode": "exact", "iterations": 10}"#).unwrap();
    assert_eq!(minimal, RunConfig::new(Mode::Exact, 10));
    assert!(serde_json::from_str::<RunConfig>(r#"{"mode": "exact", "iterations": 10, "itrations": 3}"#).is_err());
    let pd: RunConfig = serde_json::from_str(r#"{"mode": "exact", "iterations": 1, "subsolver": "pd"}"#).unwrap();
    assert_eq!(pd.subsolver, Subsolver::Firstorder);
}

#[test]
fn traces_are_reproducible_and_timing_is_opt_in() {
    let p = ls_problem();
    let cfg = RunConfig::new(Mode::Svrg(SvrgParams { epoch: None, batch: None, gamma: None, beta: None }), 30).with_seed(11);
    let a = lcpg_run(&p, &cfg).unwrap();
    let b = lcpg_run(&p, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert!(a.trace.iter().all(|t| t.time_ms.is_none()));
    let timed = lcpg_run(&p, &RunConfig { timing: true, ..cfg }).unwrap();
    assert!(timed.trace.iter().all(|t| t.time_ms.is_some()));
}
