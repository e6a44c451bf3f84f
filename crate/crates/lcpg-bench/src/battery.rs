//! Invariant battery run by `lcpg check`. Every check compares library output
//! against an oracle computed here (closed forms, exact rationals, a second solver,
//! Monte Carlo, or re-evaluation of traces).

use std::sync::Arc;

use lcpg::drivers::{
    convex_gap_trace, geometric_level, lcpg_run, lcspg_gradient, lcsvrg_gradient, observed_type1_bound, polynomial_level,
    schedule_increment, schedule_levels, stream, LevelSchedule, Mode, RunConfig, RunResult, Subsolver, SvrgParams, SvrgState,
};
use lcpg::firstorder::{pd_solve, LinearizedConstraint, ProxSubproblem};
use lcpg::ipm::{solve_path_following, Branch, DiagConstraint, DiagQcqp, IpmOptions, NewtonSystem};
use lcpg::problem::{
    kkt_residual_exact, Affine, Composite, ConstrainedProblem, ConvexityMode, NegScad, Quadratic, SmoothOracle, SquaredDistance,
};
use lcpg::prox::{dist_to_interval, scad_grad, subdiff_interval, ProxTerm, ScadParams};
use lcpg::smoothing::{FeasibleSet, MaxStructure, Penalty, SmoothedComposite};
use lcpg::{Result, Vector};
use nalgebra::DMatrix;
use num_rational::Ratio;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::synthetic_logistic;
use crate::experiment::{matched_target, passes_to_target, scad_problem};
use crate::logistic::{scad_constraint, Logistic};
use crate::qcqp::{gen_qcqp, Convexity, QcqpRecipe};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// Reduced instance counts and replications.
    Quick,
    /// The sizes of the acceptance suite.
    Full,
}

impl Scale {
    fn pick<T>(self, quick: T, full: T) -> T {
        match self {
            Scale::Quick => quick,
            Scale::Full => full,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub id: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} [{}] {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.name, self.detail)
    }
}

type Check = fn(Scale) -> Result<(bool, String)>;

pub const CHECKS: [(&str, &str, Check); 11] = [
    ("1", "descent and feasibility on random QCQPs", descent_feasibility),
    ("2", "type-I bound halves when K doubles", rate_halving),
    ("3", "IPM agrees with the first-order solver", ipm_correctness),
    ("4", "first-order certificates hold against IPM references", certificate_soundness),
    ("5", "stochastic gradient estimators", stochastic_estimators),
    ("6", "smoothing sandwich, Lipschitz and ν-subgradients", smoothing_suite),
    ("7", "SCAD example values", anchored_values),
    ("8", "strongly convex geometric rate", strongly_convex_rate),
    ("9", "level schedules", level_schedules),
    ("10", "SCAD logistic benchmark", scad_benchmark),
    ("gen", "generator determinism", generator_determinism),
];

pub fn run_check(id: &str, scale: Scale) -> Option<Outcome> {
    let (id, name, f) = CHECKS.iter().find(|c| c.0 == id)?;
    Some(match f(scale) {
        Ok((pass, detail)) => Outcome { id, name, pass, detail },
        Err(e) => Outcome { id, name, pass: false, detail: format!("error: {e}") },
    })
}

pub fn run_battery(scale: Scale) -> Vec<Outcome> {
    CHECKS.iter().filter_map(|c| run_check(c.0, scale)).collect()
}

const TOL: f64 = 1e-9;

/// Re-evaluates an exact-mode run: `ψ(xᵏ⁺¹) ≤ ηᵏ`, `ηᵏ < ηᵏ⁺¹ ≤ η` and
/// `ψ₀(xᵏ⁺¹) ≤ ψ₀(xᵏ) − (L₀/2)‖xᵏ⁺¹ − xᵏ‖²`. Returns the number of failures.
pub fn recheck_exact_run(p: &ConstrainedProblem, r: &RunResult) -> usize {
    let mut bad = 0;
    let l0 = p.l0();
    for (k, t) in r.trace.iter().enumerate() {
        let (x, xn) = (&r.iterates[k], &r.iterates[k + 1]);
        for (i, c) in p.constraints.iter().enumerate() {
            if c.value(xn) > t.eta[i] + TOL {
                bad += 1;
            }
            let next = r.trace.get(k + 1).map_or(p.eta[i], |u| u.eta[i]);
            if !(t.eta[i] < next) || next > p.eta[i] {
                bad += 1;
            }
        }
        let step = (xn - x).norm_squared();
        if p.objective.value(xn) > p.objective.value(x) - 0.5 * l0 * step + TOL {
            bad += 1;
        }
    }
    bad
}

fn descent_feasibility(scale: Scale) -> Result<(bool, String)> {
    let seeds = scale.pick(4, 20);
    let mut runs = 0;
    let mut driver = 0;
    let mut recheck = 0;
    for conv in [Convexity::Convex, Convexity::Dc] {
        for seed in 0..seeds {
            let p = gen_qcqp(&QcqpRecipe::new(50, 5, conv, seed))?.to_problem()?;
            let r = lcpg_run(&p, &RunConfig::new(Mode::Exact, 300).with_seed(seed))?;
            driver += r.violations.len();
            recheck += recheck_exact_run(&p, &r);
            runs += 1;
        }
    }
    Ok((driver == 0 && recheck == 0, format!("{runs} runs of 300 iterations, {driver} driver violations, {recheck} recheck failures")))
}

fn rate_halving(scale: Scale) -> Result<(bool, String)> {
    let seeds = scale.pick(3, 10);
    let (mut s200, mut s400) = (0.0, 0.0);
    for seed in 0..seeds {
        let p = gen_qcqp(&QcqpRecipe::new(50, 5, Convexity::Convex, seed))?.to_problem()?;
        for (k, acc) in [(200, &mut s200), (400, &mut s400)] {
            let r = lcpg_run(&p, &RunConfig::new(Mode::Exact, k).with_seed(seed))?;
            *acc += observed_type1_bound(&p, &r) / seeds as f64;
        }
    }
    let ratio = s400 / s200;
    Ok(((0.35..=0.75).contains(&ratio), format!("mean bound {s200:.4e} at K=200, {s400:.4e} at K=400, ratio {ratio:.4}")))
}

/// Random diagonal QCQP with `x = 0` strictly feasible and the objective centre outside
/// most constraint balls.
pub fn random_diag_qcqp(seed: u64, d: usize, m: usize) -> Result<DiagQcqp> {
    let mut rng = stream(seed, 10);
    let mut normal = |s: f64| Vector::from_fn(d, |_, _| s * rng.sample::<f64, _>(StandardNormal));
    let a0 = normal(3.0);
    let centres: Vec<Vector> = (0..m).map(|_| normal(1.0)).collect();
    let mut rng = stream(seed, 11);
    let l0 = rng.random_range(1.0..10.0);
    let cons = centres
        .into_iter()
        .map(|a| {
            let l = rng.random_range(0.5..5.0);
            let b = 0.5 * l * a.norm_squared() + rng.random_range(1.0..5.0);
            DiagConstraint { l, a, b }
        })
        .collect();
    DiagQcqp::new(l0, a0, cons)
}

/// The same QCQP as a proximal subproblem anchored at 0.
pub fn diag_as_subproblem(q: &DiagQcqp) -> ProxSubproblem {
    ProxSubproblem {
        anchor: Vector::zeros(q.dim()),
        obj_value: 0.5 * q.l0 * q.a0.norm_squared(),
        obj_grad: -&q.a0 * q.l0,
        gamma: q.l0,
        chi0: ProxTerm::Zero,
        constraints: q
            .constraints
            .iter()
            .map(|c| LinearizedConstraint {
                value: 0.5 * c.l * c.a.norm_squared(),
                grad: -&c.a * c.l,
                curvature: c.l,
                chi: ProxTerm::Zero,
                level: c.b,
            })
            .collect(),
    }
}

fn ipm_from_origin(q: &DiagQcqp, eps: f64) -> Result<lcpg::ipm::IpmSolution> {
    let x0 = Vector::zeros(q.dim());
    let slack = -q.constraint_values(&x0).max();
    solve_path_following(q, &x0, 0.5 * slack, eps, &IpmOptions::default())
}

fn ipm_correctness(scale: Scale) -> Result<(bool, String)> {
    let n = scale.pick(10, 50);
    let (d, m, eps) = (20, 5, 1e-8f64);
    let step_budget = 40.0 * ((m + 2) as f64).sqrt() * (1.0 / eps).log10();
    let (mut worst_dx, mut worst_solve, mut worst_steps) = (0.0f64, 0.0f64, 0usize);
    let mut uncertified = 0;
    let mut rng = stream(0, 12);
    for seed in 0..n {
        let q = random_diag_qcqp(seed, d, m)?;
        let ipm = ipm_from_origin(&q, eps)?;
        let pd = pd_solve(&diag_as_subproblem(&q), 1e6, 1e-6, 200_000)?;
        uncertified += usize::from(!pd.certified);
        worst_dx = worst_dx.max((&pd.x - &ipm.x).norm());
        worst_steps = worst_steps.max(ipm.stats.newton_steps());

        // Newton systems NNᵀ + Γ of the lifted barrier's shape, Γ spanning several decades.
        let nmat = DMatrix::from_fn(d + 1, m + 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gamma = Vector::from_fn(d + 1, |_, _| 10f64.powf(rng.random_range(-4.0..2.0)));
        let rhs = Vector::from_fn(d + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let smw = NewtonSystem::factor(nmat.clone(), gamma.clone(), Branch::Smw)?.solve(&rhs);
        let dense = NewtonSystem::factor(nmat, gamma, Branch::Dense)?.solve(&rhs);
        worst_solve = worst_solve.max((&smw - &dense).norm() / dense.norm());
    }
    let pass = uncertified == 0 && worst_dx <= 1e-5 && worst_solve <= 1e-10 && (worst_steps as f64) <= step_budget;
    Ok((
        pass,
        format!(
            "{n} instances: max ‖x_ipm − x_pd‖ {worst_dx:.3e}, max SMW/dense relative gap {worst_solve:.3e}, \
             max Newton steps {worst_steps} of {step_budget:.0}, uncertified {uncertified}"
        ),
    ))
}

fn certificate_soundness(scale: Scale) -> Result<(bool, String)> {
    let n = scale.pick(10, 50);
    let slack = 1e-8;
    let mut failures = 0;
    let mut worst = 0.0f64;
    for j in 0..n {
        let q = random_diag_qcqp(100 + j, 20, 5)?;
        let reference = ipm_from_origin(&q, 1e-10)?;
        let sub = diag_as_subproblem(&q);
        let eps = if j % 2 == 0 { 1e-4 } else { 1e-6 };
        let pd = pd_solve(&sub, 1e6, eps, 200_000)?;
        let (xs, ls) = (&reference.x, &reference.lambda);
        let gaps = [
            sub.objective(&pd.x) - sub.objective(xs),
            lcpg::linalg::pos(&sub.constraints_at(&pd.x)).norm(),
            sub.lagrangian(&pd.x, ls) - sub.lagrangian(xs, ls),
        ];
        let excess = gaps.iter().map(|g| g - eps).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(excess);
        if !pd.certified || excess > slack {
            failures += 1;
        }
    }
    Ok((failures == 0, format!("{n} solutions, {failures} failures, worst excess over ε {worst:.3e}")))
}

struct Moments {
    n: usize,
    mean: Vector,
    m2: Vector,
}

impl Moments {
    fn new(d: usize) -> Self {
        Moments { n: 0, mean: Vector::zeros(d), m2: Vector::zeros(d) }
    }

    fn push(&mut self, x: &Vector) {
        self.n += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.n as f64;
        self.m2 += delta.component_mul(&(x - &self.mean));
    }

    /// Standard error of the mean, per coordinate.
    fn sem(&self) -> Vector {
        (&self.m2 / ((self.n - 1) * self.n) as f64).map(f64::sqrt)
    }
}

fn within_three_sigma(m: &Moments, truth: &Vector) -> bool {
    (&m.mean - truth).iter().zip(m.sem().iter()).all(|(e, s)| e.abs() <= 3.0 * s)
}

fn stochastic_estimators(scale: Scale) -> Result<(bool, String)> {
    let reps = scale.pick(2_000, 10_000);
    let f = Logistic::new(Arc::new(synthetic_logistic(50, 2, 7)));
    let l0 = f.lipschitz();
    let x = Vector::from_column_slice(&[0.4, -0.3]);
    let truth = f.grad(&x);

    let mut rng = stream(0, 13);
    let mut mb = Moments::new(2);
    for _ in 0..reps {
        mb.push(&lcspg_gradient(&f, &x, 5, &mut rng));
    }
    let minibatch_ok = within_three_sigma(&mb, &truth);

    let (epoch, b) = (4, 3);
    let start = SvrgState { g_prev: Vector::from_column_slice(&[9.0, 9.0]), x_prev: Vector::zeros(2) };
    let (g_epoch, full) = lcsvrg_gradient(&f, Some(&start), &x, epoch, epoch, b, &mut rng);
    let (g_first, full0) = lcsvrg_gradient(&f, None, &x, 0, epoch, b, &mut rng);
    let epoch_err = (&g_epoch - &truth).amax().max((&g_first - &truth).amax());
    let epoch_ok = full && full0 && epoch_err == 0.0;

    // One epoch through fixed points x⁰ … x³.
    let dir = Vector::from_column_slice(&[0.3, 0.5]);
    let pts: Vec<Vector> = (0..4).map(|i| &x + &dir * (i as f64).powf(1.3)).collect();
    let path: f64 = pts.windows(2).map(|w| (&w[1] - &w[0]).norm_squared()).sum();
    let bound = l0 * l0 / b as f64 * path;
    let last_truth = f.grad(&pts[3]);
    let mut zeta2 = Moments::new(1);
    let mut unbiased = Moments::new(2);
    for _ in 0..reps {
        let mut state = SvrgState { g_prev: f.grad(&pts[0]), x_prev: pts[0].clone() };
        for (k, p) in pts.iter().enumerate().skip(1) {
            let (g, _) = lcsvrg_gradient(&f, Some(&state), p, k, epoch, b, &mut rng);
            state = SvrgState { g_prev: g, x_prev: p.clone() };
        }
        zeta2.push(&Vector::from_element(1, (&state.g_prev - &last_truth).norm_squared()));
        unbiased.push(&state.g_prev);
    }
    let var_ok = zeta2.mean[0] - 3.0 * zeta2.sem()[0] <= bound && within_three_sigma(&unbiased, &last_truth);
    Ok((
        minibatch_ok && epoch_ok && var_ok,
        format!(
            "{reps} replications: minibatch mean error {:.3e} (3σ {:.3e}), epoch-start error {epoch_err:e}, \
             E‖ζ‖² {:.4e} vs bound {bound:.4e}",
            (&mb.mean - &truth).amax(),
            3.0 * mb.sem().max(),
            zeta2.mean[0]
        ),
    ))
}

fn huber_sum(v: &Vector, beta: f64) -> f64 {
    v.iter().map(|&t| if t.abs() <= beta { t * t / (2.0 * beta) } else { t.abs() - beta / 2.0 }).sum()
}

fn l1_box(a: DMatrix<f64>) -> Result<MaxStructure> {
    let k = a.nrows();
    MaxStructure::new(a, FeasibleSet::Box { lo: vec![-1.0; k], hi: vec![1.0; k] }, Penalty::Zero)
}

fn smoothing_suite(scale: Scale) -> Result<(bool, String)> {
    let points = scale.pick(200, 1000);
    let mut rng = stream(0, 14);
    let mut normal = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| s * rng.sample::<f64, _>(StandardNormal));
    let (mut sandwich_bad, mut nu_bad) = (0, 0);
    let mut worst_lip: f64 = 0.0;
    let mut exceeds_min = false;
    for d in [1usize, 5, 20] {
        let a = normal(d, d, 1.0);
        for beta in [0.1, 1.0] {
            let sc = SmoothedComposite::new(l1_box(a.clone())?, beta, None, 0.0)?;
            let half_d2 = beta * d as f64 / 2.0;
            for j in 0..points {
                let x = Vector::from_column_slice(normal(d, 1, if j % 2 == 0 { beta } else { 3.0 }).as_slice());
                let ax = &a * &x;
                let g = ax.abs().sum();
                let (gb, v) = sc.smoothed_eval(&x);
                let gap = g - gb;
                if gap < -1e-12 || gap > half_d2 + 1e-12 || (gb - huber_sum(&ax, beta)).abs() > 1e-12 * (1.0 + g) {
                    sandwich_bad += 1;
                }
                if j < 50 {
                    // ν-subgradient on a grid of coordinate moves around x.
                    for coord in 0..d {
                        for t in [-2.0, -1.0, -0.25, 0.25, 1.0, 2.0] {
                            let mut z = x.clone();
                            z[coord] += t;
                            let gz = (&a * &z).abs().sum();
                            if gz < g + v.dot(&(&z - &x)) - half_d2 - 1e-12 * (1.0 + g.abs() + gz.abs()) {
                                nu_bad += 1;
                            }
                        }
                    }
                }
            }
            for l_h in [0.5 * sc.l_g(), 2.0 * sc.l_g()] {
                let h: Arc<dyn SmoothOracle> = Arc::new(SquaredDistance { scale: l_h, a: Vector::zeros(d), c: 0.0 });
                let f = SmoothedComposite::new(l1_box(a.clone())?, beta, Some(h), l_h)?;
                let bound = sc.l_g().max(l_h);
                let mut best: f64 = 0.0;
                for j in 0..points {
                    let s = if j % 2 == 0 { beta / sc.l_g().sqrt().max(1e-12) } else { 2.0 };
                    let x = Vector::from_column_slice(normal(d, 1, s).as_slice());
                    let y = &x + Vector::from_column_slice(normal(d, 1, s * 0.1).as_slice());
                    let ratio = (f.smoothed_eval(&x).1 - f.smoothed_eval(&y).1).norm() / (&x - &y).norm();
                    best = best.max(ratio);
                }
                worst_lip = worst_lip.max(best / bound);
                exceeds_min |= best > sc.l_g().min(l_h) * (1.0 + 1e-6);
            }
        }
    }
    let pass = sandwich_bad == 0 && nu_bad == 0 && worst_lip <= 1.0 + 1e-6 && exceeds_min;
    Ok((
        pass,
        format!(
            "sandwich failures {sandwich_bad}, ν-subgradient failures {nu_bad}, max gradient ratio / max(L_g, L_h) {worst_lip:.6}, \
             ratio above min(L_g, L_h) observed: {exceeds_min}"
        ),
    ))
}

fn anchored_values(_: Scale) -> Result<(bool, String)> {
    let params = ScadParams::new(1.0, 5.0)?;
    let con = Composite::new(Arc::new(NegScad { params, dim: 2 }), ProxTerm::l1(1.0), params.smoothness());
    let psi = |x: &[f64]| con.value(&Vector::from_column_slice(x));
    let (v5, v3) = (psi(&[5.0, 0.0]), psi(&[3.0, 0.0]));
    let values_ok = (v5 - 3.0).abs() <= 1e-12 && (v3 - 2.5).abs() <= 1e-12;

    let x = Vector::from_column_slice(&[5.0, 0.0]);
    let interval = |j: usize| -> Result<(f64, f64)> {
        let (lo, hi) = subdiff_interval(&con.prox, &x, j)?;
        let g = -scad_grad(x[j], params);
        Ok((lo + g, hi + g))
    };
    let (i0, i1) = (interval(0)?, interval(1)?);
    let subdiff_ok = i0.0.abs() <= 1e-12 && i0.1.abs() <= 1e-12 && (i1.0 + 1.0).abs() <= 1e-12 && (i1.1 - 1.0).abs() <= 1e-12;

    let obj = Composite::new(Arc::new(Affine { g: Vector::from_column_slice(&[-1.0, 0.0]), c: 7.0 }), ProxTerm::Zero, 1.0);
    let p = ConstrainedProblem::new(obj, vec![con.clone()], Vector::from_element(1, 3.0), Vector::from_element(1, 1.0), Vector::zeros(2))?;
    let mut rng = stream(0, 15);
    let mut min_res = f64::INFINITY;
    for j in 0..200 {
        let lam = if j == 0 { 0.0 } else if j == 1 { 100.0 } else { rng.random_range(0.0..=100.0) };
        min_res = min_res.min(kkt_residual_exact(&p, &x, &Vector::from_element(1, lam))?);
    }
    // Independent form: dist(0, (−1, 0) + λ·({0} × [−1, 1])) = 1.
    let kkt_ok = min_res >= 1.0 - 1e-12 && dist_to_interval(0.0, -1.0, 1.0) == 0.0;
    Ok((
        values_ok && subdiff_ok && kkt_ok,
        format!(
            "ψ₁(5,0) = {v5}, ψ₁(3,0) = {v3}, ∂ψ₁(5,0) = [{}, {}] × [{}, {}], min KKT residual over λ ∈ [0,100] {min_res}",
            i0.0, i0.1, i1.0, i1.1
        ),
    ))
}

/// Strongly convex quadratic with eigenvalues spread over `[μ₀, L₀]` and two ball constraints.
pub fn strongly_convex_instance(d: usize, mu: f64, l0: f64, l1: f64, seed: u64) -> Result<ConstrainedProblem> {
    let mut rng = stream(seed, 16);
    let u = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5).qr().q();
    let spectrum = Vector::from_fn(d, |j, _| mu + (l0 - mu) * j as f64 / (d - 1).max(1) as f64);
    let q0 = &u * DMatrix::from_diagonal(&spectrum) * u.transpose();
    let q0 = (&q0 + q0.transpose()) * 0.5;
    let centre = Vector::from_fn(d, |_, _| 1.0 + rng.random::<f64>());
    let b = -(&q0 * &centre);
    let obj = Composite::new(Arc::new(Quadratic { q: q0, b, c: 0.0 }), ProxTerm::Zero, l0);
    let a2 = Vector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
    let ball = |a: Vector| Composite::new(Arc::new(SquaredDistance { scale: l1, a, c: 0.0 }), ProxTerm::Zero, l1);
    let r2 = 2.0 * l1;
    ConstrainedProblem::new(
        obj,
        vec![ball(Vector::zeros(d)), ball(a2)],
        Vector::from_column_slice(&[r2, 2.0 * r2]),
        Vector::from_column_slice(&[r2 / 2.0, r2]),
        Vector::zeros(d),
    )
    .map(|p| p.with_convexity(ConvexityMode::StronglyConvex, mu))
}

fn r_squared(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let xs: Vec<f64> = (0..ys.len()).map(|k| k as f64).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn strongly_convex_rate(scale: Scale) -> Result<(bool, String)> {
    let seeds = scale.pick(1, 3);
    let (mu, l0, l1, a) = (0.1, 2.0, 1.0, 0.5);
    let mut pass = true;
    let mut lines = Vec::new();
    for seed in 0..seeds {
        let p = strongly_convex_instance(10, mu, l0, l1, seed)?;
        let long = lcpg_run(&p, &RunConfig::new(Mode::StronglyConvex { a }, 2000))?;
        let xr = long.final_x();
        let lam = Vector::from_column_slice(&long.trace.last().map(|t| t.lambda.clone()).unwrap_or_default());
        let reference_kkt = kkt_residual_exact(&p, xr, &lam)?;
        let reference = p.objective.value(xr);
        let (run, rep) = convex_gap_trace(&p, &RunConfig::new(Mode::StronglyConvex { a }, 200), Some(reference), 1e-10)?;
        let logs: Vec<f64> = rep.gaps.iter().take(rep.fit_len).map(|g| g.ln()).collect();
        let r2 = r_squared(&logs);
        let ok = run.violations.is_empty()
            && reference_kkt <= 1e-8
            && rep.fit_len >= 10
            && r2 >= 0.9
            && rep.fitted_slope <= 0.5 * rep.predicted_slope;
        pass &= ok;
        lines.push(format!(
            "seed {seed}: fitted slope {:.4} vs −μ₀/(L₀+B̂‖L‖) = {:.4} (ratio {:.2}, B̂ {:.3}), R² {r2:.4} over {} iterates, reference KKT {reference_kkt:.1e}",
            rep.fitted_slope,
            rep.predicted_slope,
            rep.fitted_slope / rep.predicted_slope,
            rep.b_hat,
            rep.fit_len
        ));
    }
    Ok((pass, lines.join("; ")))
}

/// Neumaier-compensated running sum.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for t in terms {
        let u = s + t;
        c += if s.abs() >= t.abs() { (s - u) + t } else { (t - u) + s };
        s = u;
    }
    s + c
}

fn level_schedules(_: Scale) -> Result<(bool, String)> {
    let eta0 = Vector::from_column_slice(&[-1.0, 0.3, -7.5]);
    let eta = Vector::from_column_slice(&[0.0, 2.5, -2.0]);
    let mut worst = 0.0f64;
    for s in [LevelSchedule::Polynomial, LevelSchedule::Geometric { rho: 0.9 }, LevelSchedule::Geometric { rho: 1.0 / 3.0 }] {
        for i in 0..eta.len() {
            let mut k = 0u64;
            while k <= 10_000 {
                let acc = eta0[i] + compensated_sum((0..k).map(|j| schedule_increment(&s, &eta0, &eta, j)[i]));
                worst = worst.max((schedule_levels(&s, &eta0, &eta, k)[i] - acc).abs());
                k = if k < 100 { k + 1 } else { k * 2 };
            }
            let last = eta0[i] + compensated_sum((0..10_000).map(|j| schedule_increment(&s, &eta0, &eta, j)[i]));
            worst = worst.max((schedule_levels(&s, &eta0, &eta, 10_000)[i] - last).abs());
        }
    }

    // Exact rationals: η⁰ = −3/2, η = 5/7, ρ = 1/3.
    type Q = Ratio<i128>;
    let (e0, e, rho) = (Q::new(-3, 2), Q::new(5, 7), Q::new(1, 3));
    let mut exact = true;
    let mut acc = e0;
    let mut rho_k = Q::from_integer(1);
    for k in 0..60u64 {
        let level = geometric_level(e0, e, rho, k);
        exact &= e - level == rho_k * (e - e0) && level == acc;
        acc += rho_k * (Q::from_integer(1) - rho) * (e - e0);
        rho_k *= rho;
    }
    let mut acc = e0;
    for k in 0..2_000u64 {
        exact &= polynomial_level(e0, e, k) == acc;
        acc += (e - e0) / Q::from_integer(((k + 1) * (k + 2)) as i128);
    }
    Ok((worst <= 1e-12 && exact, format!("max |closed form − accumulated| {worst:.3e} up to k = 10⁴, exact rational identities hold: {exact}")))
}

fn scad_benchmark(scale: Scale) -> Result<(bool, String)> {
    let seeds = scale.pick(2, 5);
    let (n, d, k) = (200, 50, 400);
    let frac = 0.01;
    let mut wins = 0;
    let mut infeasible = 0;
    let mut lines = Vec::new();
    for seed in 0..seeds {
        let p = scad_problem(Arc::new(synthetic_logistic(n, d, seed)), 2.0, 5.0, 0.4)?;
        let epoch = (n as f64).sqrt().ceil() as usize;
        let modes = [
            Mode::Exact,
            Mode::Stochastic(lcpg::drivers::StochasticParams { batch: None, gamma: None, beta: None }),
            Mode::Svrg(SvrgParams { epoch: Some(epoch), batch: Some(4 * epoch), gamma: None, beta: None }),
        ];
        let mut runs = Vec::new();
        for mode in modes {
            let r = lcpg_run(&p, &RunConfig::new(mode, k).with_seed(seed).with_subsolver(Subsolver::ScadSpecial))?;
            let x = r.final_x();
            if p.constraints.iter().enumerate().any(|(i, c)| c.value(x) > p.eta[i] + TOL) || !r.violations.is_empty() {
                infeasible += 1;
            }
            runs.push(r);
        }
        let traces: Vec<&[lcpg::drivers::IterateRecord]> = runs.iter().map(|r| r.trace.as_slice()).collect();
        let target = matched_target(&traces, frac).unwrap_or(f64::NEG_INFINITY);
        let passes: Vec<f64> = traces.iter().map(|t| passes_to_target(t, n, target).unwrap_or(f64::INFINITY)).collect();
        if passes[2] < passes[0] && passes[2] < passes[1] {
            wins += 1;
        }
        lines.push(format!("seed {seed}: lcpg {:.1}, lcspg {:.1}, lcsvrg {:.1}", passes[0], passes[1], passes[2]));
    }
    let need = if seeds >= 5 { 4 } else { seeds };
    Ok((
        wins >= need && infeasible == 0,
        format!("effective passes to matched target ({wins}/{seeds} lcsvrg fewest, {infeasible} infeasible or flagged runs): {}", lines.join("; ")),
    ))
}

fn generator_determinism(_: Scale) -> Result<(bool, String)> {
    let mut same = true;
    for conv in [Convexity::Convex, Convexity::Dc] {
        let r = QcqpRecipe::new(30, 3, conv, 9);
        same &= gen_qcqp(&r)?.to_json() == gen_qcqp(&r)?.to_json();
    }
    let a = crate::data::write_sparse(&synthetic_logistic(40, 6, 3));
    same &= a == crate::data::write_sparse(&synthetic_logistic(40, 6, 3));
    let (_, eta) = scad_constraint(2.0, 5.0, 10, 0.4)?;
    Ok((same && eta == 4.0, format!("repeated generation byte-identical: {same}")))
}
