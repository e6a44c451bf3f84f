//! Outer loops: LCPG, LCSPG and LCSVRG, plus level schedules, gradient
//! estimators, output sampling and KKT reporting.

use std::time::Instant;

use num_traits::Num;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::firstorder::{dual_bound_bk, pd_solve_from, LinearizedConstraint, ProxSubproblem};
use crate::ipm::{solve_path_following, IpmOptions};
use crate::linalg::{max_entry, min_entry};
use crate::problem::{kkt_residual_exact, ConstrainedProblem, SmoothOracle};
use crate::prox::{soft_threshold, ProxTerm, Simple};
use crate::{par, Error, Result, Vector};

/// Increment rule for the levels `ηᵏ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelSchedule {
    /// `δᵏ = (η − η⁰)/((k+1)(k+2))`.
    Polynomial,
    /// `δᵏ = ρᵏ(1 − ρ)(η − η⁰)`.
    Geometric { rho: f64 },
    /// `δᵏ = cₖ(η − η⁰)`; the fractions must be positive with sum below 1.
    /// Past the end of the list the levels stay put.
    Custom { fractions: Vec<f64> },
}

impl LevelSchedule {
    /// Fraction `tₖ` with `ηᵏ = η⁰ + tₖ(η − η⁰)`; `1 − tₖ` for the gap form.
    fn remaining(&self, k: u64) -> f64 {
        match self {
            LevelSchedule::Polynomial => 1.0 / (k as f64 + 1.0),
            LevelSchedule::Geometric { rho } => rho.powi(k.min(i32::MAX as u64) as i32),
            LevelSchedule::Custom { fractions } => {
                1.0 - fractions.iter().take(k as usize).sum::<f64>()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LevelSchedule::Polynomial => Ok(()),
            LevelSchedule::Geometric { rho } if *rho > 0.0 && *rho < 1.0 => Ok(()),
            LevelSchedule::Custom { fractions } if fractions.iter().all(|&c| c > 0.0) && fractions.iter().sum::<f64>() < 1.0 => Ok(()),
            _ => Err(Error::Config(format!("invalid level schedule {self:?}"))),
        }
    }
}

/// Closed-form `ηᵏ`.
pub fn schedule_levels(s: &LevelSchedule, eta0: &Vector, eta: &Vector, k: u64) -> Vector {
    match s {
        LevelSchedule::Polynomial => {
            let kf = k as f64;
            (eta * kf + eta0) / (kf + 1.0)
        }
        _ => eta - (eta - eta0) * s.remaining(k),
    }
}

/// `δᵏ = ηᵏ⁺¹ − ηᵏ` from its closed form.
pub fn schedule_increment(s: &LevelSchedule, eta0: &Vector, eta: &Vector, k: u64) -> Vector {
    let gap = eta - eta0;
    match s {
        LevelSchedule::Polynomial => gap / ((k as f64 + 1.0) * (k as f64 + 2.0)),
        LevelSchedule::Geometric { rho } => gap * (s.remaining(k) * (1.0 - rho)),
        LevelSchedule::Custom { fractions } => gap * fractions.get(k as usize).copied().unwrap_or(0.0),
    }
}

/// Scalar closed forms over any numeric field, used for exact rational checks.
pub fn polynomial_level<T: Num + Clone>(eta0: T, eta: T, k: u64) -> T {
    let mut kt = T::zero();
    for _ in 0..k {
        kt = kt + T::one();
    }
    (kt.clone() * eta + eta0) / (kt + T::one())
}

pub fn geometric_level<T: Num + Clone>(eta0: T, eta: T, rho: T, k: u64) -> T {
    let mut p = T::one();
    for _ in 0..k {
        p = p * rho.clone();
    }
    eta.clone() - p * (eta - eta0)
}

/// `ρ = (L₀ − μ₀) / (2(L₀ − aμ₀))`.
pub fn strongly_convex_rho(l0: f64, mu0: f64, a: f64) -> Result<f64> {
    if !(mu0 > 0.0 && mu0 < l0 && a > 0.0 && a < 1.0) {
        return Err(Error::Config("strongly convex rate needs 0 < μ₀ < L₀ and a ∈ (0,1)".into()));
    }
    Ok((l0 - mu0) / (2.0 * (l0 - a * mu0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    KPlus1,
    EpochFloor { epoch: usize },
    Uniform,
}

pub fn alpha_weights(rule: AlphaRule, k: usize) -> f64 {
    match rule {
        AlphaRule::KPlus1 => (k + 1) as f64,
        AlphaRule::EpochFloor { epoch } => (epoch * (k / epoch.max(1)) + 1) as f64,
        AlphaRule::Uniform => 1.0,
    }
}

/// Draws `k̂` with probability `αₖ / Σα`.
pub fn sample_output_index<R: Rng + ?Sized>(alphas: &[f64], rng: &mut R) -> Result<usize> {
    if alphas.is_empty() || alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::Config("output weights must be positive".into()));
    }
    let total: f64 = alphas.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, a) in alphas.iter().enumerate() {
        acc += a;
        if u < acc {
            return Ok(k);
        }
    }
    Ok(alphas.len() - 1)
}

/// Mean of `b` component gradients drawn uniformly with replacement.
pub fn lcspg_gradient<R: Rng + ?Sized>(oracle: &dyn SmoothOracle, x: &Vector, b: usize, rng: &mut R) -> Vector {
    let n = oracle.n_components();
    if n == 0 {
        return oracle.grad(x);
    }
    let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
    par::chunked_sum(b, oracle.dim(), |t, acc| oracle.add_component_grad(idx[t], x, 1.0, acc)) / b as f64
}

#[derive(Clone, Debug)]
pub struct SvrgState {
    pub g_prev: Vector,
    pub x_prev: Vector,
}

/// Recursive variance-reduced estimator with full refreshes every `epoch` steps.
/// Returns the estimate and whether a full gradient was computed.
pub fn lcsvrg_gradient<R: Rng + ?Sized>(
    oracle: &dyn SmoothOracle,
    state: Option<&SvrgState>,
    x: &Vector,
    k: usize,
    epoch: usize,
    b: usize,
    rng: &mut R,
) -> (Vector, bool) {
    let n = oracle.n_components();
    let state = match state {
        Some(s) if k % epoch != 0 && n > 0 => s,
        _ => return (oracle.grad(x), true),
    };
    let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
    let diff = par::chunked_sum(b, oracle.dim(), |t, acc| {
        oracle.add_component_grad(idx[t], x, 1.0, acc);
        oracle.add_component_grad(idx[t], &state.x_prev, -1.0, acc);
    });
    (diff / b as f64 + &state.g_prev, false)
}

/// `2(L₀ + ⟨λ, L⟩)‖xᵏ⁺¹ − xᵏ‖`.
pub fn kkt_residual_surrogate(l0: f64, l: &Vector, lambda: &Vector, step_norm: f64) -> f64 {
    2.0 * (l0 + lambda.dot(l)) * step_norm
}

/// Sum-of-squares form for the stochastic methods: `2(γ + L₀ + 2⟨λ, L⟩)²‖Δx‖²`.
/// The noise term `2‖ζ‖²` is not observable and is left out.
pub fn kkt_residual_surrogate_stochastic(gamma: f64, l0: f64, l: &Vector, lambda: &Vector, step_norm: f64) -> f64 {
    2.0 * (gamma + l0 + 2.0 * lambda.dot(l)).powi(2) * step_norm * step_norm
}

/// Exact minimiser of `⟨G, x⟩ + (γ/2)‖x − xᵏ‖² + w‖x‖₁` subject to
/// `β‖x‖₁ + ⟨c, x⟩ ≤ r`, by bisection on the multiplier. Returns `(x, λ)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_scad_subproblem(
    g: &Vector,
    gamma: f64,
    anchor: &Vector,
    l1_weight: f64,
    beta: f64,
    c: &Vector,
    r: f64,
) -> Result<(Vector, f64)> {
    let x_of = |lam: f64| soft_threshold(&(anchor - (g + c * lam) / gamma), (l1_weight + lam * beta) / gamma);
    let h = |x: &Vector| beta * crate::linalg::l1(x) + c.dot(x) - r;
    let x0 = x_of(0.0);
    if h(&x0) <= 0.0 {
        return Ok((x0, 0.0));
    }
    if c.iter().all(|&cj| cj.abs() <= beta) && r < 0.0 {
        return Err(Error::Infeasible { worst: -r });
    }
    let mut hi = 1.0;
    let mut x_hi = x_of(hi);
    let mut grow = 0;
    while h(&x_hi) > 0.0 {
        hi *= 2.0;
        x_hi = x_of(hi);
        grow += 1;
        if grow > 200 {
            return Err(Error::Infeasible { worst: h(&x_hi) });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let xm = x_of(mid);
        let hm = h(&xm);
        if hm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            x_hi = xm;
            if hm > -1e-10 {
                break;
            }
        }
    }
    Ok((x_hi, hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct StochasticParams {
    /// Minibatch size; defaults to `K + 1`.
    #[serde(default)]
    pub batch: Option<usize>,
    /// Proximal parameter γ; defaults to `L₀`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Analysis parameter β; defaults to `L₀/2`.
    #[serde(default)]
    pub beta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct SvrgParams {
    /// Epoch length; defaults to `⌈√n⌉`.
    #[serde(default)]
    pub epoch: Option<usize>,
    /// Minibatch size; defaults to `8T`.
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Subproblems solved to high accuracy with `γ = L₀` and exact gradients.
    Exact,
    /// Subproblems solved to `εₖ = fraction · minᵢ δᵢᵏ`.
    Inexact { fraction: f64 },
    Stochastic(StochasticParams),
    Svrg(SvrgParams),
    /// Exact subproblems with the polynomial schedule.
    Convex,
    /// Exact subproblems with the geometric schedule `ρ = (L₀ − μ₀)/(2(L₀ − aμ₀))`.
    StronglyConvex { a: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsolver {
    /// IPM when the subproblem is a diagonal QCQP, otherwise the first-order solver.
    Auto,
    Ipm,
    #[serde(alias = "pd")]
    Firstorder,
    /// Bisection for a single constraint `β‖x‖₁ + f₁` with concave `f₁`, linearised.
    ScadSpecial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Iteration budget `K`.
    pub iterations: usize,
    #[serde(default)]
    pub alpha: Option<AlphaRule>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_subsolver")]
    pub subsolver: Subsolver,
    /// Overrides the mode's default level schedule.
    #[serde(default)]
    pub schedule: Option<LevelSchedule>,
    /// Lower bound on the optimal objective, used for the dual radius `Bᵏ`.
    #[serde(default)]
    pub psi0_lower_bound: Option<f64>,
    /// Accuracy of "exact" subproblem solves, relative to `max(1, |ψ₀(xᵏ)|)`.
    #[serde(default = "default_exact_eps")]
    pub exact_eps: f64,
    #[serde(default = "default_pd_iters")]
    pub pd_max_iter: usize,
    /// Evaluate `dist(0, ∂ₓ𝓛)` at every iterate when every χ is separable.
    #[serde(default = "default_true")]
    pub report_exact_kkt: bool,
    /// Record wall-clock time per iterate; off keeps traces reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
}

fn default_subsolver() -> Subsolver {
    Subsolver::Auto
}
fn default_exact_eps() -> f64 {
    1e-10
}
fn default_pd_iters() -> usize {
    50_000
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(mode: Mode, iterations: usize) -> Self {
        RunConfig {
            mode,
            iterations,
            alpha: None,
            seed: 0,
            subsolver: Subsolver::Auto,
            schedule: None,
            psi0_lower_bound: None,
            exact_eps: default_exact_eps(),
            pd_max_iter: default_pd_iters(),
            report_exact_kkt: true,
            timing: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_subsolver(mut self, s: Subsolver) -> Self {
        self.subsolver = s;
        self
    }
}

/// Parameters resolved against a concrete problem.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Resolved {
    gamma: f64,
    batch: usize,
    epoch: usize,
    alpha: AlphaRule,
}

fn resolve(p: &ConstrainedProblem, cfg: &RunConfig) -> Result<(Resolved, LevelSchedule)> {
    let l0 = p.l0();
    let n = p.objective.smooth.n_components();
    let k = cfg.iterations;
    let (res, default_schedule) = match cfg.mode {
        Mode::Exact | Mode::Convex => (Resolved { gamma: l0, batch: 0, epoch: 1, alpha: AlphaRule::KPlus1 }, LevelSchedule::Polynomial),
        Mode::Inexact { fraction } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::Config("inexact fraction must lie in (0,1)".into()));
            }
            (Resolved { gamma: l0, batch: 0, epoch: 1, alpha: AlphaRule::KPlus1 }, LevelSchedule::Polynomial)
        }
        Mode::StronglyConvex { a } => {
            let rho = strongly_convex_rho(l0, p.mu0, a)?;
            (Resolved { gamma: l0, batch: 0, epoch: 1, alpha: AlphaRule::KPlus1 }, LevelSchedule::Geometric { rho })
        }
        Mode::Stochastic(sp) => {
            let gamma = sp.gamma.unwrap_or(l0);
            let beta = sp.beta.unwrap_or(l0 / 2.0);
            if !(2.0 * gamma - beta - l0 > 0.0) || !(beta > 0.0) {
                return Err(Error::Config("stochastic mode needs β > 0 and 2γ − β − L₀ > 0".into()));
            }
            let batch = sp.batch.unwrap_or(k + 1).max(1);
            (Resolved { gamma, batch, epoch: 1, alpha: AlphaRule::KPlus1 }, LevelSchedule::Polynomial)
        }
        Mode::Svrg(sp) => {
            let gamma = sp.gamma.unwrap_or(l0);
            let beta = sp.beta.unwrap_or(l0 / 2.0);
            let epoch = sp.epoch.unwrap_or(((n.max(1)) as f64).sqrt().ceil() as usize).max(1);
            let batch = sp.batch.unwrap_or(8 * epoch).max(1);
            let lt = svrg_l_tilde(gamma, beta, l0, epoch, batch);
            if batch < 2 * epoch || !(lt > 0.0) || !(beta > 0.0) {
                return Err(Error::Config(format!("svrg parameters violate b ≥ 2T or L̃ > 0 (L̃ = {lt})")));
            }
            (Resolved { gamma, batch, epoch, alpha: AlphaRule::EpochFloor { epoch } }, LevelSchedule::Polynomial)
        }
    };
    let schedule = cfg.schedule.clone().unwrap_or(default_schedule);
    schedule.validate()?;
    Ok((Resolved { alpha: cfg.alpha.unwrap_or(res.alpha), ..res }, schedule))
}

/// `L̃ = (2γ − β − L₀)/2 − L₀²(T − 1)/(2βb)`.
pub fn svrg_l_tilde(gamma: f64, beta: f64, l0: f64, epoch: usize, batch: usize) -> f64 {
    (2.0 * gamma - beta - l0) / 2.0 - l0 * l0 * (epoch as f64 - 1.0) / (2.0 * beta * batch as f64)
}

/// Builds the majorised subproblem around `xᵏ` with objective gradient `G`.
pub fn build_subproblem(
    p: &ConstrainedProblem,
    x_k: &Vector,
    eta_k: &Vector,
    g_k: &Vector,
    gamma_k: f64,
) -> Result<ProxSubproblem> {
    let constraints: Vec<LinearizedConstraint> = p
        .constraints
        .iter()
        .zip(eta_k.iter())
        .map(|(c, &level)| {
            let (value, grad) = c.smooth.eval(x_k);
            LinearizedConstraint { value, grad, curvature: c.lipschitz, chi: c.prox.clone(), level }
        })
        .collect();
    let sub = ProxSubproblem {
        anchor: x_k.clone(),
        obj_value: p.objective.smooth.value(x_k),
        obj_grad: g_k.clone(),
        gamma: gamma_k,
        chi0: p.objective.prox.clone(),
        constraints,
    };
    let worst = max_entry(&sub.constraints_at(x_k));
    if sub.m() > 0 && !(worst < 0.0) {
        return Err(Error::Infeasible { worst });
    }
    Ok(sub)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub k: usize,
    pub x: Vec<f64>,
    /// `ψ₀(xᵏ)`.
    pub obj: f64,
    /// `ψ(xᵏ)`.
    pub psi: Vec<f64>,
    /// `ηᵏ`.
    pub eta: Vec<f64>,
    pub step_norm: f64,
    pub lambda: Vec<f64>,
    pub dual_norm: f64,
    pub kkt_surrogate: f64,
    /// `dist(0, ∂ₓ𝓛(xᵏ⁺¹, λᵏ⁺¹))` when every χ is separable.
    pub kkt_exact: Option<f64>,
    pub subsolver_iters: usize,
    pub grad_evals_full: usize,
    pub grad_evals_stoch: usize,
    pub eps_k: f64,
    pub time_ms: Option<f64>,
}

impl IterateRecord {
    /// `minᵢ (ηᵢᵏ − ψᵢ(xᵏ))`, or `+∞` without constraints.
    pub fn feas_margin_min(&self) -> f64 {
        self.eta.iter().zip(&self.psi).map(|(e, p)| e - p).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KktType {
    I,
    II,
    III,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub kind: KktType,
    pub stationarity: f64,
    /// Whether `stationarity` is the exact distance or the surrogate bound.
    pub exact: bool,
    pub complementarity: f64,
    /// Type II only: certified bound on the squared distance to the companion point.
    pub companion_distance_bound: Option<f64>,
    pub k_hat: usize,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub trace: Vec<IterateRecord>,
    /// `x⁰, …, x^K`.
    pub iterates: Vec<Vector>,
    pub k_hat: usize,
    pub output: Vector,
    pub report: KktReport,
    pub violations: Vec<String>,
    pub max_dual_norm: f64,
    /// The level schedule used by the run.
    pub schedule: LevelSchedule,
}

impl RunResult {
    pub fn final_x(&self) -> &Vector {
        self.iterates.last().expect("at least x0")
    }

    pub fn effective_passes(&self, n: usize) -> f64 {
        let last = match self.trace.last() {
            Some(r) => r,
            None => return 0.0,
        };
        effective_passes(last.grad_evals_full, last.grad_evals_stoch, n)
    }
}

/// `(n · full + component evaluations) / n`.
pub fn effective_passes(full: usize, stoch: usize, n: usize) -> f64 {
    let n = n.max(1);
    (full * n + stoch) as f64 / n as f64
}

/// Smallest tolerance handed to the IPM; below it the recovered duals lose accuracy.
pub const IPM_EPS_FLOOR: f64 = 1e-10;

/// Tolerance for runtime feasibility and descent checks.
pub const CHECK_TOL: f64 = 1e-9;

enum Estimator {
    Exact,
    Minibatch(ChaCha8Rng),
    Svrg(ChaCha8Rng, Option<SvrgState>),
}

/// Runs `K` outer iterations and samples the output index.
pub fn lcpg_run(p: &ConstrainedProblem, cfg: &RunConfig) -> Result<RunResult> {
    let (res, schedule) = resolve(p, cfg)?;
    let m = p.m();
    let l0 = p.l0();
    let curv = p.curvatures();
    let n = p.objective.smooth.n_components();
    let deterministic = matches!(cfg.mode, Mode::Exact | Mode::Convex | Mode::StronglyConvex { .. });
    let separable = std::iter::once(&p.objective.prox)
        .chain(p.constraints.iter().map(|c| &c.prox))
        .all(|t| t.simple().map(|s| s.is_separable()).unwrap_or(false));

    let mut estimator = match cfg.mode {
        Mode::Stochastic(_) => Estimator::Minibatch(stream(cfg.seed, 0)),
        Mode::Svrg(_) => Estimator::Svrg(stream(cfg.seed, 0), None),
        _ => Estimator::Exact,
    };
    let start = Instant::now();
    let mut x = p.x0.clone();
    let mut iterates = vec![x.clone()];
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut violations = Vec::new();
    let mut lambda = Vector::zeros(m);
    let (mut full, mut stoch) = (0usize, 0usize);
    let mut obj = p.objective.value(&x);
    let mut max_dual = 0.0f64;

    for k in 0..cfg.iterations {
        let eta_k = if m == 0 { Vector::zeros(0) } else { schedule_levels(&schedule, &p.eta0, &p.eta, k as u64) };
        let delta_k = if m == 0 { Vector::zeros(0) } else { schedule_increment(&schedule, &p.eta0, &p.eta, k as u64) };
        let g_k = match &mut estimator {
            Estimator::Exact => {
                full += 1;
                p.objective.smooth.grad(&x)
            }
            Estimator::Minibatch(rng) => {
                if n == 0 {
                    full += 1;
                } else {
                    stoch += res.batch;
                }
                lcspg_gradient(p.objective.smooth.as_ref(), &x, res.batch, rng)
            }
            Estimator::Svrg(rng, state) => {
                let (g, was_full) = lcsvrg_gradient(p.objective.smooth.as_ref(), state.as_ref(), &x, k, res.epoch, res.batch, rng);
                if was_full {
                    full += 1;
                } else {
                    stoch += 2 * res.batch;
                }
                *state = Some(SvrgState { g_prev: g.clone(), x_prev: x.clone() });
                g
            }
        };
        let mut sub = build_subproblem(p, &x, &eta_k, &g_k, res.gamma).map_err(|e| Error::Subsolver { k, source: Box::new(e) })?;
        if cfg.subsolver == Subsolver::ScadSpecial {
            // Concave smooth part: the linearisation already majorises it.
            for c in &mut sub.constraints {
                c.curvature = 0.0;
            }
        }
        let eps_k = match cfg.mode {
            Mode::Inexact { fraction } if m > 0 => fraction * min_entry(&delta_k),
            _ => cfg.exact_eps * obj.abs().max(1.0),
        };
        let (x_next, lam_next, iters) =
            solve_sub(p, cfg, &sub, &x, &delta_k, obj, eps_k, &lambda).map_err(|e| Error::Subsolver { k, source: Box::new(e) })?;
        lambda = lam_next;
        max_dual = max_dual.max(lambda.norm());

        let step = (&x_next - &x).norm();
        let obj_next = p.objective.value(&x_next);
        let psi_k: Vec<f64> = p.constraints.iter().map(|c| c.value(&x)).collect();

        // Feasibility chain ψ(xᵏ⁺¹) ≤ ψᵏ(xᵏ⁺¹) ≤ ηᵏ < ηᵏ⁺¹ ≤ η.
        for (i, c) in p.constraints.iter().enumerate() {
            let psi_i = c.value(&x_next);
            let model = sub.constraint(i, &x_next) + eta_k[i];
            if psi_i > model + CHECK_TOL {
                violations.push(format!("k={k}: constraint {i} majorization {psi_i} > {model}"));
            }
            if model > eta_k[i] + CHECK_TOL {
                violations.push(format!("k={k}: constraint {i} level {model} > {}", eta_k[i]));
            }
            let eta_next = schedule_levels(&schedule, &p.eta0, &p.eta, k as u64 + 1);
            // Strict increase is only representable while δᵏ exceeds the spacing of f64 near ηᵏ.
            let resolvable = delta_k[i] > 2.0 * f64::EPSILON * eta_k[i].abs().max(p.eta[i].abs());
            if eta_next[i] < eta_k[i] || (resolvable && eta_next[i] <= eta_k[i]) || eta_next[i] > p.eta[i] {
                violations.push(format!("k={k}: level order broken for constraint {i}"));
            }
        }
        if deterministic && obj_next > obj - 0.5 * l0 * step * step + CHECK_TOL {
            violations.push(format!("k={k}: descent {obj} -> {obj_next} with step {step}"));
        }
        if matches!(cfg.mode, Mode::Inexact { .. }) && obj_next > obj + eps_k + CHECK_TOL {
            violations.push(format!("k={k}: near-descent {obj} -> {obj_next} with eps {eps_k}"));
        }

        let kkt_exact = if cfg.report_exact_kkt && separable { kkt_residual_exact(p, &x_next, &lambda).ok() } else { None };
        let kkt_surrogate = if deterministic || matches!(cfg.mode, Mode::Inexact { .. }) {
            kkt_residual_surrogate(l0, &curv, &lambda, step)
        } else {
            kkt_residual_surrogate_stochastic(res.gamma, l0, &curv, &lambda, step).sqrt()
        };
        trace.push(IterateRecord {
            k,
            x: x.iter().copied().collect(),
            obj,
            psi: psi_k,
            eta: eta_k.iter().copied().collect(),
            step_norm: step,
            lambda: lambda.iter().copied().collect(),
            dual_norm: lambda.norm(),
            kkt_surrogate,
            kkt_exact,
            subsolver_iters: iters,
            grad_evals_full: full,
            grad_evals_stoch: stoch,
            eps_k: if deterministic { 0.0 } else { eps_k },
            time_ms: cfg.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
        });
        x = x_next;
        obj = obj_next;
        iterates.push(x.clone());
    }

    let alphas: Vec<f64> = (0..cfg.iterations).map(|k| alpha_weights(res.alpha, k)).collect();
    let k_hat = if alphas.is_empty() { 0 } else { sample_output_index(&alphas, &mut stream(cfg.seed, 1))? };
    let output = iterates[(k_hat + 1).min(iterates.len() - 1)].clone();
    let report = output_report(p, &trace, k_hat, &output, matches!(cfg.mode, Mode::Inexact { .. }), &alphas);
    Ok(RunResult { trace, iterates, k_hat, output, report, violations, max_dual_norm: max_dual, schedule })
}

fn output_report(
    p: &ConstrainedProblem,
    trace: &[IterateRecord],
    k_hat: usize,
    output: &Vector,
    inexact: bool,
    alphas: &[f64],
) -> KktReport {
    let rec = match trace.get(k_hat) {
        Some(r) => r,
        None => {
            return KktReport { kind: KktType::I, stationarity: 0.0, exact: false, complementarity: 0.0, companion_distance_bound: None, k_hat }
        }
    };
    let lam = Vector::from_column_slice(&rec.lambda);
    let complementarity = p
        .constraints
        .iter()
        .enumerate()
        .map(|(i, c)| lam[i] * (c.value(output) - p.eta[i]).abs())
        .sum();
    let (stationarity, exact) = match rec.kkt_exact {
        Some(v) => (v, true),
        None => (rec.kkt_surrogate, false),
    };
    let companion = inexact.then(|| {
        let sum_a: f64 = alphas.iter().sum();
        let weighted_eps: f64 = trace.iter().zip(alphas).map(|(r, a)| a * r.eps_k).sum();
        2.0 * weighted_eps / (p.l0() * sum_a)
    });
    KktReport {
        kind: if inexact { KktType::II } else { KktType::I },
        stationarity,
        exact,
        complementarity,
        companion_distance_bound: companion,
        k_hat,
    }
}

/// Per-run RNG stream: ChaCha8 keyed by the seed, one stream per purpose.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[allow(clippy::too_many_arguments)]
fn solve_sub(
    p: &ConstrainedProblem,
    cfg: &RunConfig,
    sub: &ProxSubproblem,
    x: &Vector,
    delta_k: &Vector,
    obj: f64,
    eps_k: f64,
    warm: &Vector,
) -> Result<(Vector, Vector, usize)> {
    let m = sub.m();
    if m == 0 {
        let (xn, _) = sub.inner_min(&Vector::zeros(0))?;
        return Ok((xn, Vector::zeros(0), 1));
    }
    let choice = match cfg.subsolver {
        Subsolver::Auto if sub.to_diag_qcqp().is_some() => Subsolver::Ipm,
        Subsolver::Auto => Subsolver::Firstorder,
        s => s,
    };
    match choice {
        Subsolver::Ipm => {
            let (q, _) = sub
                .to_diag_qcqp()
                .ok_or_else(|| Error::Unsupported("the IPM needs χ = 0 and positive curvatures".into()))?;
            let slack = -max_entry(&sub.constraints_at(x));
            let sol = solve_path_following(&q, x, 0.5 * slack, eps_k.max(IPM_EPS_FLOOR), &IpmOptions::default())?;
            let iters = sol.stats.newton_steps();
            Ok((sol.x, sol.lambda, iters))
        }
        Subsolver::Firstorder => {
            let b = match cfg.psi0_lower_bound {
                Some(lb) => dual_bound_bk(obj, lb, delta_k)?.max(1.0),
                None => 1e8,
            };
            let s = pd_solve_from(sub, b, eps_k, cfg.pd_max_iter, Some(warm))?;
            if !s.certified {
                return Err(Error::Budget(format!(
                    "first-order subsolver uncertified after {} iterations: {:?}",
                    s.iterations, s.certificate
                )));
            }
            Ok((s.x, s.lambda, s.iterations))
        }
        Subsolver::ScadSpecial => {
            if m != 1 {
                return Err(Error::Unsupported("the SCAD subsolver handles a single constraint".into()));
            }
            let con = &sub.constraints[0];
            let beta = match con.chi.simple()? {
                Simple { l1, ball: None } => l1,
                _ => return Err(Error::Unsupported("SCAD constraint must carry an l1 term".into())),
            };
            let w = match p.objective.prox.simple()? {
                Simple { l1, ball: None } => l1,
                _ => return Err(Error::Unsupported("SCAD subsolver needs χ₀ ∈ {0, l1}".into())),
            };
            let r = con.level - con.value + con.grad.dot(x);
            let (xn, lam) = solve_scad_subproblem(&sub.obj_grad, sub.gamma, x, w, beta, &con.grad, r)?;
            Ok((xn, Vector::from_element(1, lam), 1))
        }
        Subsolver::Auto => unreachable!(),
    }
}

/// `ε_K` of the type-I rate with measured `B̂` and `D² = (ψ₀(x⁰) − ψ₀*)/L₀`:
/// `(1/Σα) max{8(L₀ + B‖L‖)² D² α_K, 2B‖L‖D²α_K + B Σ αₖ‖η − ηᵏ‖}`.
pub fn type1_eps_bound(alphas: &[f64], eta_gap_norms: &[f64], l0: f64, b: f64, l_norm: f64, d2: f64) -> f64 {
    let sum_a: f64 = alphas.iter().sum();
    let a_k = *alphas.last().unwrap_or(&0.0);
    let weighted_gap: f64 = alphas.iter().zip(eta_gap_norms).map(|(a, g)| a * g).sum();
    let t1 = 8.0 * (l0 + b * l_norm).powi(2) * d2 * a_k;
    let t2 = 2.0 * b * l_norm * d2 * a_k + b * weighted_gap;
    t1.max(t2) / sum_a
}

/// The same bound for `αₖ = k + 1` and the polynomial schedule, in closed form.
pub fn type1_eps_bound_polynomial(k: usize, l0: f64, b: f64, l_norm: f64, d2: f64, eta_gap: f64) -> f64 {
    2.0 / (k as f64 + 2.0) * (8.0 * (l0 + b * l_norm).powi(2) * d2).max(2.0 * b * l_norm * d2 + b * eta_gap)
}

/// `ε_K` measured on a finished run: `B̂` is the largest observed dual norm and
/// `ψ₀*` is replaced by the smallest observed objective.
pub fn observed_type1_bound(p: &ConstrainedProblem, run: &RunResult) -> f64 {
    let k = run.trace.len().saturating_sub(1);
    let psi_first = run.trace.first().map_or(0.0, |r| r.obj);
    let psi_min = run.trace.iter().map(|r| r.obj).fold(f64::INFINITY, f64::min).min(p.objective.value(run.final_x()));
    let d2 = (psi_first - psi_min).max(0.0) / p.l0();
    let alphas: Vec<f64> = (0..=k).map(|j| alpha_weights(AlphaRule::KPlus1, j)).collect();
    let gaps: Vec<f64> = (0..=k)
        .map(|j| (&p.eta - schedule_levels(&run.schedule, &p.eta0, &p.eta, j as u64)).norm())
        .collect();
    type1_eps_bound(&alphas, &gaps, p.l0(), run.max_dual_norm, p.curvatures().norm(), d2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexGapReport {
    pub gaps: Vec<f64>,
    pub b_hat: f64,
    /// Least-squares slope of `log gap` against `k` (strongly convex) or of `k·gap` against `k` (convex).
    pub fitted_slope: f64,
    /// `−μ₀/(L₀ + B̂‖L‖)` for strongly convex runs, `0` for convex ones.
    pub predicted_slope: f64,
    /// `−(1 − a)μ₀/(L₀ + B̂‖L‖ − aμ₀)` for the inexact strongly convex rate.
    pub predicted_slope_inexact: Option<f64>,
    /// Number of iterates used in the fit.
    pub fit_len: usize,
}

/// Optimality gaps against a reference value and rate-fit diagnostics.
/// Iterates whose gap falls below `floor` are excluded from the logarithmic fit.
pub fn convex_gap_trace(p: &ConstrainedProblem, cfg: &RunConfig, reference: Option<f64>, floor: f64) -> Result<(RunResult, ConvexGapReport)> {
    let reference = reference.ok_or_else(|| Error::Config("a reference optimal value is required".into()))?;
    if !matches!(cfg.mode, Mode::Convex | Mode::StronglyConvex { .. }) {
        return Err(Error::Config("convex_gap_trace needs a convex or strongly convex mode".into()));
    }
    let run = lcpg_run(p, cfg)?;
    let gaps: Vec<f64> = run.iterates.iter().map(|x| p.objective.value(x) - reference).collect();
    let b_hat = run.max_dual_norm;
    let denom = p.l0() + b_hat * p.curvatures().norm();
    let report = match cfg.mode {
        Mode::StronglyConvex { a } => {
            let pts: Vec<(f64, f64)> = gaps
                .iter()
                .enumerate()
                .take_while(|(_, &g)| g > floor)
                .map(|(k, &g)| (k as f64, g.ln()))
                .collect();
            ConvexGapReport {
                fit_len: pts.len(),
                fitted_slope: ls_slope(&pts),
                predicted_slope: -p.mu0 / denom,
                predicted_slope_inexact: Some(-(1.0 - a) * p.mu0 / (denom - a * p.mu0)),
                gaps,
                b_hat,
            }
        }
        _ => {
            let pts: Vec<(f64, f64)> = gaps.iter().enumerate().skip(1).map(|(k, &g)| (k as f64, k as f64 * g)).collect();
            ConvexGapReport { fit_len: pts.len(), fitted_slope: ls_slope(&pts), predicted_slope: 0.0, predicted_slope_inexact: None, gaps, b_hat }
        }
    };
    Ok((run, report))
}

/// Ordinary least-squares slope.
pub fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Prox term of a composite, kept for callers that rebuild subproblems by hand.
pub fn objective_prox(p: &ConstrainedProblem) -> &ProxTerm {
    &p.objective.prox
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Composite, LeastSquares, SquaredDistance};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn level_examples() {
        let (e0, e) = (v(&[0.0]), v(&[1.0]));
        assert_eq!(schedule_levels(&LevelSchedule::Polynomial, &e0, &e, 0)[0], 0.0);
        assert_eq!(schedule_levels(&LevelSchedule::Polynomial, &e0, &e, 1)[0], 0.5);
        let g = LevelSchedule::Geometric { rho: 1.0 / 3.0 };
        assert_abs_diff_eq!(schedule_levels(&g, &e0, &e, 2)[0], 8.0 / 9.0, epsilon = 1e-15);
        assert_eq!(strongly_convex_rho(4.0, 2.0, 0.5).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_weights(AlphaRule::KPlus1, 4), 5.0);
        assert_eq!(alpha_weights(AlphaRule::EpochFloor { epoch: 3 }, 4), 4.0);
        assert_eq!(alpha_weights(AlphaRule::EpochFloor { epoch: 3 }, 2), 1.0);
        assert_eq!(alpha_weights(AlphaRule::Uniform, 9), 1.0);
    }

    #[test]
    fn output_sampling() {
        let mut rng = stream(3, 1);
        assert_eq!(sample_output_index(&[2.5], &mut rng).unwrap(), 0);
        let mut counts = [0usize; 3];
        for _ in 0..60_000 {
            counts[sample_output_index(&[1.0, 2.0, 3.0], &mut rng).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip([1.0f64 / 6.0, 1.0 / 3.0, 0.5]) {
            let sd = (60_000.0 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - 60_000.0 * p).abs() <= 3.0 * sd);
        }
        assert!(sample_output_index(&[], &mut rng).is_err());
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(kkt_residual_surrogate(2.0, &v(&[1.0]), &v(&[0.0]), 0.5), 2.0);
        assert_eq!(kkt_residual_surrogate(2.0, &v(&[1.0]), &v(&[3.0]), 0.0), 0.0);
    }

    #[test]
    fn scad_subproblem_examples() {
        let (x, lam) = solve_scad_subproblem(&v(&[-2.0]), 1.0, &v(&[0.0]), 0.0, 0.0, &v(&[1.0]), 1.0).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(lam, 1.0, epsilon = 1e-9);
        let (x, lam) = solve_scad_subproblem(&v(&[-0.5]), 1.0, &v(&[0.0]), 0.0, 0.0, &v(&[1.0]), 1.0).unwrap();
        assert_eq!((x[0], lam), (0.5, 0.0));
        assert!(solve_scad_subproblem(&v(&[-2.0]), 1.0, &v(&[0.0]), 0.0, 1.0, &v(&[0.5]), -1.0).is_err());
    }

    fn quad_problem() -> ConstrainedProblem {
        let obj = Composite::new(Arc::new(SquaredDistance { scale: 2.0, a: v(&[3.0, 1.0]), c: 0.0 }), ProxTerm::Zero, 2.0);
        let con = Composite::new(Arc::new(SquaredDistance { scale: 1.0, a: v(&[0.0, 0.0]), c: 0.0 }), ProxTerm::Zero, 1.0);
        ConstrainedProblem::new(obj, vec![con], v(&[2.0]), v(&[1.0]), v(&[0.0, 0.0])).unwrap()
    }

    #[test]
    fn unconstrained_step_lands_on_minimizer() {
        let obj = Composite::new(Arc::new(SquaredDistance { scale: 4.0, a: v(&[1.0, -1.0]), c: 0.0 }), ProxTerm::Zero, 4.0);
        let p = ConstrainedProblem::new(obj, vec![], Vector::zeros(0), Vector::zeros(0), v(&[5.0, 5.0])).unwrap();
        let r = lcpg_run(&p, &RunConfig::new(Mode::Exact, 1)).unwrap();
        assert_eq!(r.iterates[1], v(&[1.0, -1.0]));
    }

    #[test]
    fn exact_run_is_feasible_and_descends() {
        let p = quad_problem();
        for sub in [Subsolver::Ipm, Subsolver::Firstorder] {
            let r = lcpg_run(&p, &RunConfig::new(Mode::Exact, 60).with_subsolver(sub)).unwrap();
            assert!(r.violations.is_empty(), "{:?}", r.violations);
            let x = r.final_x();
            assert!((x.norm_squared() / 2.0) <= 2.0 + 1e-9);
            // Last subproblem level is η⁵⁹; its optimum sits on ‖x‖ = √(2η⁵⁹) towards (3, 1).
            let r59 = (2.0 * (59.0 * 2.0 + 1.0) / 60.0f64).sqrt();
            let target = v(&[3.0, 1.0]) * (r59 / 10f64.sqrt());
            assert!((x - target).norm() < 1e-3, "{x}");
            for rec in &r.trace {
                if let Some(e) = rec.kkt_exact {
                    assert!(rec.kkt_surrogate + 1e-9 >= e);
                }
            }
        }
    }

    #[test]
    fn weighted_step_sum_is_bounded() {
        let p = quad_problem();
        let r = lcpg_run(&p, &RunConfig::new(Mode::Exact, 40)).unwrap();
        let lhs: f64 = r.trace.iter().map(|t| (t.k + 1) as f64 * t.step_norm.powi(2)).sum();
        let min_obj = r.trace.iter().map(|t| t.obj).fold(f64::INFINITY, f64::min).min(p.objective.value(r.final_x()));
        let rhs = 2.0 * 40.0 * (r.trace[0].obj - min_obj) / p.l0();
        assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn reproducible_under_seed() {
        let a = DMatrix::from_fn(40, 2, |i, j| ((i * 3 + j) as f64).sin());
        let y = Vector::from_fn(40, |i, _| (i as f64 * 0.2).cos());
        let ls = LeastSquares { a: a.clone(), y };
        let l0 = (0..40).map(|i| a.row(i).norm_squared()).fold(0.0, f64::max);
        let obj = Composite::new(Arc::new(ls), ProxTerm::l1(0.01), l0);
        let con = Composite::new(Arc::new(SquaredDistance { scale: 1.0, a: v(&[0.0, 0.0]), c: 0.0 }), ProxTerm::Zero, 1.0);
        let p = ConstrainedProblem::new(obj, vec![con], v(&[1.0]), v(&[0.5]), v(&[0.0, 0.0])).unwrap();
        let cfg = RunConfig::new(Mode::Svrg(SvrgParams { epoch: None, batch: None, gamma: None, beta: None }), 30).with_seed(9);
        let r1 = lcpg_run(&p, &cfg).unwrap();
        let r2 = lcpg_run(&p, &cfg).unwrap();
        assert_eq!(r1.trace, r2.trace);
        assert_eq!(r1.k_hat, r2.k_hat);
        assert!(r1.violations.is_empty(), "{:?}", r1.violations);
    }

    #[test]
    fn svrg_parameter_checks() {
        assert!(svrg_l_tilde(1.0, 0.5, 1.0, 15, 120) > 0.0);
        assert!(svrg_l_tilde(1.0, 0.5, 1.0, 15, 40) < 0.0);
    }

    #[test]
    fn bound_closed_form_matches_sum_form() {
        let k = 50;
        let alphas: Vec<f64> = (0..=k).map(|j| (j + 1) as f64).collect();
        let (e0, e) = (v(&[0.0, -1.0]), v(&[1.0, 1.0]));
        let gaps: Vec<f64> = (0..=k).map(|j| (&e - schedule_levels(&LevelSchedule::Polynomial, &e0, &e, j as u64)).norm()).collect();
        let a = type1_eps_bound(&alphas, &gaps, 2.0, 3.0, 1.5, 0.7);
        let b = type1_eps_bound_polynomial(k, 2.0, 3.0, 1.5, 0.7, (&e - &e0).norm());
        assert_abs_diff_eq!(a, b, epsilon = 1e-10 * b);
    }
}
