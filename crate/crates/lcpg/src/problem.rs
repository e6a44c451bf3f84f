//! Smooth oracles, composite functions and the constrained problem type.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::check_len;
use crate::prox::{dist_to_interval, scad_grad, scad_value, simple_interval, ProxTerm, ScadParams, Simple};
use crate::{par, Error, Result, Vector};

/// A differentiable function, optionally given as a finite sum `(1/n) Σ Fᵢ`.
pub trait SmoothOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &Vector) -> (f64, Vector);

    fn value(&self, x: &Vector) -> f64 {
        self.eval(x).0
    }

    fn grad(&self, x: &Vector) -> Vector {
        self.eval(x).1
    }

    /// Number of components; 0 for a monolithic oracle.
    fn n_components(&self) -> usize {
        0
    }

    /// Value and gradient of component `i`. Only called when `n_components() > 0`.
    fn component_eval(&self, _i: usize, _x: &Vector) -> (f64, Vector) {
        panic!("component_eval called on a monolithic oracle")
    }

    /// Adds `scale · ∇Fᵢ(x)` into `out`.
    fn add_component_grad(&self, i: usize, x: &Vector, scale: f64, out: &mut Vector) {
        out.axpy(scale, &self.component_eval(i, x).1, 1.0);
    }
}

/// Mean of component values and gradients, reduced deterministically.
pub fn finite_sum_eval<O: SmoothOracle + ?Sized>(o: &O, x: &Vector) -> (f64, Vector) {
    let n = o.n_components();
    let d = o.dim();
    let packed = par::chunked_sum(n, d + 1, |i, acc| {
        let (v, g) = o.component_eval(i, x);
        acc[0] += v;
        acc.rows_mut(1, d).axpy(1.0, &g, 1.0);
    });
    let inv = 1.0 / n as f64;
    (packed[0] * inv, packed.rows(1, d) * inv)
}

/// `½xᵀQx + bᵀx + c` with symmetric `Q`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub q: DMatrix<f64>,
    pub b: Vector,
    pub c: f64,
}

impl SmoothOracle for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, x: &Vector) -> (f64, Vector) {
        let qx = &self.q * x;
        (0.5 * x.dot(&qx) + self.b.dot(x) + self.c, qx + &self.b)
    }
}

/// `(s/2)‖x − a‖² + c`.
#[derive(Clone, Debug)]
pub struct SquaredDistance {
    pub scale: f64,
    pub a: Vector,
    pub c: f64,
}

impl SmoothOracle for SquaredDistance {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn eval(&self, x: &Vector) -> (f64, Vector) {
        let r = x - &self.a;
        (0.5 * self.scale * r.norm_squared() + self.c, r * self.scale)
    }
}

/// `⟨g, x⟩ + c`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub g: Vector,
    pub c: f64,
}

impl SmoothOracle for Affine {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn eval(&self, x: &Vector) -> (f64, Vector) {
        (self.g.dot(x) + self.c, self.g.clone())
    }
}

/// The concave smooth part `−Σⱼ h_{β,θ}(xⱼ)` of a SCAD constraint.
#[derive(Clone, Debug)]
pub struct NegScad {
    pub params: ScadParams,
    pub dim: usize,
}

impl SmoothOracle for NegScad {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &Vector) -> (f64, Vector) {
        let v = -x.iter().map(|&u| scad_value(u, self.params)).sum::<f64>();
        (v, x.map(|u| -scad_grad(u, self.params)))
    }
}

/// Finite sum of least-squares terms `½(aᵢᵀx − yᵢ)²`, stored row-wise.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub a: DMatrix<f64>,
    pub y: Vector,
}

impl SmoothOracle for LeastSquares {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn eval(&self, x: &Vector) -> (f64, Vector) {
        finite_sum_eval(self, x)
    }

    fn n_components(&self) -> usize {
        self.a.nrows()
    }

    fn component_eval(&self, i: usize, x: &Vector) -> (f64, Vector) {
        let row = self.a.row(i);
        let r = row.dot(&x.transpose()) - self.y[i];
        (0.5 * r * r, row.transpose() * r)
    }

    fn add_component_grad(&self, i: usize, x: &Vector, scale: f64, out: &mut Vector) {
        let row = self.a.row(i);
        let r = row.dot(&x.transpose()) - self.y[i];
        out.axpy(scale * r, &row.transpose(), 1.0);
    }
}

/// `ψ = f + χ` with `∇f` Lipschitz with modulus `lipschitz`.
#[derive(Clone)]
pub struct Composite {
    pub smooth: Arc<dyn SmoothOracle>,
    pub prox: ProxTerm,
    pub lipschitz: f64,
}

impl std::fmt::Debug for Composite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Composite")
            .field("dim", &self.smooth.dim())
            .field("prox", &self.prox)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Composite {
    pub fn new(smooth: Arc<dyn SmoothOracle>, prox: ProxTerm, lipschitz: f64) -> Self {
        Composite { smooth, prox, lipschitz }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        self.smooth.value(x) + self.prox.value(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexityMode {
    Nonconvex,
    Convex,
    StronglyConvex,
}

#[derive(Clone, Debug)]
pub struct ConstrainedProblem {
    pub objective: Composite,
    pub constraints: Vec<Composite>,
    pub eta: Vector,
    pub eta0: Vector,
    pub x0: Vector,
    pub mu0: f64,
    pub mode: ConvexityMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    /// `ηᵢ⁰ − ψᵢ(x⁰)`.
    pub margins: Vec<f64>,
    pub levels_ordered: bool,
    pub pass: bool,
}

impl ConstrainedProblem {
    /// Builds a problem and rejects it unless `ψ(x⁰) < η⁰ < η` holds strictly.
    pub fn new(
        objective: Composite,
        constraints: Vec<Composite>,
        eta: Vector,
        eta0: Vector,
        x0: Vector,
    ) -> Result<Self> {
        let p = Self::new_unchecked(objective, constraints, eta, eta0, x0)?;
        let rep = validate_strict_feasibility(&p)?;
        if !rep.pass {
            let worst = rep.margins.iter().copied().fold(f64::INFINITY, f64::min);
            return Err(Error::Infeasible { worst: -worst.min(0.0) });
        }
        Ok(p)
    }

    /// Builds a problem checking only dimensions.
    pub fn new_unchecked(
        objective: Composite,
        constraints: Vec<Composite>,
        eta: Vector,
        eta0: Vector,
        x0: Vector,
    ) -> Result<Self> {
        let d = objective.smooth.dim();
        let m = constraints.len();
        check_len(&x0, d, "x0")?;
        check_len(&eta, m, "eta")?;
        check_len(&eta0, m, "eta0")?;
        for (i, c) in constraints.iter().enumerate() {
            if c.smooth.dim() != d {
                return Err(Error::Dimension(format!("constraint {i} has dimension {}", c.smooth.dim())));
            }
        }
        let positive = |l: f64| l.is_finite() && l >= 0.0;
        if !positive(objective.lipschitz) || objective.lipschitz == 0.0 {
            return Err(Error::Config("objective Lipschitz constant must be positive".into()));
        }
        if constraints.iter().any(|c| !positive(c.lipschitz)) {
            return Err(Error::Config("constraint Lipschitz constants must be nonnegative".into()));
        }
        Ok(ConstrainedProblem {
            objective,
            constraints,
            eta,
            eta0,
            x0,
            mu0: 0.0,
            mode: ConvexityMode::Nonconvex,
        })
    }

    pub fn with_convexity(mut self, mode: ConvexityMode, mu0: f64) -> Self {
        self.mode = mode;
        self.mu0 = mu0;
        self
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn l0(&self) -> f64 {
        self.objective.lipschitz
    }

    /// Constraint curvature vector `L = (L₁, …, L_m)`.
    pub fn curvatures(&self) -> Vector {
        Vector::from_iterator(self.m(), self.constraints.iter().map(|c| c.lipschitz))
    }
}

pub fn validate_strict_feasibility(p: &ConstrainedProblem) -> Result<FeasibilityReport> {
    let psi = evaluate_constraints(p, &p.x0)?;
    let margins: Vec<f64> = (0..p.m()).map(|i| p.eta0[i] - psi[i]).collect();
    let levels_ordered = (0..p.m()).all(|i| p.eta0[i] < p.eta[i]);
    let pass = levels_ordered && margins.iter().all(|&t| t > 0.0);
    Ok(FeasibilityReport { margins, levels_ordered, pass })
}

pub fn evaluate_constraints(p: &ConstrainedProblem, x: &Vector) -> Result<Vector> {
    check_len(x, p.dim(), "x")?;
    Ok(Vector::from_iterator(p.m(), p.constraints.iter().map(|c| c.value(x))))
}

/// `dist(0, ∂ₓ𝓛(x, λ))` with `𝓛 = ψ₀ + Σ λᵢ(ψᵢ − ηᵢ)`; every χ must be separable.
pub fn kkt_residual_exact(p: &ConstrainedProblem, x: &Vector, lambda: &Vector) -> Result<f64> {
    check_len(x, p.dim(), "x")?;
    check_len(lambda, p.m(), "lambda")?;
    let mut g = p.objective.smooth.grad(x);
    let mut parts = vec![(1.0, &p.objective.prox)];
    for (c, &l) in p.constraints.iter().zip(lambda.iter()) {
        if l != 0.0 {
            g += c.smooth.grad(x) * l;
        }
        parts.push((l, &c.prox));
    }
    let s = Simple::combine(&parts)?;
    let mut acc = 0.0;
    for j in 0..x.len() {
        let (lo, hi) = simple_interval(&s, x[j])?;
        acc += dist_to_interval(g[j], lo, hi).powi(2);
    }
    Ok(acc.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzCheck {
    pub pass: bool,
    pub worst_ratio: f64,
}

/// Probabilistic test helper: the largest observed gradient-difference ratio over
/// random pairs in a ball around `center`.
pub fn check_lipschitz(
    oracle: &dyn SmoothOracle,
    l: f64,
    n_samples: usize,
    radius: f64,
    center: &Vector,
    seed: u64,
) -> Result<LipschitzCheck> {
    if l <= 0.0 {
        return Err(Error::Config("L must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = oracle.dim();
    let draw = |rng: &mut ChaCha8Rng| loop {
        let z = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        if z.norm() <= 1.0 {
            return center + z * radius;
        }
    };
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < n_samples {
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let dist = (&x - &y).norm();
        if dist < 1e-12 {
            continue;
        }
        worst = worst.max((oracle.grad(&x) - oracle.grad(&y)).norm() / dist);
        done += 1;
    }
    Ok(LipschitzCheck { pass: worst <= l * (1.0 + 1e-6), worst_ratio: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scad_problem(eta: f64, eta0: f64) -> Result<ConstrainedProblem> {
        let p = ScadParams::new(1.0, 5.0).unwrap();
        let obj = Composite::new(
            Arc::new(Affine { g: Vector::from_vec(vec![-1.0, 0.0]), c: 7.0 }),
            ProxTerm::Zero,
            1.0,
        );
        let con = Composite::new(Arc::new(NegScad { params: p, dim: 2 }), ProxTerm::l1(1.0), p.smoothness());
        ConstrainedProblem::new(obj, vec![con], Vector::from_vec(vec![eta]), Vector::from_vec(vec![eta0]), Vector::zeros(2))
    }

    fn const_constraint(v: f64, eta: f64, eta0: f64) -> ConstrainedProblem {
        let obj = Composite::new(Arc::new(SquaredDistance { scale: 1.0, a: Vector::zeros(1), c: 0.0 }), ProxTerm::Zero, 1.0);
        let con = Composite::new(Arc::new(Affine { g: Vector::zeros(1), c: v }), ProxTerm::Zero, 0.0);
        ConstrainedProblem::new_unchecked(obj, vec![con], Vector::from_vec(vec![eta]), Vector::from_vec(vec![eta0]), Vector::zeros(1))
            .unwrap()
    }

    #[test]
    fn feasibility_reports() {
        let r = validate_strict_feasibility(&const_constraint(-10.0, 0.0, -5.0)).unwrap();
        assert!(r.pass);
        assert_eq!(r.margins, vec![5.0]);
        let r = validate_strict_feasibility(&const_constraint(-10.0, 0.0, -11.0)).unwrap();
        assert!(!r.pass);
        assert_eq!(r.margins, vec![-1.0]);
        assert!(scad_problem(3.0, 1.0).is_ok());
        assert!(matches!(scad_problem(3.0, 4.0), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let obj = Composite::new(Arc::new(SquaredDistance { scale: 1.0, a: Vector::zeros(2), c: 0.0 }), ProxTerm::Zero, 1.0);
        let r = ConstrainedProblem::new_unchecked(obj, vec![], Vector::zeros(0), Vector::zeros(0), Vector::zeros(3));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn scad_constraint_values() {
        let p = scad_problem(3.0, 1.0).unwrap();
        let at = |a: f64, b: f64| evaluate_constraints(&p, &Vector::from_vec(vec![a, b])).unwrap()[0];
        assert_eq!(at(5.0, 0.0), 3.0);
        assert_eq!(at(3.0, 0.0), 2.5);
        assert_eq!(at(0.0, 0.0), 0.0);
    }

    #[test]
    fn lipschitz_helper() {
        let f = SquaredDistance { scale: 1.0, a: Vector::zeros(3), c: 0.0 };
        let c = check_lipschitz(&f, 1.0, 50, 2.0, &Vector::zeros(3), 1).unwrap();
        assert!(c.pass);
        assert_relative_eq!(c.worst_ratio, 1.0, epsilon = 1e-12);
        assert!(!check_lipschitz(&f, 0.5, 50, 2.0, &Vector::zeros(3), 1).unwrap().pass);
    }

    #[test]
    fn finite_sum_matches_component_mean() {
        let a = DMatrix::from_fn(300, 4, |i, j| ((i * 7 + j * 3) as f64).sin());
        let y = Vector::from_fn(300, |i, _| (i as f64).cos());
        let ls = LeastSquares { a, y };
        let x = Vector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let (v, g) = ls.eval(&x);
        let mut vm = 0.0;
        let mut gm = Vector::zeros(4);
        for i in 0..300 {
            let (vi, gi) = ls.component_eval(i, &x);
            vm += vi;
            gm += gi;
        }
        assert_relative_eq!(v, vm / 300.0, max_relative = 1e-10);
        assert_relative_eq!(g, gm / 300.0, max_relative = 1e-10);
    }
}
