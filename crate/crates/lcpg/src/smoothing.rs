//! Nesterov smoothing of `g(x) = max_{y∈Y} ⟨Ax, y⟩ − p(y)`.
//!
//! The smoothed function is `g^β(x) = max_{y∈Y} ⟨Ax, y⟩ − p(y) − (β/2)‖y − ŷ‖²`
//! and a smoothed composite is `f^β = g^β − h` with `h` convex and smooth.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::problem::{Composite, ConstrainedProblem, SmoothOracle};
use crate::prox::{dist_to_interval, ProxTerm, Simple};
use crate::{Error, Result, Vector};

#[derive(Clone, Debug, PartialEq)]
pub enum FeasibleSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { radius: f64 },
    Simplex,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Penalty {
    Zero,
    Linear(Vector),
    /// `½ Σⱼ qⱼ yⱼ²` with `q ≥ 0`.
    DiagQuadratic(Vector),
}

#[derive(Clone, Debug)]
pub struct MaxStructure {
    pub a: DMatrix<f64>,
    pub set: FeasibleSet,
    pub p: Penalty,
    pub y_hat: Vector,
    pub d_y: f64,
    pub a_norm: f64,
}

impl MaxStructure {
    pub fn new(a: DMatrix<f64>, set: FeasibleSet, p: Penalty) -> Result<Self> {
        let k = a.nrows();
        let (y_hat, d_y) = match &set {
            FeasibleSet::Box { lo, hi } => {
                if lo.len() != k || hi.len() != k || lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::Config("box bounds malformed".into()));
                }
                let y = Vector::from_iterator(k, lo.iter().zip(hi).map(|(&l, &h)| 0f64.clamp(l, h)));
                let d2: f64 = (0..k).map(|j| (lo[j] - y[j]).powi(2).max((hi[j] - y[j]).powi(2))).sum();
                (y, d2.sqrt())
            }
            FeasibleSet::Ball { radius } => (Vector::zeros(k), *radius),
            FeasibleSet::Simplex => {
                if k == 0 {
                    return Err(Error::Config("empty simplex".into()));
                }
                (Vector::from_element(k, 1.0 / k as f64), (1.0 - 1.0 / k as f64).sqrt())
            }
        };
        match &p {
            Penalty::Zero => {}
            Penalty::Linear(c) | Penalty::DiagQuadratic(c) if c.len() != k => {
                return Err(Error::Dimension("penalty length differs from rows of A".into()))
            }
            Penalty::DiagQuadratic(q) if q.iter().any(|&t| t < 0.0) => {
                return Err(Error::Config("quadratic penalty must be convex".into()))
            }
            _ => {}
        }
        let a_norm = if a.is_empty() { 0.0 } else { a.singular_values().max() };
        Ok(MaxStructure { a, set, p, y_hat, d_y, a_norm })
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn penalty(&self, y: &Vector) -> f64 {
        match &self.p {
            Penalty::Zero => 0.0,
            Penalty::Linear(c) => c.dot(y),
            Penalty::DiagQuadratic(q) => 0.5 * q.iter().zip(y.iter()).map(|(q, y)| q * y * y).sum::<f64>(),
        }
    }

    /// Unique maximizer of `⟨w, y⟩ − p(y) − (β/2)‖y − ŷ‖²` over `Y`.
    pub fn maximizer(&self, w: &Vector, beta: f64) -> Result<Vector> {
        if beta.is_infinite() {
            return Ok(self.y_hat.clone());
        }
        let k = w.len();
        let (lin, curv) = match &self.p {
            Penalty::Zero => (w + &self.y_hat * beta, Vector::from_element(k, beta)),
            Penalty::Linear(c) => (w - c + &self.y_hat * beta, Vector::from_element(k, beta)),
            Penalty::DiagQuadratic(q) => (w + &self.y_hat * beta, q.add_scalar(beta)),
        };
        match &self.set {
            FeasibleSet::Box { lo, hi } => Ok(Vector::from_fn(k, |j, _| {
                if curv[j] > 0.0 {
                    (lin[j] / curv[j]).clamp(lo[j], hi[j])
                } else if lin[j] > 0.0 {
                    hi[j]
                } else if lin[j] < 0.0 {
                    lo[j]
                } else {
                    self.y_hat[j]
                }
            })),
            set => {
                let c0 = curv.get(0).copied().unwrap_or(beta);
                if curv.iter().any(|&c| c != c0) {
                    return Err(Error::Unsupported(
                        "non-uniform quadratic penalty over a ball or simplex".into(),
                    ));
                }
                if c0 > 0.0 {
                    return Ok(match set {
                        FeasibleSet::Ball { radius } => crate::prox::project_ball(&(lin / c0), *radius, &[]),
                        _ => project_simplex(&(lin / c0)),
                    });
                }
                Ok(match set {
                    FeasibleSet::Ball { radius } => {
                        let n = lin.norm();
                        if n == 0.0 {
                            Vector::zeros(k)
                        } else {
                            lin * (*radius / n)
                        }
                    }
                    _ => {
                        let j = lin.argmax().0;
                        Vector::from_fn(k, |i, _| if i == j { 1.0 } else { 0.0 })
                    }
                })
            }
        }
    }

    /// `(g^β(x), ∇g^β(x))`; `β = 0` gives the exact value and a subgradient.
    pub fn eval(&self, x: &Vector, beta: f64) -> Result<(f64, Vector)> {
        let w = &self.a * x;
        let y = self.maximizer(&w, beta)?;
        let mut v = w.dot(&y) - self.penalty(&y);
        if beta > 0.0 && beta.is_finite() {
            v -= 0.5 * beta * (&y - &self.y_hat).norm_squared();
        }
        Ok((v, self.a.transpose() * y))
    }
}

/// Euclidean projection onto the unit simplex by the sorted-threshold rule.
pub fn project_simplex(v: &Vector) -> Vector {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        cum += v[i];
        let t = (cum - 1.0) / (r + 1) as f64;
        if v[i] - t > 0.0 {
            tau = t;
        }
    }
    v.map(|t| (t - tau).max(0.0))
}

/// `β = 2ν / D_Y²`, or `+∞` when `Y` is a single point.
pub fn choose_beta(nu: f64, d_y: f64) -> Result<f64> {
    if nu <= 0.0 {
        return Err(Error::Config("ν must be positive".into()));
    }
    if d_y == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 * nu / (d_y * d_y))
}

/// `f^β = g^β − h`.
#[derive(Clone)]
pub struct SmoothedComposite {
    pub structure: MaxStructure,
    pub beta: f64,
    pub h: Option<Arc<dyn SmoothOracle>>,
    pub l_h: f64,
}

impl std::fmt::Debug for SmoothedComposite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothedComposite")
            .field("structure", &self.structure)
            .field("beta", &self.beta)
            .field("l_h", &self.l_h)
            .finish()
    }
}

impl SmoothedComposite {
    pub fn new(structure: MaxStructure, beta: f64, h: Option<Arc<dyn SmoothOracle>>, l_h: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Config("β must be positive".into()));
        }
        structure.maximizer(&Vector::zeros(structure.a.nrows()), beta)?;
        Ok(SmoothedComposite { structure, beta, h, l_h })
    }

    /// `‖A‖²/β`.
    pub fn l_g(&self) -> f64 {
        if self.beta.is_infinite() {
            0.0
        } else {
            self.structure.a_norm.powi(2) / self.beta
        }
    }

    /// `max{‖A‖²/β, L_h}`.
    pub fn lipschitz(&self) -> f64 {
        self.l_g().max(self.l_h)
    }

    pub fn nu(&self) -> f64 {
        if self.beta.is_infinite() {
            0.0
        } else {
            self.beta * self.structure.d_y.powi(2) / 2.0
        }
    }

    pub fn smoothed_eval(&self, x: &Vector) -> (f64, Vector) {
        let (mut v, mut g) = self.structure.eval(x, self.beta).expect("validated at construction");
        if let Some(h) = &self.h {
            let (hv, hg) = h.eval(x);
            v -= hv;
            g -= hg;
        }
        (v, g)
    }

    /// Unsmoothed `g(x) − h(x)`.
    pub fn exact_value(&self, x: &Vector) -> f64 {
        let g = self.structure.eval(x, 0.0).expect("validated at construction").0;
        g - self.h.as_ref().map_or(0.0, |h| h.value(x))
    }
}

impl SmoothOracle for SmoothedComposite {
    fn dim(&self) -> usize {
        self.structure.dim()
    }

    fn eval(&self, x: &Vector) -> (f64, Vector) {
        self.smoothed_eval(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sandwich {
    pub g_beta: f64,
    pub gap: f64,
    pub pass: bool,
}

pub fn sandwich_check(sc: &SmoothedComposite, x: &Vector) -> Result<Sandwich> {
    let (gb, _) = sc.structure.eval(x, sc.beta)?;
    let (g, _) = sc.structure.eval(x, 0.0)?;
    let gap = g - gb;
    let pass = gap >= -1e-12 && gap <= sc.nu() + 1e-9;
    Ok(Sandwich { g_beta: gb, gap, pass })
}

/// Checks `g(z) ≥ g(x) + ⟨v, z − x⟩ − ν` for every probe.
pub fn nu_subgradient_inequality(
    s: &MaxStructure,
    x: &Vector,
    v: &Vector,
    nu: f64,
    probes: &[Vector],
) -> Result<bool> {
    let gx = s.eval(x, 0.0)?.0;
    for z in probes {
        let gz = s.eval(z, 0.0)?.0;
        if gz < gx + v.dot(&(z - x)) - nu - 1e-9 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Checks that `∇g^β(x)` is a `ν`-subgradient of `g` at `x` with `ν = βD_Y²/2`.
pub fn nu_subgradient_check(sc: &SmoothedComposite, x: &Vector, probes: &[Vector]) -> Result<bool> {
    let (_, v) = sc.structure.eval(x, sc.beta)?;
    nu_subgradient_inequality(&sc.structure, x, &v, sc.nu(), probes)
}

/// Constraints `ψᵢ = gᵢ − hᵢ + χᵢ ≤ ηᵢ` with smoothed surrogates `fᵢ^β + χᵢ`.
#[derive(Clone, Debug)]
pub struct SmoothedProblem {
    pub objective: Composite,
    pub constraints: Vec<(SmoothedComposite, ProxTerm)>,
    pub eta: Vector,
}

impl SmoothedProblem {
    pub fn original_constraints(&self, x: &Vector) -> Vector {
        Vector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|(sc, chi)| sc.exact_value(x) + chi.value(x)),
        )
    }

    /// The smoothed problem as a [`ConstrainedProblem`] for the drivers.
    pub fn to_problem(&self, x0: Vector, eta0: Vector) -> Result<ConstrainedProblem> {
        let cons = self
            .constraints
            .iter()
            .map(|(sc, chi)| Composite::new(Arc::new(sc.clone()), chi.clone(), sc.lipschitz()))
            .collect();
        ConstrainedProblem::new(self.objective.clone(), cons, self.eta.clone(), eta0, x0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Type3Report {
    pub stationarity: f64,
    pub complementarity: f64,
    pub feasibility: f64,
    /// `max{ε + ‖λ‖₁ν, mν}` evaluated with `ε` = the stationarity residual.
    pub eps_bar: f64,
}

pub fn type3_kkt_report(sp: &SmoothedProblem, x: &Vector, lambda: &Vector, nu: f64) -> Result<Type3Report> {
    let m = sp.constraints.len();
    if lambda.len() != m || lambda.iter().any(|&l| l < 0.0) {
        return Err(Error::Config("λ must be nonnegative with one entry per constraint".into()));
    }
    let mut g = sp.objective.smooth.grad(x);
    let mut parts: Vec<(f64, &ProxTerm)> = vec![(1.0, &sp.objective.prox)];
    for (i, (sc, chi)) in sp.constraints.iter().enumerate() {
        g.axpy(lambda[i], &sc.smoothed_eval(x).1, 1.0);
        parts.push((lambda[i], chi));
    }
    let s = Simple::combine(&parts)?;
    let mut st2 = 0.0;
    for j in 0..x.len() {
        let (lo, hi) = crate::prox::simple_interval(&s, x[j])?;
        st2 += dist_to_interval(g[j], lo, hi).powi(2);
    }
    let psi = sp.original_constraints(x);
    let diff = &psi - &sp.eta;
    let complementarity = lambda.iter().zip(diff.iter()).map(|(l, d)| l * d.abs()).sum();
    let feasibility = diff.iter().map(|d| d.max(0.0)).sum();
    let stationarity = st2.sqrt();
    let eps_bar = (stationarity + crate::linalg::l1(lambda) * nu).max(m as f64 * nu);
    Ok(Type3Report { stationarity, complementarity, feasibility, eps_bar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{check_lipschitz, SquaredDistance};
    use approx::assert_abs_diff_eq;

    fn huber(d: usize, beta: f64) -> SmoothedComposite {
        let s = MaxStructure::new(
            DMatrix::identity(d, d),
            FeasibleSet::Box { lo: vec![-1.0; d], hi: vec![1.0; d] },
            Penalty::Zero,
        )
        .unwrap();
        SmoothedComposite::new(s, beta, None, 0.0).unwrap()
    }

    fn x1(t: f64) -> Vector {
        Vector::from_element(1, t)
    }

    #[test]
    fn choose_beta_examples() {
        assert_eq!(choose_beta(0.5, 1.0).unwrap(), 1.0);
        assert_eq!(choose_beta(1.0, 2.0).unwrap(), 0.5);
        assert!(choose_beta(1.0, 0.0).unwrap().is_infinite());
    }

    #[test]
    fn huber_values() {
        let h = huber(1, 1.0);
        assert_eq!(h.smoothed_eval(&x1(2.0)), (1.5, x1(1.0)));
        assert_eq!(h.smoothed_eval(&x1(0.0)), (0.0, x1(0.0)));
        assert_eq!(h.smoothed_eval(&x1(0.5)), (0.125, x1(0.5)));
    }

    #[test]
    fn huber_sandwich_and_monotonicity() {
        let h = huber(1, 1.0);
        let s = sandwich_check(&h, &x1(2.0)).unwrap();
        assert!(s.pass);
        assert_abs_diff_eq!(s.gap, 0.5, epsilon = 1e-15);
        assert_eq!(sandwich_check(&h, &x1(0.0)).unwrap().gap, 0.0);
        let h2 = huber(1, 0.5);
        assert_eq!(h2.smoothed_eval(&x1(2.0)).0, 1.75);
    }

    #[test]
    fn huber_nu_subgradient() {
        let h = huber(1, 1.0);
        let probes: Vec<Vector> = (0..=100).map(|i| x1(-5.0 + 0.1 * i as f64)).collect();
        assert!(nu_subgradient_check(&h, &x1(2.0), &probes).unwrap());
        let v = h.smoothed_eval(&x1(2.0)).1;
        assert!(nu_subgradient_inequality(&h.structure, &x1(2.0), &v, 10.0 * h.nu(), &probes).unwrap());
        let doubled = v * 2.0;
        assert!(!nu_subgradient_inequality(&h.structure, &x1(2.0), &doubled, h.nu(), &[x1(5.0)]).unwrap());
    }

    #[test]
    fn huber_gradient_is_one_lipschitz() {
        let h = huber(1, 1.0);
        let c = check_lipschitz(&h, 1.0, 2000, 3.0, &x1(0.0), 5).unwrap();
        assert!(c.pass, "{c:?}");
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&Vector::from_vec(vec![0.5, 0.5, 0.5]));
        assert_abs_diff_eq!(p, Vector::from_element(3, 1.0 / 3.0), epsilon = 1e-15);
        let p = project_simplex(&Vector::from_vec(vec![2.0, 0.0, -1.0]));
        assert_eq!(p, Vector::from_vec(vec![1.0, 0.0, 0.0]));
        let p = project_simplex(&Vector::from_vec(vec![0.9, 0.6, -3.0]));
        assert_abs_diff_eq!(p, Vector::from_vec(vec![0.65, 0.35, 0.0]), epsilon = 1e-12);
    }

    fn structures() -> Vec<MaxStructure> {
        let a = DMatrix::from_fn(3, 4, |i, j| ((i * 5 + j * 2) as f64 * 0.7).sin());
        vec![
            MaxStructure::new(a.clone(), FeasibleSet::Box { lo: vec![-1.0, 0.0, -2.0], hi: vec![1.0, 3.0, 0.5] }, Penalty::DiagQuadratic(Vector::from_vec(vec![0.5, 0.0, 2.0]))).unwrap(),
            MaxStructure::new(a.clone(), FeasibleSet::Ball { radius: 1.5 }, Penalty::Linear(Vector::from_vec(vec![0.1, -0.3, 0.2]))).unwrap(),
            MaxStructure::new(a, FeasibleSet::Simplex, Penalty::Zero).unwrap(),
        ]
    }

    #[test]
    fn gradients_match_finite_differences() {
        for s in structures() {
            let h: Arc<dyn SmoothOracle> = Arc::new(SquaredDistance { scale: 0.3, a: Vector::zeros(4), c: 0.0 });
            let sc = SmoothedComposite::new(s, 0.7, Some(h), 0.3).unwrap();
            for t in 0..5 {
                let x = Vector::from_fn(4, |j, _| ((t * 4 + j) as f64 * 1.3).cos() * 2.0);
                let g = sc.smoothed_eval(&x).1;
                for j in 0..4 {
                    let mut e = Vector::zeros(4);
                    e[j] = 1e-6;
                    let fd = (sc.smoothed_eval(&(&x + &e)).0 - sc.smoothed_eval(&(&x - &e)).0) / 2e-6;
                    assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0), "{fd} vs {}", g[j]);
                }
            }
        }
    }

    #[test]
    fn exact_evaluation_bounds_smoothed() {
        for s in structures() {
            let sc = SmoothedComposite::new(s, 0.4, None, 0.0).unwrap();
            for t in 0..20 {
                let x = Vector::from_fn(4, |j, _| ((t * 4 + j) as f64 * 0.9).sin() * 3.0);
                assert!(sandwich_check(&sc, &x).unwrap().pass);
            }
        }
    }

    #[test]
    fn type3_report_pieces() {
        let obj = Composite::new(Arc::new(SquaredDistance { scale: 1.0, a: Vector::zeros(1), c: 0.0 }), ProxTerm::Zero, 1.0);
        let sp = SmoothedProblem { objective: obj, constraints: vec![(huber(1, 1.0), ProxTerm::Zero)], eta: x1(1.0) };
        let r = type3_kkt_report(&sp, &x1(0.0), &x1(0.0), 0.5).unwrap();
        assert_eq!((r.stationarity, r.complementarity, r.feasibility), (0.0, 0.0, 0.0));
        let r = type3_kkt_report(&sp, &x1(1.3), &x1(0.0), 0.5).unwrap();
        assert_abs_diff_eq!(r.feasibility, 0.3, epsilon = 1e-12);
    }
}
