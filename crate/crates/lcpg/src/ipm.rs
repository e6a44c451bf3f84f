//! Path-following barrier method for diagonal QCQPs
//!
//! ```text
//! min  (L₀/2)‖x − a₀‖²   s.t.  (Lᵢ/2)‖x − aᵢ‖² − bᵢ ≤ 0,  i = 1..m
//! ```
//!
//! solved in the epigraph variable `u = (η, x)` with an artificial ball
//! `½‖u‖² ≤ ½R²`. Newton systems have the form `NNᵀ + Γ` with `Γ` diagonal and
//! are solved through Sherman-Morrison-Woodbury when `N` has fewer columns
//! than rows.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagConstraint {
    pub l: f64,
    pub a: Vector,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagQcqp {
    pub l0: f64,
    pub a0: Vector,
    pub constraints: Vec<DiagConstraint>,
}

impl DiagQcqp {
    pub fn new(l0: f64, a0: Vector, constraints: Vec<DiagConstraint>) -> Result<Self> {
        let d = a0.len();
        if !(l0 > 0.0) || constraints.iter().any(|c| !(c.l > 0.0)) {
            return Err(Error::Config("curvatures of a diagonal QCQP must be positive".into()));
        }
        if constraints.iter().any(|c| c.a.len() != d) {
            return Err(Error::Dimension("constraint centre length differs from a0".into()));
        }
        Ok(DiagQcqp { l0, a0, constraints })
    }

    pub fn dim(&self) -> usize {
        self.a0.len()
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn g0(&self, x: &Vector) -> f64 {
        0.5 * self.l0 * (x - &self.a0).norm_squared()
    }

    pub fn gi(&self, i: usize, x: &Vector) -> f64 {
        let c = &self.constraints[i];
        0.5 * c.l * (x - &c.a).norm_squared() - c.b
    }

    pub fn constraint_values(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.m(), (0..self.m()).map(|i| self.gi(i, x)))
    }

    /// `‖∇g₀(x) + Σ λᵢ∇gᵢ(x)‖`.
    pub fn stationarity(&self, x: &Vector, lambda: &Vector) -> f64 {
        let mut g = (x - &self.a0) * self.l0;
        for (i, c) in self.constraints.iter().enumerate() {
            g.axpy(lambda[i] * c.l, &(x - &c.a), 1.0);
        }
        g.norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpmOptions {
    pub kappa: f64,
    pub gamma: f64,
    pub tau0: f64,
    /// Lower bound on the artificial ball radius.
    pub r_config: f64,
    pub max_newton_per_call: usize,
    pub max_outer: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions { kappa: 0.25, gamma: 0.25, tau0: 1.0, r_config: 0.0, max_newton_per_call: 200, max_outer: 20_000 }
    }
}

#[derive(Clone, Debug)]
pub struct EpigraphForm {
    pub q: DiagQcqp,
    pub r: f64,
}

/// Builds the epigraph lift and the interior start `û = (g₀(x̂) + δ, x̂)`.
pub fn build_epigraph(q: &DiagQcqp, x_hat: &Vector, delta: f64, r_config: f64) -> Result<(EpigraphForm, Vector)> {
    if x_hat.len() != q.dim() {
        return Err(Error::Dimension("x_hat".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Config("δ must be positive".into()));
    }
    let worst = (0..q.m()).map(|i| q.gi(i, x_hat) + delta).fold(f64::NEG_INFINITY, f64::max);
    if worst > 0.0 {
        return Err(Error::Infeasible { worst });
    }
    let d = q.dim();
    let mut u = Vector::zeros(d + 1);
    u[0] = q.g0(x_hat) + delta;
    u.rows_mut(1, d).copy_from(x_hat);
    let reach = q
        .constraints
        .iter()
        .map(|c| c.a.norm() + (2.0 * c.b.max(0.0) / c.l).sqrt())
        .fold(0.0, f64::max);
    let r = r_config.max(4.0 * (u.norm() + q.a0.norm() + reach));
    Ok((EpigraphForm { q: q.clone(), r }, u))
}

impl EpigraphForm {
    pub fn upsilon(&self) -> f64 {
        (self.q.m() + 2) as f64
    }

    fn x<'a>(&self, u: &'a Vector) -> nalgebra::DVectorView<'a, f64> {
        u.rows(1, self.q.dim())
    }

    /// Lifted constraint values `g̃₀, …, g̃_{m+1}`.
    pub fn lifted(&self, u: &Vector) -> Vector {
        let m = self.q.m();
        let x = self.x(u).into_owned();
        let mut g = Vector::zeros(m + 2);
        g[0] = self.q.g0(&x) - u[0];
        for i in 0..m {
            g[i + 1] = self.q.gi(i, &x);
        }
        g[m + 1] = 0.5 * u.norm_squared() - 0.5 * self.r * self.r;
        g
    }

    pub fn is_interior(&self, u: &Vector) -> bool {
        self.lifted(u).iter().all(|&t| t < 0.0)
    }

    /// `φ(u) = −Σ log(−g̃ᵢ(u))`.
    pub fn barrier(&self, u: &Vector) -> Result<f64> {
        let g = self.lifted(u);
        if g.iter().any(|&t| !(t < 0.0)) {
            return Err(Error::InteriorViolation);
        }
        Ok(-g.iter().map(|t| (-t).ln()).sum::<f64>())
    }

    /// `(∇φ(u), NNᵀ + Γ)`. Columns of `N` are `θᵢ∇g̃ᵢ(u)`.
    pub fn barrier_oracle(&self, u: &Vector) -> Result<(Vector, NewtonSystem)> {
        let g = self.lifted(u);
        if g.iter().any(|&t| !(t < 0.0)) {
            return Err(Error::InteriorViolation);
        }
        let d = self.q.dim();
        let m = self.q.m();
        let theta = g.map(|t| -1.0 / t);
        let x = self.x(u);
        let mut n = DMatrix::zeros(d + 1, m + 2);
        n[(0, 0)] = -theta[0];
        n.view_mut((1, 0), (d, 1)).copy_from(&((x - &self.q.a0) * (theta[0] * self.q.l0)));
        let mut curv = theta[0] * self.q.l0 + theta[m + 1];
        for (i, c) in self.q.constraints.iter().enumerate() {
            n.view_mut((1, i + 1), (d, 1)).copy_from(&((x - &c.a) * (theta[i + 1] * c.l)));
            curv += theta[i + 1] * c.l;
        }
        n.column_mut(m + 1).copy_from(&(u * theta[m + 1]));
        let mut gamma = Vector::from_element(d + 1, curv);
        gamma[0] = theta[m + 1];
        let grad = n.column_sum();
        Ok((grad, NewtonSystem::factor(n, gamma, Branch::Auto)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Auto,
    Smw,
    Dense,
}

/// Factored `NNᵀ + Γ`.
pub struct NewtonSystem {
    factor: Factor,
}

enum Factor {
    Smw(SmwFactor),
    Dense(Cholesky<f64, Dyn>),
}

/// SMW on the well-scaled index block `R`; the few indices `S` whose `Γ`
/// entry is tiny relative to the largest are eliminated through a dense
/// Schur complement.
struct SmwFactor {
    r: Vec<usize>,
    s: Vec<usize>,
    n_r: DMatrix<f64>,
    gamma_r: Vector,
    cap: Cholesky<f64, Dyn>,
    /// `H_RS`.
    h_rs: DMatrix<f64>,
    schur: Option<Cholesky<f64, Dyn>>,
}

/// Relative size below which a `Γ` entry is split off from the SMW block.
const SMW_SPLIT: f64 = 1e-8;

impl SmwFactor {
    fn new(n: &DMatrix<f64>, gamma: &Vector) -> Result<Self> {
        let gmax = gamma.max();
        let (s, r): (Vec<usize>, Vec<usize>) = (0..gamma.len()).partition(|&i| gamma[i] < SMW_SPLIT * gmax);
        let n_r = n.select_rows(&r);
        let gamma_r = gamma.select_rows(&r);
        let ginv_n = DMatrix::from_fn(n_r.nrows(), n_r.ncols(), |i, j| n_r[(i, j)] / gamma_r[i]);
        let mut c = n_r.transpose() * ginv_n;
        for j in 0..c.ncols() {
            c[(j, j)] += 1.0;
        }
        let cap = Cholesky::new(c).ok_or_else(|| Error::Factorization("capacitance matrix".into()))?;
        let n_s = n.select_rows(&s);
        let h_rs = &n_r * n_s.transpose();
        let mut f = SmwFactor { r, s, n_r, gamma_r, cap, h_rs, schur: None };
        if !f.s.is_empty() {
            let mut h_ss = &n_s * n_s.transpose();
            for (k, &i) in f.s.iter().enumerate() {
                h_ss[(k, k)] += gamma[i];
            }
            let mut solved = DMatrix::zeros(f.r.len(), f.s.len());
            for k in 0..f.s.len() {
                solved.set_column(k, &f.solve_rr(&f.h_rs.column(k).into_owned()));
            }
            let schur = h_ss - f.h_rs.transpose() * solved;
            f.schur = Some(Cholesky::new(schur).ok_or_else(|| Error::Factorization("Schur complement".into()))?);
        }
        Ok(f)
    }

    /// `H_RR⁻¹ rhs` by SMW.
    fn solve_rr(&self, rhs: &Vector) -> Vector {
        let z = rhs.component_div(&self.gamma_r);
        let t = self.cap.solve(&(self.n_r.transpose() * &z));
        z - (&self.n_r * t).component_div(&self.gamma_r)
    }

    fn solve(&self, rhs: &Vector) -> Vector {
        let b_r = rhs.select_rows(&self.r);
        let y_r = self.solve_rr(&b_r);
        let mut out = Vector::zeros(rhs.len());
        let x_r = match &self.schur {
            None => y_r,
            Some(ch) => {
                let b_s = rhs.select_rows(&self.s);
                let x_s = ch.solve(&(b_s - self.h_rs.transpose() * &y_r));
                for (k, &i) in self.s.iter().enumerate() {
                    out[i] = x_s[k];
                }
                y_r - self.solve_rr(&(&self.h_rs * x_s))
            }
        };
        for (k, &i) in self.r.iter().enumerate() {
            out[i] = x_r[k];
        }
        out
    }
}

impl NewtonSystem {
    pub fn factor(n: DMatrix<f64>, gamma: Vector, branch: Branch) -> Result<Self> {
        if n.nrows() != gamma.len() {
            return Err(Error::Dimension("N and Γ disagree".into()));
        }
        if gamma.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Factorization("Γ must be positive".into()));
        }
        let use_smw = match branch {
            Branch::Auto => n.ncols() < n.nrows(),
            Branch::Smw => true,
            Branch::Dense => false,
        };
        let factor = if use_smw {
            Factor::Smw(SmwFactor::new(&n, &gamma)?)
        } else {
            let mut h = &n * n.transpose();
            for i in 0..h.nrows() {
                h[(i, i)] += gamma[i];
            }
            Factor::Dense(Cholesky::new(h).ok_or_else(|| Error::Factorization("Hessian".into()))?)
        };
        Ok(NewtonSystem { factor })
    }

    pub fn solve(&self, rhs: &Vector) -> Vector {
        match &self.factor {
            Factor::Dense(ch) => ch.solve(rhs),
            Factor::Smw(f) => f.solve(rhs),
        }
    }

    pub fn is_smw(&self) -> bool {
        matches!(self.factor, Factor::Smw(_))
    }
}

/// `(NNᵀ + Γ)⁻¹ rhs`, choosing the branch by the shape of `N`.
pub fn smw_solve(n: &DMatrix<f64>, gamma: &Vector, rhs: &Vector) -> Result<Vector> {
    Ok(NewtonSystem::factor(n.clone(), gamma.clone(), Branch::Auto)?.solve(rhs))
}

/// `√(gᵀH⁻¹g)` for the objective `cᵀu + φ(u)`.
fn decrement(e: &EpigraphForm, u: &Vector, c: &Vector) -> Result<f64> {
    let (g, h) = e.barrier_oracle(u)?;
    let g = g + c;
    Ok(g.dot(&h.solve(&g)).max(0.0).sqrt())
}

/// Newton decrement of `φ_τ(u) = τη + φ(u)`.
pub fn newton_decrement(e: &EpigraphForm, u: &Vector, tau: f64) -> Result<f64> {
    decrement(e, u, &e1(u.len(), tau))
}

fn e1(n: usize, tau: f64) -> Vector {
    let mut v = Vector::zeros(n);
    v[0] = tau;
    v
}

/// Damped Newton on `cᵀu + φ(u)` until the decrement is at most `kappa`.
/// Returns the point and the number of Newton steps taken.
pub fn damped_newton_linear(
    e: &EpigraphForm,
    u0: &Vector,
    c: &Vector,
    kappa: f64,
    max_iter: usize,
) -> Result<(Vector, usize)> {
    let mut u = u0.clone();
    for it in 0..=max_iter {
        let (g, h) = e.barrier_oracle(&u)?;
        let g = g + c;
        let dir = h.solve(&g);
        let dec = g.dot(&dir).max(0.0).sqrt();
        if dec <= kappa {
            return Ok((u, it));
        }
        if it == max_iter {
            break;
        }
        let mut step = dir / (1.0 + dec);
        let mut halvings = 0;
        loop {
            let cand = &u - &step;
            if e.is_interior(&cand) {
                u = cand;
                break;
            }
            halvings += 1;
            if halvings > 60 {
                return Err(Error::Numerical("damped Newton step cannot stay interior".into()));
            }
            step *= 0.5;
        }
    }
    Err(Error::Budget(format!("damped Newton did not reach decrement {kappa}")))
}

/// Damped Newton on `φ_τ`.
pub fn damped_newton(e: &EpigraphForm, u0: &Vector, tau: f64, kappa: f64, max_iter: usize) -> Result<(Vector, usize)> {
    damped_newton_linear(e, u0, &e1(u0.len(), tau), kappa, max_iter)
}

/// Barrier multipliers normalised by the epigraph multiplier: `λᵢ = θᵢ/θ₀`.
pub fn recover_duals(e: &EpigraphForm, u: &Vector) -> Result<Vector> {
    let g = e.lifted(u);
    if g.iter().any(|&t| !(t < 0.0)) {
        return Err(Error::InteriorViolation);
    }
    let m = e.q.m();
    Ok(Vector::from_iterator(m, (1..=m).map(|i| g[0] / g[i])))
}

/// Least-squares refit of the multipliers on the constraints the path marks active.
/// The refit is kept only when it lowers the stationarity residual.
pub fn polish_duals(q: &DiagQcqp, x: &Vector, lambda: Vector) -> Vector {
    let scale = lambda.amax().max(1.0);
    let active: Vec<usize> = (0..q.m()).filter(|&i| lambda[i] > 1e-6 * scale).collect();
    if active.is_empty() {
        return lambda;
    }
    let j = DMatrix::from_fn(q.dim(), active.len(), |r, k| {
        let c = &q.constraints[active[k]];
        c.l * (x[r] - c.a[r])
    });
    let r0 = (x - &q.a0) * q.l0;
    let fit = match j.svd(true, true).solve(&(-r0), 1e-14) {
        Ok(f) => f,
        Err(_) => return lambda,
    };
    let mut refined = Vector::zeros(q.m());
    for (k, &i) in active.iter().enumerate() {
        refined[i] = fit[k].max(0.0);
    }
    if q.stationarity(x, &refined) < q.stationarity(x, &lambda) {
        refined
    } else {
        lambda
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpmStats {
    pub newton_steps_phase0: usize,
    pub newton_steps_phase1: usize,
    pub phase0_iters: usize,
    pub phase1_iters: usize,
    /// The iteration count `⌈(√υ/γ) ln(2υ/(τ₀ε))⌉ − 1` from the phase-one schedule.
    pub scheduled_iters: usize,
    pub tau_entry: f64,
    pub tau_final: f64,
    pub duality_gap_bound: f64,
    pub stationarity_residual: f64,
    pub ball_slack: f64,
}

impl IpmStats {
    pub fn newton_steps(&self) -> usize {
        self.newton_steps_phase0 + self.newton_steps_phase1
    }
}

#[derive(Clone, Debug)]
pub struct IpmSolution {
    pub x: Vector,
    pub eta: f64,
    pub lambda: Vector,
    pub stats: IpmStats,
}

/// Bound on `η − η*` for a point with decrement at most `κ` on the path at `τ`.
fn gap_bound(upsilon: f64, kappa: f64, tau: f64) -> f64 {
    (upsilon + kappa * (kappa + upsilon.sqrt()) / (1.0 - kappa)) / tau
}

pub fn solve_path_following(q: &DiagQcqp, x_hat: &Vector, delta: f64, eps: f64, opts: &IpmOptions) -> Result<IpmSolution> {
    if !(eps > 0.0) {
        return Err(Error::Config("ε must be positive".into()));
    }
    let (e, u_hat) = build_epigraph(q, x_hat, delta, opts.r_config)?;
    let ups = e.upsilon();
    let ratio = 1.0 + opts.gamma / ups.sqrt();
    let kappa = opts.kappa;
    let zero = Vector::zeros(u_hat.len());

    // Phase zero: follow the auxiliary path τwᵀu + φ(u) towards the analytic centre.
    let w = -e.barrier_oracle(&u_hat)?.0;
    let mut u = u_hat;
    let mut tau = opts.tau0;
    let mut steps0 = 0;
    let mut it0 = 0;
    while decrement(&e, &u, &zero)? > 0.75 * kappa {
        if it0 >= opts.max_outer {
            return Err(Error::Budget("phase zero".into()));
        }
        tau /= ratio;
        let (un, s) = damped_newton_linear(&e, &u, &(&w * tau), kappa / 2.0, opts.max_newton_per_call)?;
        u = un;
        steps0 += s;
        it0 += 1;
    }

    // Phase one entry: largest τ with n(φ_τ, u) ≤ κ, a quadratic inequality in τ.
    let (g, h) = e.barrier_oracle(&u)?;
    let he1 = h.solve(&e1(u.len(), 1.0));
    let a = he1[0];
    let b = g.dot(&he1);
    let c = g.dot(&h.solve(&g));
    let disc = (b * b + a * (kappa * kappa - c)).max(0.0);
    // Rationalised root avoids cancellation when b ≫ 0.
    let tau_entry = if b > 0.0 { (kappa * kappa - c) / (b + disc.sqrt()) } else { (-b + disc.sqrt()) / a };
    if !(tau_entry > 0.0) {
        return Err(Error::Numerical("phase-one entry parameter is not positive".into()));
    }
    let scheduled = ((ups.sqrt() / opts.gamma) * (2.0 * ups / (tau_entry * eps)).ln()).ceil().max(1.0) as usize - 1;
    let mut tau = tau_entry;
    let mut steps1 = 0;
    let mut it1 = 0;
    while it1 < scheduled || gap_bound(ups, kappa, tau) > eps {
        if it1 >= opts.max_outer {
            return Err(Error::Budget("phase one".into()));
        }
        tau *= ratio;
        let (un, s) = damped_newton(&e, &u, tau, kappa, opts.max_newton_per_call)?;
        u = un;
        steps1 += s;
        it1 += 1;
    }

    let x = u.rows(1, q.dim()).into_owned();
    let worst = q.constraint_values(&x).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if worst > 1e-12 {
        return Err(Error::Infeasible { worst });
    }
    let lambda = polish_duals(q, &x, recover_duals(&e, &u)?);
    let ball_slack = -e.lifted(&u)[q.m() + 1];
    if u.norm() >= e.r {
        return Err(Error::Numerical("artificial ball active at the solution".into()));
    }
    let stats = IpmStats {
        newton_steps_phase0: steps0,
        newton_steps_phase1: steps1,
        phase0_iters: it0,
        phase1_iters: it1,
        scheduled_iters: scheduled,
        tau_entry,
        tau_final: tau,
        duality_gap_bound: gap_bound(ups, kappa, tau),
        stationarity_residual: q.stationarity(&x, &lambda),
        ball_slack,
    };
    Ok(IpmSolution { eta: u[0], x, lambda, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn one_d() -> DiagQcqp {
        DiagQcqp::new(1.0, v(&[2.0]), vec![DiagConstraint { l: 1.0, a: v(&[0.0]), b: 0.5 }]).unwrap()
    }

    #[test]
    fn build_epigraph_examples() {
        let q = DiagQcqp::new(1.0, v(&[0.0]), vec![DiagConstraint { l: 1.0, a: v(&[0.0]), b: 2.0 }]).unwrap();
        let (e, u) = build_epigraph(&q, &v(&[0.0]), 1.0, 0.0).unwrap();
        assert_eq!(u, v(&[1.0, 0.0]));
        assert!(e.is_interior(&u));
        assert!(u.norm() <= e.r / 2.0);
        let (e, _) = build_epigraph(&q, &v(&[0.0]), 1.0, 100.0).unwrap();
        assert_eq!(e.r, 100.0);
        let q = DiagQcqp::new(1.0, v(&[0.0]), vec![DiagConstraint { l: 1.0, a: v(&[0.0]), b: 0.5 }]).unwrap();
        assert!(matches!(build_epigraph(&q, &v(&[0.0]), 1.0, 0.0), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn smw_examples() {
        let n = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let x = smw_solve(&n, &v(&[2.0, 2.0, 2.0]), &v(&[3.0, 2.0, 2.0])).unwrap();
        assert_abs_diff_eq!(x, v(&[1.0, 1.0, 1.0]), epsilon = 1e-15);
        let x = smw_solve(&DMatrix::zeros(3, 0), &v(&[2.0, 4.0, 1.0]), &v(&[2.0, 2.0, 2.0])).unwrap();
        assert_abs_diff_eq!(x, v(&[1.0, 0.5, 2.0]), epsilon = 1e-15);
    }

    #[test]
    fn smw_matches_dense() {
        let n = DMatrix::from_fn(20, 7, |i, j| ((i * 7 + j * 13) as f64 * 0.37).sin() * 3.0);
        let gamma = Vector::from_fn(20, |i, _| 0.5 + (i as f64 * 0.7).cos().abs());
        let rhs = Vector::from_fn(20, |i, _| (i as f64).sin());
        let a = NewtonSystem::factor(n.clone(), gamma.clone(), Branch::Smw).unwrap().solve(&rhs);
        let b = NewtonSystem::factor(n, gamma, Branch::Dense).unwrap().solve(&rhs);
        assert!((&a - &b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn oracle_gradient_matches_finite_differences() {
        let q = DiagQcqp::new(2.0, v(&[0.5, -0.3]), vec![]).unwrap();
        let (e, u) = build_epigraph(&q, &v(&[0.1, 0.2]), 0.5, 0.0).unwrap();
        let tau = 1.7;
        let (g, _) = e.barrier_oracle(&u).unwrap();
        let g = g + e1(3, tau);
        let f = |u: &Vector| tau * u[0] + e.barrier(u).unwrap();
        for j in 0..3 {
            let mut h = Vector::zeros(3);
            h[j] = 1e-6;
            let fd = (f(&(&u + &h)) - f(&(&u - &h))) / 2e-6;
            assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0));
        }
    }

    #[test]
    fn newton_system_inverts_the_barrier_hessian() {
        let q = one_d();
        let (e, u) = build_epigraph(&q, &v(&[0.0]), 0.25, 0.0).unwrap();
        let (_, h) = e.barrier_oracle(&u).unwrap();
        for j in 0..u.len() {
            let mut step = Vector::zeros(u.len());
            step[j] = 1e-6;
            let hj = (e.barrier_oracle(&(&u + &step)).unwrap().0 - e.barrier_oracle(&(&u - &step)).unwrap().0) / 2e-6;
            let mut z = h.solve(&hj);
            z[j] -= 1.0;
            assert!(z.norm() < 1e-6, "{z}");
        }
    }

    #[test]
    fn analytic_centre_of_symmetric_instance() {
        let q = DiagQcqp::new(1.0, v(&[0.0, 0.0]), vec![DiagConstraint { l: 1.0, a: v(&[0.0, 0.0]), b: 1.0 }]).unwrap();
        let (e, u0) = build_epigraph(&q, &v(&[0.0, 0.0]), 0.5, 0.0).unwrap();
        let (u, _) = damped_newton_linear(&e, &u0, &Vector::zeros(3), 1e-10, 100).unwrap();
        assert!(u[1].abs() < 1e-9 && u[2].abs() < 1e-9);
        assert!(e.barrier_oracle(&u).unwrap().0.norm() < 1e-8);
    }

    #[test]
    fn decrement_matches_dense() {
        let q = one_d();
        let (e, u) = build_epigraph(&q, &v(&[0.1]), 0.2, 0.0).unwrap();
        let (g, _) = e.barrier_oracle(&u).unwrap();
        let g = g + e1(2, 3.0);
        let gg = e.lifted(&u);
        let mut h = DMatrix::zeros(2, 2);
        let x = u[1];
        let grads = [v(&[-1.0, x - 2.0]), v(&[0.0, x]), u.clone()];
        let hess = [v(&[0.0, 1.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])];
        for i in 0..3 {
            h += &grads[i] * grads[i].transpose() / (gg[i] * gg[i]);
            h += DMatrix::from_diagonal(&(&hess[i] / -gg[i]));
        }
        let dense = g.dot(&h.cholesky().unwrap().solve(&g)).sqrt();
        assert!((newton_decrement(&e, &u, 3.0).unwrap() - dense).abs() <= 1e-9);
        let (un, _) = damped_newton(&e, &u, 3.0, 0.25, 100).unwrap();
        assert!(newton_decrement(&e, &un, 3.0).unwrap() <= 0.25);
    }

    #[test]
    fn one_d_active_constraint() {
        let sol = solve_path_following(&one_d(), &v(&[0.0]), 0.25, 1e-9, &IpmOptions::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.lambda[0], 1.0, epsilon = 1e-6);
        assert!(sol.stats.duality_gap_bound <= 1e-9);
        assert!(q_feasible(&one_d(), &sol.x));
    }

    fn q_feasible(q: &DiagQcqp, x: &Vector) -> bool {
        q.constraint_values(x).iter().all(|&t| t <= 0.0)
    }

    #[test]
    fn inactive_constraints_return_the_centre() {
        let q = DiagQcqp::new(3.0, v(&[1.0, -2.0]), vec![DiagConstraint { l: 1.0, a: v(&[0.0, 0.0]), b: 1e4 }]).unwrap();
        let sol = solve_path_following(&q, &v(&[0.0, 0.0]), 1.0, 1e-8, &IpmOptions::default()).unwrap();
        assert!((&sol.x - v(&[1.0, -2.0])).norm() < 1e-4);
        assert!(sol.lambda[0] <= 2.0 * 3.0 / sol.stats.tau_final * 10.0);
    }
}
