//! Certified first-order solver for proximal subproblems
//!
//! ```text
//! min  ψ₀ᵏ(x) = c₀ + ⟨G, x − xᵏ⟩ + (γ/2)‖x − xᵏ‖² + χ₀(x)
//! s.t. φᵢ(x) = fᵢ + ⟨gᵢ, x − xᵏ⟩ + (Lᵢ/2)‖x − xᵏ‖² + χᵢ(x) − ηᵢᵏ ≤ 0.
//! ```
//!
//! For fixed multipliers the Lagrangian is strongly convex with a closed-form
//! minimiser, so the dual function and its gradient are exact. The solver runs
//! accelerated projected gradient ascent with adaptive restart on the dual over
//! `{λ ≥ 0, ‖λ‖ ≤ B}` and recovers the primal point from the inner minimiser.

use serde::{Deserialize, Serialize};

use crate::ipm::{DiagConstraint, DiagQcqp};
use crate::prox::{ProxTerm, Simple};
use crate::{Error, Result, Vector};

#[derive(Clone, Debug)]
pub struct LinearizedConstraint {
    /// `fᵢ(xᵏ)`.
    pub value: f64,
    /// `∇fᵢ(xᵏ)`.
    pub grad: Vector,
    pub curvature: f64,
    pub chi: ProxTerm,
    pub level: f64,
}

#[derive(Clone, Debug)]
pub struct ProxSubproblem {
    pub anchor: Vector,
    /// Constant `c₀`, usually `f₀(xᵏ)`.
    pub obj_value: f64,
    pub obj_grad: Vector,
    pub gamma: f64,
    pub chi0: ProxTerm,
    pub constraints: Vec<LinearizedConstraint>,
}

impl ProxSubproblem {
    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        let dx = x - &self.anchor;
        self.obj_value + self.obj_grad.dot(&dx) + 0.5 * self.gamma * dx.norm_squared() + self.chi0.value(x)
    }

    /// `φᵢ(x)`; feasible when nonpositive.
    pub fn constraint(&self, i: usize, x: &Vector) -> f64 {
        let c = &self.constraints[i];
        let dx = x - &self.anchor;
        c.value + c.grad.dot(&dx) + 0.5 * c.curvature * dx.norm_squared() + c.chi.value(x) - c.level
    }

    pub fn constraints_at(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.m(), (0..self.m()).map(|i| self.constraint(i, x)))
    }

    pub fn lagrangian(&self, x: &Vector, lambda: &Vector) -> f64 {
        self.objective(x) + lambda.dot(&self.constraints_at(x))
    }

    /// `argmin_z 𝓛(z, λ)` and the dual value `inf_z 𝓛(z, λ)`.
    pub fn inner_min(&self, lambda: &Vector) -> Result<(Vector, f64)> {
        let mut big_gamma = self.gamma;
        let mut c = self.obj_grad.clone();
        let mut parts: Vec<(f64, &ProxTerm)> = vec![(1.0, &self.chi0)];
        for (i, con) in self.constraints.iter().enumerate() {
            big_gamma += lambda[i] * con.curvature;
            c.axpy(lambda[i], &con.grad, 1.0);
            parts.push((lambda[i], &con.chi));
        }
        let s = Simple::combine(&parts)?;
        let x = s.prox(&(&self.anchor - c / big_gamma), big_gamma)?;
        let d = self.lagrangian(&x, lambda);
        Ok((x, d))
    }

    /// Completed-square export when every χ vanishes and every curvature is positive.
    /// Returns the QCQP and the constant `c` with `ψ₀ᵏ(x) = g₀(x) + c`.
    pub fn to_diag_qcqp(&self) -> Option<(DiagQcqp, f64)> {
        if !self.chi0.is_zero() || self.constraints.iter().any(|c| !c.chi.is_zero() || !(c.curvature > 0.0)) {
            return None;
        }
        let a0 = &self.anchor - &self.obj_grad / self.gamma;
        let shift = self.obj_value - self.obj_grad.norm_squared() / (2.0 * self.gamma);
        let cons = self
            .constraints
            .iter()
            .map(|c| DiagConstraint {
                l: c.curvature,
                a: &self.anchor - &c.grad / c.curvature,
                b: c.level - c.value + c.grad.norm_squared() / (2.0 * c.curvature),
            })
            .collect();
        DiagQcqp::new(self.gamma, a0, cons).ok().map(|q| (q, shift))
    }

    /// Moves `x` towards the anchor until every constraint holds, using convexity of `φᵢ`.
    pub fn restore_feasibility(&self, x: &Vector) -> Vector {
        let v = self.constraints_at(x);
        if v.iter().all(|&t| t <= 0.0) {
            return x.clone();
        }
        let s = self.constraints_at(&self.anchor);
        let mut t = 0.0f64;
        for i in 0..self.m() {
            if v[i] > 0.0 && s[i] < 0.0 {
                t = t.max(v[i] / (v[i] - s[i]));
            }
        }
        let mut t = (t * (1.0 + 1e-12)).min(1.0);
        loop {
            let xt = x * (1.0 - t) + &self.anchor * t;
            if t >= 1.0 || self.constraints_at(&xt).iter().all(|&c| c <= 0.0) {
                return xt;
            }
            t = (t + (1.0 - t) * 1e-6).min(1.0);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub eps: f64,
    pub objective_gap_bound: f64,
    pub feasibility_norm: f64,
    pub lagrangian_gap_bound: f64,
    pub pass: bool,
}

impl Certificate {
    /// Whether the same bounds certify at another accuracy.
    pub fn passes_at(&self, eps: f64) -> bool {
        self.objective_gap_bound <= eps && self.feasibility_norm <= eps && self.lagrangian_gap_bound <= eps
    }
}

/// Bounds the three ε-solution conditions via the dual value `inf_z 𝓛(z, λ_ref)`.
pub fn certificate_check(sub: &ProxSubproblem, x: &Vector, lambda_ref: &Vector, eps: f64) -> Result<Certificate> {
    let (_, dual) = sub.inner_min(lambda_ref)?;
    Ok(certificate_with_dual(sub, x, lambda_ref, dual, eps))
}

fn certificate_with_dual(sub: &ProxSubproblem, x: &Vector, lambda: &Vector, dual: f64, eps: f64) -> Certificate {
    let phi = sub.constraints_at(x);
    let obj = sub.objective(x);
    let lag = obj + lambda.dot(&phi);
    let mut c = Certificate {
        eps,
        objective_gap_bound: obj - dual,
        feasibility_norm: crate::linalg::pos(&phi).norm(),
        lagrangian_gap_bound: lag - dual,
        pass: false,
    };
    c.pass = c.passes_at(eps);
    c
}

/// `(ψ₀(xᵏ) − lower bound) / minᵢ δᵢᵏ`.
pub fn dual_bound_bk(psi0_xk: f64, psi0_lower_bound: f64, delta_k: &Vector) -> Result<f64> {
    let dmin = crate::linalg::min_entry(delta_k);
    if delta_k.is_empty() || !(dmin > 0.0) {
        return Err(Error::Config("level increments must be positive".into()));
    }
    Ok((psi0_xk - psi0_lower_bound) / dmin)
}

#[derive(Clone, Debug)]
pub struct PdSolution {
    pub x: Vector,
    pub lambda: Vector,
    pub certificate: Certificate,
    pub iterations: usize,
    pub certified: bool,
}

fn project_dual(l: &Vector, b: f64) -> Vector {
    let p = crate::linalg::pos(l);
    let n = p.norm();
    if n > b {
        p * (b / n)
    } else {
        p
    }
}

/// Solves the subproblem to an ε-solution certificate with multipliers in the `B`-ball.
pub fn pd_solve(sub: &ProxSubproblem, b: f64, eps: f64, max_iter: usize) -> Result<PdSolution> {
    pd_solve_from(sub, b, eps, max_iter, None)
}

/// [`pd_solve`] with an optional warm start for the multipliers.
pub fn pd_solve_from(
    sub: &ProxSubproblem,
    b: f64,
    eps: f64,
    max_iter: usize,
    warm: Option<&Vector>,
) -> Result<PdSolution> {
    if !(sub.gamma > 0.0) || !(b > 0.0) || eps < 0.0 {
        return Err(Error::Config("pd_solve needs γ > 0, B > 0 and ε ≥ 0".into()));
    }
    let m = sub.m();
    if m == 0 {
        let (x, dual) = sub.inner_min(&Vector::zeros(0))?;
        let cert = certificate_with_dual(sub, &x, &Vector::zeros(0), dual, eps);
        return Ok(PdSolution { x, lambda: Vector::zeros(0), certified: cert.pass, certificate: cert, iterations: 1 });
    }
    let finish = |lambda: Vector, dual: f64, x: Vector, iterations: usize| {
        let x = sub.restore_feasibility(&x);
        let cert = certificate_with_dual(sub, &x, &lambda, dual, eps);
        PdSolution { x, lambda, certified: cert.pass, certificate: cert, iterations }
    };

    let mut lam = warm.map_or_else(|| Vector::zeros(m), |w| project_dual(w, b));
    let (mut x_lam, mut d_lam) = sub.inner_min(&lam)?;
    let mut y = lam.clone();
    let (mut x_y, mut d_y) = (x_lam.clone(), d_lam);
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut best = (lam.clone(), d_lam, x_lam.clone(), f64::INFINITY);

    for it in 1..=max_iter {
        let grad = sub.constraints_at(&x_y);
        let (lam_new, x_new, d_new) = loop {
            let cand = project_dual(&(&y + &grad / lip), b);
            let (xc, dc) = sub.inner_min(&cand)?;
            let diff = &cand - &y;
            let model = d_y + grad.dot(&diff) - 0.5 * lip * diff.norm_squared();
            if dc >= model - 1e-14 * (1.0 + d_y.abs()) || lip > 1e300 {
                break (cand, xc, dc);
            }
            lip *= 2.0;
        };

        let cert = certificate_with_dual(sub, &sub.restore_feasibility(&x_new), &lam_new, d_new, eps);
        let score = cert.objective_gap_bound.max(cert.feasibility_norm).max(cert.lagrangian_gap_bound);
        if score < best.3 {
            best = (lam_new.clone(), d_new, x_new.clone(), score);
        }
        if cert.pass {
            return Ok(finish(lam_new, d_new, x_new, it));
        }

        if d_new < d_lam {
            t = 1.0;
            y = lam_new.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &lam_new + (&lam_new - &lam) * ((t - 1.0) / t_next);
            y = project_dual(&y, b);
            t = t_next;
        }
        lam = lam_new;
        x_lam = x_new;
        d_lam = d_new;
        let (xy, dy) = sub.inner_min(&y)?;
        x_y = xy;
        d_y = dy;
        lip *= 0.9;
    }
    let _ = x_lam;
    let (lam_b, d_b, x_b, _) = best;
    Ok(finish(lam_b, d_b, x_b, max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipm::{solve_path_following, IpmOptions};
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    /// `min ½(x − 2)²` s.t. `½x² ≤ ½`.
    fn one_d() -> ProxSubproblem {
        ProxSubproblem {
            anchor: v(&[0.0]),
            obj_value: 2.0,
            obj_grad: v(&[-2.0]),
            gamma: 1.0,
            chi0: ProxTerm::Zero,
            constraints: vec![LinearizedConstraint { value: 0.0, grad: v(&[0.0]), curvature: 1.0, chi: ProxTerm::Zero, level: 0.5 }],
        }
    }

    #[test]
    fn unconstrained_prox_step() {
        let sub = ProxSubproblem {
            anchor: v(&[1.0, 1.0]),
            obj_value: 0.0,
            obj_grad: v(&[2.0, -4.0]),
            gamma: 2.0,
            chi0: ProxTerm::Zero,
            constraints: vec![],
        };
        let s = pd_solve(&sub, 1.0, 0.0, 10).unwrap();
        assert_eq!(s.x, v(&[0.0, 3.0]));
        assert_eq!(s.iterations, 1);
        assert!(s.certified);
    }

    #[test]
    fn one_d_agrees_with_ipm() {
        let sub = one_d();
        let s = pd_solve(&sub, 10.0, 1e-6, 10_000).unwrap();
        assert!(s.certified);
        let (q, _) = sub.to_diag_qcqp().unwrap();
        let r = solve_path_following(&q, &sub.anchor, 0.25, 1e-9, &IpmOptions::default()).unwrap();
        assert!((&s.x - &r.x).norm() <= 1e-5);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn certificate_examples() {
        let sub = one_d();
        let c = certificate_check(&sub, &v(&[1.0]), &v(&[1.0]), 0.0).unwrap();
        assert!(c.pass, "{c:?}");
        let eps = 1e-3;
        let bad = (1.0f64 + 4.0 * eps).sqrt();
        let c = certificate_check(&sub, &v(&[bad]), &v(&[1.0]), eps).unwrap();
        assert!(!c.pass);
        assert!(c.feasibility_norm > eps);

        let free = ProxSubproblem { constraints: vec![], ..one_d() };
        let eps = 1e-4;
        let t = (2.0 * eps / free.gamma).sqrt();
        let c = certificate_check(&free, &v(&[2.0 + t]), &Vector::zeros(0), eps).unwrap();
        assert_abs_diff_eq!(c.objective_gap_bound, eps, epsilon = 1e-12);
        assert!(!certificate_check(&free, &v(&[2.0 + 1.01 * t]), &Vector::zeros(0), eps).unwrap().pass);
        assert!(certificate_check(&free, &v(&[2.0 + 0.99 * t]), &Vector::zeros(0), eps).unwrap().pass);
    }

    #[test]
    fn dual_bound_examples() {
        assert_eq!(dual_bound_bk(5.0, 1.0, &v(&[0.5, 2.0])).unwrap(), 8.0);
        assert_eq!(dual_bound_bk(1.0, 1.0, &v(&[0.5])).unwrap(), 0.0);
        assert_eq!(dual_bound_bk(5.0, 1.0, &v(&[0.25])).unwrap(), 16.0);
        assert!(dual_bound_bk(5.0, 1.0, &v(&[0.0])).is_err());
    }

    #[test]
    fn completed_square_export_preserves_values() {
        let sub = ProxSubproblem {
            anchor: v(&[0.5, -1.0]),
            obj_value: 3.0,
            obj_grad: v(&[1.0, 2.0]),
            gamma: 4.0,
            chi0: ProxTerm::Zero,
            constraints: vec![LinearizedConstraint { value: -1.0, grad: v(&[0.3, 0.1]), curvature: 2.0, chi: ProxTerm::Zero, level: 0.5 }],
        };
        let (q, shift) = sub.to_diag_qcqp().unwrap();
        for x in [v(&[0.0, 0.0]), v(&[1.0, -3.0])] {
            assert_abs_diff_eq!(q.g0(&x) + shift, sub.objective(&x), epsilon = 1e-12);
            assert_abs_diff_eq!(q.gi(0, &x), sub.constraint(0, &x), epsilon = 1e-12);
        }
    }

    #[test]
    fn l1_constraint_subproblem() {
        // min ½‖x − (3, 0)‖² s.t. ‖x‖₁ ≤ 1: solution (1, 0).
        let sub = ProxSubproblem {
            anchor: v(&[0.0, 0.0]),
            obj_value: 4.5,
            obj_grad: v(&[-3.0, 0.0]),
            gamma: 1.0,
            chi0: ProxTerm::Zero,
            constraints: vec![LinearizedConstraint { value: 0.0, grad: v(&[0.0, 0.0]), curvature: 0.0, chi: ProxTerm::l1(1.0), level: 1.0 }],
        };
        let s = pd_solve(&sub, 100.0, 1e-10, 10_000).unwrap();
        assert!(s.certified);
        assert_abs_diff_eq!(s.x, v(&[1.0, 0.0]), epsilon = 1e-8);
        assert_abs_diff_eq!(s.lambda[0], 2.0, epsilon = 1e-6);
    }
}
