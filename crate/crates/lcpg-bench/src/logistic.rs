//! Logistic loss as a finite sum, and the SCAD sparsity constraint.

use std::sync::Arc;

use lcpg::problem::{finite_sum_eval, Composite, NegScad, SmoothOracle};
use lcpg::prox::{ProxTerm, ScadParams};
use lcpg::{Result, Vector};

use crate::data::SparseDataset;

/// `fᵢ(x) = log(1 + exp(−bᵢ aᵢᵀx))`, averaged over the rows.
#[derive(Clone, Debug)]
pub struct Logistic {
    pub data: Arc<SparseDataset>,
}

/// `log(1 + eᶻ)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `1 / (1 + e⁻ᶻ)`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    pub fn new(data: Arc<SparseDataset>) -> Self {
        Logistic { data }
    }

    /// `maxᵢ ‖aᵢ‖²/4`.
    pub fn lipschitz(&self) -> f64 {
        (0..self.data.n()).map(|i| self.data.row_norm_sq(i)).fold(0.0, f64::max) / 4.0
    }

    fn margin(&self, i: usize, x: &Vector) -> f64 {
        self.data.labels[i] * self.data.rows[i].iter().map(|&(j, v)| v * x[j]).sum::<f64>()
    }
}

impl SmoothOracle for Logistic {
    fn dim(&self) -> usize {
        self.data.d
    }

    fn eval(&self, x: &Vector) -> (f64, Vector) {
        finite_sum_eval(self, x)
    }

    fn n_components(&self) -> usize {
        self.data.n()
    }

    fn component_eval(&self, i: usize, x: &Vector) -> (f64, Vector) {
        let mut g = Vector::zeros(self.dim());
        self.add_component_grad(i, x, 1.0, &mut g);
        (softplus(-self.margin(i, x)), g)
    }

    fn add_component_grad(&self, i: usize, x: &Vector, scale: f64, out: &mut Vector) {
        let b = self.data.labels[i];
        let w = -scale * b * sigmoid(-self.margin(i, x));
        for &(j, v) in &self.data.rows[i] {
            out[j] += w * v;
        }
    }
}

/// `β‖x‖₁ − Σⱼ h_{β,θ}(xⱼ) ≤ σd`, returned with its level.
pub fn scad_constraint(beta: f64, theta: f64, d: usize, sigma: f64) -> Result<(Composite, f64)> {
    let params = ScadParams::new(beta, theta)?;
    let c = Composite::new(Arc::new(NegScad { params, dim: d }), ProxTerm::l1(beta), params.smoothness());
    Ok((c, sigma * d as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_logistic;

    #[test]
    fn value_and_gradient_at_origin() {
        let data = Arc::new(synthetic_logistic(5, 3, 1));
        let f = Logistic::new(data.clone());
        let x = Vector::zeros(3);
        for i in 0..5 {
            let (v, g) = f.component_eval(i, &x);
            assert!((v - 2f64.ln()).abs() < 1e-15);
            for &(j, a) in &data.rows[i] {
                assert!((g[j] + data.labels[i] * a / 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let f = Logistic::new(Arc::new(synthetic_logistic(30, 4, 2)));
        let x = Vector::from_column_slice(&[0.3, -0.7, 1.1, 0.2]);
        let g = f.grad(&x);
        let h = 1e-6;
        for j in 0..4 {
            let mut e = Vector::zeros(4);
            e[j] = h;
            let fd = (f.value(&(&x + &e)) - f.value(&(&x - &e))) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn large_margins_do_not_overflow() {
        assert!(softplus(-40.0) < 1e-17 && softplus(-40.0) > 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert_eq!(sigmoid(-800.0), 0.0);
    }

    #[test]
    fn scad_level_and_origin() {
        let (c, eta) = scad_constraint(2.0, 5.0, 10, 0.4).unwrap();
        assert_eq!(eta, 4.0);
        assert_eq!(c.value(&Vector::zeros(10)), 0.0);
        assert_eq!(c.lipschitz, 0.25);
    }
}
