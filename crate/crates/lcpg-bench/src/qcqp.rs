//! Random ℓ1-penalised QCQP instances with a ball constraint.

use std::sync::Arc;

use lcpg::problem::{Composite, ConstrainedProblem, Quadratic};
use lcpg::prox::ProxTerm;
use lcpg::{Result, Vector};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convexity {
    Convex,
    Dc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct QcqpRecipe {
    pub n: usize,
    /// Total constraint count: `m − 1` quadratics plus the ball.
    pub m: usize,
    pub convexity: Convexity,
    #[serde(default = "d_density")]
    pub density: f64,
    #[serde(default = "d_eig_max")]
    pub eig_max: f64,
    #[serde(default = "d_c")]
    pub c: f64,
    #[serde(default = "d_radius_sq")]
    pub radius_sq: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_shift")]
    pub dc_shift: f64,
    /// Initial level `η⁰` shared by every constraint; the target level is 0.
    #[serde(default = "d_eta0")]
    pub eta0: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_density() -> f64 {
    0.01
}
fn d_eig_max() -> f64 {
    100.0
}
fn d_c() -> f64 {
    -10.0
}
fn d_radius_sq() -> f64 {
    20.0
}
fn d_alpha() -> f64 {
    1.0
}
fn d_shift() -> f64 {
    10.0
}
fn d_eta0() -> f64 {
    -1.0
}

impl QcqpRecipe {
    pub fn new(n: usize, m: usize, convexity: Convexity, seed: u64) -> Self {
        QcqpRecipe {
            n,
            m,
            convexity,
            density: d_density(),
            eig_max: d_eig_max(),
            c: d_c(),
            radius_sq: d_radius_sq(),
            alpha: d_alpha(),
            dc_shift: d_shift(),
            eta0: d_eta0(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n > 0
            && self.m >= 1
            && self.density > 0.0
            && self.density <= 1.0
            && self.eig_max >= 0.0
            && self.c < self.eta0
            && self.eta0 < 0.0
            && self.radius_sq > 0.0
            && -0.5 * self.radius_sq < self.eta0
            && self.alpha >= 0.0
            && self.dc_shift >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(lcpg::Error::Config(format!("invalid QCQP recipe {self:?}")))
        }
    }
}

/// Quadratic `½xᵀQx + bᵀx + c` with its curvature bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadPiece {
    pub q: DMatrix<f64>,
    pub b: Vector,
    pub c: f64,
    pub lipschitz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcqpInstance {
    pub recipe: QcqpRecipe,
    pub objective: QuadPiece,
    /// The `m − 1` quadratic constraints followed by the ball `½‖x‖² − r²/2`.
    pub constraints: Vec<QuadPiece>,
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(q: &DMatrix<f64>) -> f64 {
    q.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn psd_factor<R: Rng>(r: &QcqpRecipe, rng: &mut R) -> DMatrix<f64> {
    let n = r.n;
    let v = DMatrix::from_fn(n, n, |_, _| {
        if rng.random::<f64>() < r.density {
            rng.random::<f64>()
        } else {
            0.0
        }
    });
    let d = Vector::from_fn(n, |_, _| rng.random::<f64>() * r.eig_max);
    let q = &v * DMatrix::from_diagonal(&d) * v.transpose();
    // Symmetrise away rounding.
    (&q + q.transpose()) * 0.5
}

fn piece<R: Rng>(r: &QcqpRecipe, rng: &mut R, c: f64) -> QuadPiece {
    let p = psd_factor(r, rng);
    let b = Vector::from_fn(r.n, |_, _| 10.0 + rng.sample::<f64, _>(StandardNormal));
    let lmax = lambda_max(&p).max(0.0);
    match r.convexity {
        Convexity::Convex => QuadPiece { q: p, b, c, lipschitz: (1.01 * lmax).max(1.0) },
        Convexity::Dc => {
            let q = p - DMatrix::identity(r.n, r.n) * r.dc_shift;
            QuadPiece { q, b, c, lipschitz: (1.01 * lmax + r.dc_shift).max(1.0) }
        }
    }
}

pub fn gen_qcqp(recipe: &QcqpRecipe) -> Result<QcqpInstance> {
    recipe.validate()?;
    let mut rng = lcpg::drivers::stream(recipe.seed, 2);
    let objective = piece(recipe, &mut rng, 0.0);
    let mut constraints: Vec<QuadPiece> = (1..recipe.m).map(|_| piece(recipe, &mut rng, recipe.c)).collect();
    constraints.push(QuadPiece {
        q: DMatrix::identity(recipe.n, recipe.n),
        b: Vector::zeros(recipe.n),
        c: -0.5 * recipe.radius_sq,
        lipschitz: 1.0,
    });
    Ok(QcqpInstance { recipe: recipe.clone(), objective, constraints })
}

impl QcqpInstance {
    pub fn to_problem(&self) -> Result<ConstrainedProblem> {
        let n = self.recipe.n;
        let quad = |p: &QuadPiece| -> Arc<dyn lcpg::problem::SmoothOracle> {
            Arc::new(Quadratic { q: p.q.clone(), b: p.b.clone(), c: p.c })
        };
        let obj = Composite::new(quad(&self.objective), ProxTerm::l1(self.recipe.alpha), self.objective.lipschitz);
        let cons = self.constraints.iter().map(|p| Composite::new(quad(p), ProxTerm::Zero, p.lipschitz)).collect();
        let m = self.constraints.len();
        ConstrainedProblem::new(obj, cons, Vector::zeros(m), Vector::from_element(m, self.recipe.eta0), Vector::zeros(n))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_strictly_feasible() {
        for conv in [Convexity::Convex, Convexity::Dc] {
            let inst = gen_qcqp(&QcqpRecipe::new(30, 4, conv, 5)).unwrap();
            let p = inst.to_problem().unwrap();
            for c in &p.constraints {
                assert_eq!(c.value(&Vector::zeros(30)), -10.0);
            }
        }
    }

    #[test]
    fn curvature_bounds_dominate_spectrum() {
        let inst = gen_qcqp(&QcqpRecipe::new(40, 3, Convexity::Dc, 1)).unwrap();
        for p in std::iter::once(&inst.objective).chain(&inst.constraints) {
            let eig = p.q.clone().symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|e| e.abs() <= p.lipschitz));
        }
    }

    #[test]
    fn dc_shift_restores_psd() {
        let inst = gen_qcqp(&QcqpRecipe::new(40, 3, Convexity::Dc, 2)).unwrap();
        let p = &inst.constraints[0].q + DMatrix::identity(40, 40) * 10.0 + DMatrix::identity(40, 40) * 1e-9;
        assert!(p.cholesky().is_some());
    }

    #[test]
    fn recipe_rejects_unknown_keys() {
        let bad = r#"{"n": 5, "m": 2, "convexity": "convex", "colour": 1}"#;
        assert!(serde_json::from_str::<QcqpRecipe>(bad).is_err());
        let ok: QcqpRecipe = serde_json::from_str(r#"{"n": 5, "m": 2, "convexity": "dc"}"#).unwrap();
        assert_eq!(ok.c, -10.0);
    }
}
