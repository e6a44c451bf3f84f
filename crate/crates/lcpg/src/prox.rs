//! Simple convex terms χ, their proximal maps and coordinatewise subgradients,
//! plus the SCAD building block h_{β,θ}.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vector};

/// Slack used when testing membership of the ball indicator's domain.
const BALL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxTerm {
    Zero,
    L1 { weight: f64 },
    Ball { radius: f64, center: Vec<f64> },
    WeightedSum(Vec<(f64, ProxTerm)>),
}

/// Flattened form of a term: `l1·‖x‖₁ + ι_B(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Simple {
    pub l1: f64,
    pub ball: Option<(f64, Vec<f64>)>,
}

impl Simple {
    /// Flattens `Σ cᵢ·termᵢ`. Zero coefficients drop their term entirely.
    pub fn combine(parts: &[(f64, &ProxTerm)]) -> Result<Simple> {
        let mut out = Simple { l1: 0.0, ball: None };
        for &(c, t) in parts {
            out.absorb(c, t)?;
        }
        Ok(out)
    }

    fn absorb(&mut self, coef: f64, term: &ProxTerm) -> Result<()> {
        if coef < 0.0 {
            return Err(Error::Unsupported("negative coefficient".into()));
        }
        if coef == 0.0 {
            return Ok(());
        }
        match term {
            ProxTerm::Zero => {}
            ProxTerm::L1 { weight } => self.l1 += coef * weight,
            ProxTerm::Ball { radius, center } => match &self.ball {
                None => self.ball = Some((*radius, center.clone())),
                Some((r, c)) if r == radius && c == center => {}
                Some(_) => {
                    return Err(Error::NoClosedFormProx("intersection of two balls".into()))
                }
            },
            ProxTerm::WeightedSum(parts) => {
                for (c, t) in parts {
                    self.absorb(coef * c, t)?;
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &Vector) -> f64 {
        let mut v = if self.l1 > 0.0 { self.l1 * crate::linalg::l1(x) } else { 0.0 };
        if let Some((r, c)) = &self.ball {
            if dist_to_center(x, c) > r * (1.0 + BALL_TOL) {
                v = f64::INFINITY;
            }
        }
        v
    }

    /// `argmin_x self(x) + (γ/2)‖x − center‖²`.
    pub fn prox(&self, center: &Vector, gamma: f64) -> Result<Vector> {
        let st = soft_threshold(center, self.l1 / gamma);
        match &self.ball {
            None => Ok(st),
            Some((r, c)) => {
                if self.l1 > 0.0 && c.iter().any(|&t| t != 0.0) {
                    return Err(Error::NoClosedFormProx(
                        "l1 plus a ball not centred at the origin".into(),
                    ));
                }
                Ok(project_ball(&st, *r, c))
            }
        }
    }

    pub fn is_separable(&self) -> bool {
        self.ball.is_none()
    }
}

impl ProxTerm {
    pub fn l1(weight: f64) -> ProxTerm {
        ProxTerm::L1 { weight }
    }

    pub fn ball(radius: f64, center: Vec<f64>) -> ProxTerm {
        ProxTerm::Ball { radius, center }
    }

    pub fn simple(&self) -> Result<Simple> {
        Simple::combine(&[(1.0, self)])
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.simple(), Ok(Simple { l1, ball: None }) if l1 == 0.0)
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self.simple() {
            Ok(s) => s.value(x),
            Err(_) => f64::NAN,
        }
    }
}

fn dist_to_center(x: &Vector, c: &[f64]) -> f64 {
    if c.is_empty() {
        return x.norm();
    }
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn soft_threshold(v: &Vector, t: f64) -> Vector {
    if t == 0.0 {
        return v.clone();
    }
    v.map(|a| a.signum() * (a.abs() - t).max(0.0))
}

/// Euclidean projection onto `{x : ‖x − c‖ ≤ r}`; an empty `c` means the origin.
pub fn project_ball(x: &Vector, r: f64, c: &[f64]) -> Vector {
    let dist = dist_to_center(x, c);
    if dist <= r {
        return x.clone();
    }
    let s = r / dist;
    if c.is_empty() {
        return x * s;
    }
    Vector::from_iterator(x.len(), x.iter().zip(c).map(|(a, b)| b + s * (a - b)))
}

/// `argmin_x term(x) + (γ/2)‖x − center‖²`.
pub fn prox(term: &ProxTerm, center: &Vector, gamma: f64) -> Result<Vector> {
    if gamma <= 0.0 {
        return Err(Error::Config("prox parameter must be positive".into()));
    }
    term.simple()?.prox(center, gamma)
}

/// Interval of coordinate-`j` subgradients of a separable term at `x`.
pub fn subdiff_interval(term: &ProxTerm, x: &Vector, j: usize) -> Result<(f64, f64)> {
    let s = term.simple()?;
    simple_interval(&s, x[j])
}

pub fn simple_interval(s: &Simple, xj: f64) -> Result<(f64, f64)> {
    if !s.is_separable() {
        return Err(Error::NotSeparable);
    }
    let w = s.l1;
    Ok(if xj > 0.0 {
        (w, w)
    } else if xj < 0.0 {
        (-w, -w)
    } else {
        (-w, w)
    })
}

/// `dist(0, g + [lo, hi])`.
pub fn dist_to_interval(g: f64, lo: f64, hi: f64) -> f64 {
    0f64.max(g + lo).max(-(g + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScadParams {
    pub beta: f64,
    pub theta: f64,
}

impl ScadParams {
    pub fn new(beta: f64, theta: f64) -> Result<Self> {
        if beta <= 0.0 || theta <= 1.0 {
            return Err(Error::Config(format!("invalid SCAD parameters β={beta}, θ={theta}")));
        }
        Ok(ScadParams { beta, theta })
    }

    /// Gradient Lipschitz modulus of h.
    pub fn smoothness(&self) -> f64 {
        1.0 / (self.theta - 1.0)
    }
}

pub fn scad_value(u: f64, p: ScadParams) -> f64 {
    let (b, t) = (p.beta, p.theta);
    let a = u.abs();
    if a <= b {
        0.0
    } else if a <= b * t {
        (a - b) * (a - b) / (2.0 * (t - 1.0))
    } else {
        b * a - (t + 1.0) * b * b / 2.0
    }
}

pub fn scad_grad(u: f64, p: ScadParams) -> f64 {
    let (b, t) = (p.beta, p.theta);
    let a = u.abs();
    if a <= b {
        0.0
    } else if a <= b * t {
        u.signum() * (a - b) / (t - 1.0)
    } else {
        u.signum() * b
    }
}
