//! Small dense helpers shared across solvers.

use nalgebra::DVector;

pub type Vector = DVector<f64>;

/// Componentwise positive part.
pub fn pos(v: &Vector) -> Vector {
    v.map(|t| t.max(0.0))
}

pub fn l1(v: &Vector) -> f64 {
    v.iter().map(|t| t.abs()).sum()
}

pub fn max_entry(v: &Vector) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_entry(v: &Vector) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn check_len(v: &Vector, d: usize, what: &str) -> crate::Result<()> {
    if v.len() != d {
        return Err(crate::Error::Dimension(format!(
            "{what} has length {}, expected {d}",
            v.len()
        )));
    }
    Ok(())
}
