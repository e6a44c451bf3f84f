//! Level constrained proximal gradient (LCPG) methods for smooth and
//! composite function-constrained optimization.
//!
//! The crate is organised bottom-up:
//!
//! - [`prox`]: simple convex terms, their proximal maps and subgradient intervals, SCAD pieces.
//! - [`problem`]: smooth oracles, composites and the constrained problem type.
//! - [`smoothing`]: Nesterov smoothing of max-structured nonsmooth terms.
//! - [`ipm`]: path-following barrier solver for diagonal QCQP subproblems.
//! - [`firstorder`]: certified primal-dual solver for general proximal subproblems.
//! - [`drivers`]: the LCPG, LCSPG and LCSVRG outer loops, level schedules and reporting.
//!
//! With the default `parallel` feature, finite-sum reductions and batch helpers in
//! [`par`] run on rayon. Without it they run sequentially with identical results.

pub mod drivers;
pub mod error;
pub mod firstorder;
pub mod ipm;
pub mod linalg;
pub mod par;
pub mod problem;
pub mod prox;
pub mod smoothing;

pub use error::{Error, Result};
pub use linalg::Vector;
