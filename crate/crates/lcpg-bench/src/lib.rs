//! Problem generators, data loading, the experiment harness and the invariant
//! battery behind the `lcpg` command-line tool.

pub mod battery;
pub mod data;
pub mod experiment;
pub mod logistic;
pub mod plot;
pub mod qcqp;
