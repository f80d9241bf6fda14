//! Pulse-level variational eigensolver on coupled transmons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod analysis;
pub mod error;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod problem;
pub mod propagator;
pub mod pulse;

pub use error::{Error, Result};
