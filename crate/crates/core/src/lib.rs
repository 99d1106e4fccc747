//! Online-learning Gaussian-process NARX models for model predictive control.
//!
//! The GP posterior is kept current by recursive Cholesky updates as training
//! points are added and evicted, and a value-function gate decides whether an
//! updated model may replace the one used by the controller.

pub mod chol;
pub mod error;
pub mod evolving;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod mpc;
pub mod narx;
pub mod optim;
pub mod plant;
pub mod terminal;

pub use error::{Error, Result};
