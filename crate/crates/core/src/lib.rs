//! Two-layer networks trained with backpropagation and feedback alignment,
//! an exact oracle for the linear error dynamics, and Monte-Carlo checks of
//! the accompanying concentration and convergence bounds.

// Negated comparisons make NaN fail validation; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod constants;
pub mod data;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod trainers;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use network::{Activation, Dataset, TwoLayerNet};
pub use trainers::{Algorithm, Schedule, StepRecord, Trajectory};
