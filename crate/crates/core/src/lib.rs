//! Co-state based desensitized optimal control.
//!
//! Fixed-final-time optimal control problems are desensitized against parametric
//! uncertainty by elevating the parameters to states, appending their co-state
//! dynamics, and penalizing the parameter co-states (the gradient of the cost-to-go
//! with respect to the parameters) in the running cost.

// `!(a <= b)` is used on purpose so NaN fails the test
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod augment;
pub mod control;
pub mod cost;
pub mod error;
pub mod grid;
pub mod integrate;
pub mod mc;
pub mod problem;
pub mod problems;
pub mod solver;
pub mod stm;
pub mod verify;

pub use error::{Error, Result};
