//! Solver for high-dimensional parabolic PDEs through their backward SDE
//! representation, with the value function regressed onto tensor-train
//! ansatz spaces at every time step.

pub mod als;
pub mod basis;
pub mod bsde;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod problems;
pub mod reference;
pub mod sde;
pub mod tensor_train;
pub mod tt_function;

pub use error::{Error, Result};
