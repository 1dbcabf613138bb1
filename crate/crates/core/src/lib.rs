// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod control;
pub mod entanglement;
pub mod error;
pub mod linalg;
pub mod model;
pub mod solvers;
pub mod sweep;
pub mod trajectory;

pub use error::{Error, Result};
