//! Gradient-free kernel Stein discrepancy, Stein importance sampling and
//! transport-map variational inference.

pub mod density;
pub mod discrepancy;
pub mod error;
pub mod kernel;
pub mod numeric;
pub mod sampling;
pub mod varinf;
pub mod experiments;

pub use error::{Error, Result};
