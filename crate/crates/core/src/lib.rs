//! Risk-constrained line switching: network model, MILP formulation,
//! learned solution prediction and refined solves.

pub mod encoding;
pub mod error;
pub mod eval;
pub mod grid;
pub mod ops;
pub mod pipeline;
pub mod policy;
pub mod refine;

pub use error::{Error, Result};
