//! Simulation and numerical checks for separately exchangeable empirical
//! processes.

// `!(x > 0.0)` style guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod entropy;
pub mod function_class;
pub mod harness;
pub mod hoeffding;
pub mod lattice;
pub mod model;
pub mod orlicz;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod supremum;

pub use error::{Error, Result};
