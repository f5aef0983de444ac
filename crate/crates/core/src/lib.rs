//! Toda lattice at thermal equilibrium: microscopic simulation, quasi-particle
//! extraction from the Lax matrix, generalized-hydrodynamics kernels, and the
//! Gaussian fluctuation laws they predict.

// Index loops mirror the matrix formulas, and `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fluctuation;
pub mod ghd;
pub mod lattice;
pub mod mc;
pub mod special;
pub mod spectral;
pub mod validation;

pub use error::{Error, Result};
