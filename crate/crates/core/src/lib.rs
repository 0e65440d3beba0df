//! Numerical certification of stochastic contraction in state- and
//! time-dependent Riemannian metrics, mean-square distance bounds, and
//! Monte Carlo verification of those bounds.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod config;
pub mod contraction;
pub mod dsl;
pub mod error;
pub mod geodesic;
pub mod linalg;
pub mod observer;
pub mod sde;
pub mod system;

pub use error::{Error, Result};
