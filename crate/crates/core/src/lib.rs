//! Deterministic strict equilibrium strategies for rank-dependent utility
//! investors in a constant-coefficient Black-Scholes market.
//!
//! The pipeline runs weighting → h-transform → classification and exposure
//! ODE → equilibrium strategy → RDU values, with `verify` as an independent
//! perturbation oracle.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autonomous;
pub mod equilibrium;
pub mod error;
pub mod hfun;
pub mod model;
pub mod normal;
pub mod ode;
pub mod par;
pub mod problem;
pub mod quad;
pub mod timevar;
pub mod verify;
pub mod weighting;

pub use error::{Error, Result};
