//! Post-hoc, uncertainty-aware selection among pretrained models that differ
//! in how they handle rotational symmetry.
//!
//! Inputs are exported penultimate features plus the final linear layer
//! ([`tensor_io::ModelDump`]). From those the crate computes error and
//! calibration [`metrics`], split [`conformal`] prediction statistics and a
//! last-layer [`laplace`] marginal likelihood, then ranks models and measures
//! how each criterion agrees with predictive error ([`select`]). The
//! [`harness`] module generates small rotation-symmetric tasks and trains toy
//! models to produce such dumps.

pub mod conformal;
pub mod error;
pub mod harness;
pub mod laplace;
pub mod metrics;
mod real;
pub mod rng;
pub mod select;
pub mod tensor_io;

pub use error::{Error, Result};
