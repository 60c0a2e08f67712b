//! Desk-scale laboratory for multi-task optimization dynamics.
//!
//! The crate is organized around a minimal reverse-mode tape ([`tape`]) on
//! which small shared-backbone networks ([`net`]) are trained with a matrix
//! of optimizers ([`optim`]) and multi-task weighting methods ([`weighting`],
//! [`aggregation`]). A two-task analytic landscape ([`landscape`]) supports
//! the convergence-race experiments, [`metrics`] holds the gradient-similarity
//! and headline-metric diagnostics, and [`harness`] wires everything into the
//! reproducible experiment suites exposed by the `mtl-lab` binary.

pub mod aggregation;
pub mod data;
pub mod error;
pub mod harness;
pub mod landscape;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod tensor;
pub mod tape;
pub mod weighting;

pub use error::{MtlError, Result};
pub use tensor::Tensor;
