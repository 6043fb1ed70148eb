//! Neural tangent kernel spectra for bias-free ReLU networks.
//!
//! The crate covers the infinite-width kernel ([`ntk_analytic`]), finite-width
//! networks trained by full-batch gradient descent ([`netsim`]), eigen-projection
//! alignment analysis ([`alignment`]), trace-based loss bounds ([`bounds`]) and
//! synthetic data on the unit sphere ([`dataio`]). Dense symmetric linear
//! algebra lives in [`linalg`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod bounds;
pub mod dataio;
pub mod error;
pub mod format;
pub mod linalg;
pub mod netsim;
pub mod ntk_analytic;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{eigh_symmetric, SpectralDecomposition, SymMatrix};
