//! Eigenspace perturbation bounds under relative eigenvalue gaps, with a
//! seeded Monte Carlo harness that checks them.
//!
//! Indices in public APIs are 1-based and eigenvalues are sorted descending.

// Guards are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod bounds;
pub mod error;
pub mod harness;
pub mod models;
pub mod spectral;
