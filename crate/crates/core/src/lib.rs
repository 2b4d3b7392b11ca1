//! Multiplicative free convolutions `ν ⊠ MP_γ`, contour-integral variances of
//! linear eigenvalue statistics of `XᵀΣX` with a random diagonal population
//! `Σ`, and Monte Carlo checks of the resulting central limit theorem.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod contour;
pub mod error;
pub mod freeconv;
pub mod measures;
pub mod quadrature;
pub mod rmt;
pub mod verify;

pub use error::{Error, Result};
