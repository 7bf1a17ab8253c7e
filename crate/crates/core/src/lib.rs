//! Spatial extremes via a positive-stable scale mixture of a transformed
//! nonstationary Gaussian process.
//!
//! `X(s) = R(s)^{φ(s)} g(Z(s))` where `R` is a compactly supported
//! kernel mixture of Lévy variables, `g` maps a standard normal to a
//! type-II Pareto variable and `Z` has a nonstationary Matérn covariance.

pub mod cli_io;
pub mod diagnostics;
pub mod error;
pub mod gp;
pub mod inference;
pub mod kernel;
pub mod margins;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod stable;

pub use error::{Error, Result};
