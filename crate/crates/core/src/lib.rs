//! Numerical spectral analysis of perturbed periodic Sturm–Liouville operators
//!
//! ```text
//! τ u = (1/r) ( -(p u')' + q u )
//! ```
//!
//! The crate computes the Floquet data of a periodic base problem (monodromy
//! matrix, Hill discriminant, band edges), constructs solutions of an
//! integrably perturbed problem through a Volterra integral equation with
//! prescribed asymptotics, counts discrete eigenvalues inside spectral gaps
//! with two independent methods, and checks band edges for eigenvalues.
//! An independent finite-difference discretization with Sturm-sequence
//! counting is provided as a brute-force cross-check.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. IO, configuration and parallel sweeps live in the `hillgap`
//! companion crate.
//!
//! Module map:
//!
//! - [`coefficients`]: coefficient families, perturbed pairs, moment norms
//! - [`quadode`]: adaptive propagation of the quasi-derivative system
//! - [`floquet`]: monodromy, discriminant, band structure, Floquet solutions
//! - [`perturb`]: Volterra operator and perturbed solutions
//! - [`spectra`]: gap eigenvalues, Wronskian counting, Green's operator,
//!   band-edge tests
//! - [`oracle`]: finite-difference pencil and Sturm counting
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod coefficients;
mod error;
pub mod floquet;
pub mod grid;
pub mod linalg;
mod math;
pub mod oracle;
pub mod perturb;
pub mod quadode;
pub mod quadrature;
pub mod spectra;
mod tableau;

pub use error::{Error, Result};
pub use num_complex::Complex64;
