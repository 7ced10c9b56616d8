//! Finite range decompositions of lattice Green's functions.
//!
//! The crate builds multiscale splittings `C = C_1 + ... + C_{N+1}` of the inverse of an
//! elliptic finite difference operator on the discrete torus `(Z / L^N Z)^d`, with
//! vector-valued fields in `R^m` and interactions of arbitrary finite order. Each scale
//! kernel is translation invariant, positive semi-definite, and constant beyond distance
//! `L^k / 2`. On top of the base splitting the crate provides scale-mixed variants with
//! matching lower bounds and a final variant whose derivatives in the operator decay faster
//! than the kernels themselves, together with numerical certification of all of these
//! properties, a spectral Gaussian sampler and the derivative machinery for Gaussian
//! expectations.
//!
//! Module map:
//! - [`lattice`]: torus geometry, fields, discrete derivatives, Fourier transforms.
//! - [`elliptic`]: multi-indices, generators, symbols, Hermitian matrix calculus.
//! - [`frd_base`]: the Chebyshev `W_t` family and the base decomposition.
//! - [`frd_improved`]: scale mixing and the final decomposition.
//! - [`sampler`]: Gaussian fields from spectral kernels.
//! - [`renorm`]: coarse-torus localization and derivatives of Gaussian expectations.

pub mod elliptic;
pub mod error;
pub mod frd_base;
pub mod frd_improved;
pub mod lattice;
pub mod par;
pub mod renorm;
pub mod report;
pub mod sampler;

pub use error::{FrdError, Result};

pub use nalgebra::Complex;
/// Double precision complex scalar used for all spectral data.
pub type C64 = nalgebra::Complex<f64>;
/// Dense complex matrix (Hermitian Fourier multipliers).
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense real matrix.
pub type RMat = nalgebra::DMatrix<f64>;
