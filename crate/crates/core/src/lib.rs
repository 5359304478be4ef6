//! Parameter-shift rules for expectation values with arbitrary eigenvalue
//! spectra.
//!
//! Given the eigenvalues of a generator, the crate finds phases `φ_x` and real
//! coefficients `b_x` such that `f'(t) = Σ_x b_x f(t + φ_x)` holds exactly for
//! every expectation value `f(t) = ⟨ψ| e^{iHt} C e^{-iHt} |ψ⟩`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod equidistant;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod perturbation;
pub mod regularization;
pub mod spectrum;
pub mod synthesis;
pub mod variance;

pub use error::{Error, Result};
