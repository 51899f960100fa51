//! Mean stability of positive switched linear systems driven by semi-Markov
//! and Markov processes.
//!
//! The central object is the degree-`m` monomial lift `x ↦ x^[m]`, which maps
//! the `m`-th moment problem of a positive system to a linear problem on a
//! positive cone. Stability then reduces to the spectral radius of a lifted
//! nonnegative matrix (semi-Markov and discrete-time models) or the spectral
//! abscissa of a lifted Metzler generator (Markov models).

// `!(x >= 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyzer;
pub mod catalog;
pub mod cli;
pub mod error;
pub mod expectation;
pub mod io;
pub mod kron_lift;
pub mod model;
pub mod simulator;
pub mod stabilizer;

pub use error::{Error, Result};
pub use kron_lift::MultiIndexBasis;
pub use model::{DiscreteModel, DwellLaw, JumpMixture, MarkovModel, SemiMarkovModel};
