//! Quantum Brownian motion toolkit: Ohmic thermal baths, exact (HPZ)
//! coefficients, Gaussian master-equation dynamics, complete-positivity
//! audits and stochastic unravelings.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod coefficients;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod operators;
pub mod positivity;
pub mod quadrature;
pub mod run;
pub mod scenario;
pub mod stochastic;

pub use error::{Error, Result};
