//! Numerical laboratory for ergodic BSDEs driven by weakly dissipative
//! (reflected) diffusions.
//!
//! The pipeline: simulate the forward SDE (unreflected, penalized or
//! projected-reflected), solve the discounted infinite-horizon BSDE by
//! backward least-squares regression, extract the ergodic constant by the
//! vanishing-discount limit, cross-check against a finite-difference
//! Neumann PDE oracle, and evaluate ergodic optimal controls.

pub mod basis;
pub mod bsde;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod control;
pub mod domain;
pub mod error;
pub mod ergodic;
pub mod exec;
pub mod mixing;
pub mod model;
pub mod pde;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
