//! Small-noise asymptotics of stochastic limit-cycle oscillators.
//!
//! The crate works with SDEs of the form
//!
//! ```text
//! dX = b(X) dt + sqrt(2 ε D) dB
//! ```
//!
//! with constant diffusion `D`, and computes the objects that describe the
//! process near a deterministic trajectory and near a stable limit cycle:
//! the Gaussian tube of the rescaled deviation `(X - x̂)/√ε`, the periodic
//! curvature of the rate function on the cycle, the WKB prefactor, the
//! probability-flux linearization, the cycle marginal density and the local
//! entropy balance. Every analytic object has a Monte Carlo or quadrature
//! cross-check in [`montecarlo`] or [`laplace`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clt;
pub mod cycle;
pub mod error;
pub mod flow;
pub mod laplace;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod ode;
pub mod periodic;
pub mod report;
pub mod scaling;

pub use error::{Error, Result};
pub use model::ModelSpec;
