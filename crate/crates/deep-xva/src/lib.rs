//! Deep xVA solver: neural-network-based numerical solution of clean-value
//! BSDEs and the recursive xVA BSDE for a derivative portfolio.
//!
//! The crate is organised along the pipeline:
//!
//! * [`market`] simulates correlated GBM risk factors on a uniform grid and
//!   records the Brownian increments that drove each path.
//! * [`neural`] provides the per-timestep feedforward networks (forward
//!   pass, reverse-mode parameter gradients, closed-form input Jacobian)
//!   and the Adam optimizer.
//! * [`bsde`] rolls the discretized backward equation along simulated paths
//!   with one network per timestep and trains the initial value and all
//!   network parameters against the terminal mismatch.
//! * [`xva`] binds the generic solver to the valuation-adjustment framework:
//!   clean claims, portfolio aggregation, collateral, CVA/DVA quadrature,
//!   the recursive xVA BSDE, exposure profiles and pathwise sensitivities.
//! * [`analytics`] holds the closed-form and brute-force references used to
//!   validate everything else.
//! * [`serialize`] reads and writes trained solutions bit-exactly.

pub mod analytics;
pub mod bsde;
pub mod error;
pub mod market;
pub mod neural;
pub mod serialize;
pub mod xva;

pub use error::{Error, Result};
