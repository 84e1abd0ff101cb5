//! Extended Kalman filtering for chemical reaction networks driven by the
//! discretized chemical Langevin equation, with a process-noise covariance
//! that tracks the state estimate and a certified maximum sampling period.
//!
//! The crate is organized around five pieces:
//!
//! - [`crn`]: reaction networks, propensity algebra, drift/diffusion of the
//!   discrete Langevin dynamics.
//! - [`sim`]: reproducible Euler-Maruyama trajectories and noisy linear
//!   measurements.
//! - [`filter`]: the extended Kalman filter whose process noise
//!   `Q_k = delta * V * diag(A(xhat_k)) * V^T` is recomputed from the current
//!   posterior estimate each step.
//! - [`stability`]: mean-square boundedness certificates — the cubic
//!   polynomial in the sampling period, its unique positive root
//!   `delta_max`, and an empirical exponential-bound checker.
//! - [`harness`]: the four-species gene-expression benchmark network and
//!   Monte Carlo ensembles of simulate → measure → filter.
//!
//! Ensembles and bound estimation run data-parallel under the `parallel`
//! feature (on by default); disabling it produces bit-identical results
//! sequentially.

pub mod crn;
pub mod error;
pub mod filter;
pub mod harness;
pub mod sim;
pub mod stability;
pub mod svg;
mod util;

pub use crate::crn::{spectral_norm, Crn, Factor, ModelFile, Reaction};
pub use crate::error::{Error, Result};
