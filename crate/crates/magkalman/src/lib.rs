//! Desk-scale simulation and estimation toolkit for a continuously measured
//! atomic magnetometer tracking a fluctuating magnetic field.
//!
//! The crate covers four layers:
//!
//! * [`params`] / [`stochproc`] — physical parameter records with
//!   linear-Gaussian regime validation, and exact sampling of the
//!   Ornstein-Uhlenbeck / Wiener field process.
//! * [`moments`] — conditional spin dynamics in the linear-Gaussian regime:
//!   the coupled mean/variance SDEs, closed-form variance solutions and the
//!   spin-squeezing parameter.
//! * [`kalman`] / [`bounds`] — the correlated Kalman-Bucy filter, its Riccati
//!   covariance equation (including the linearized X/Y form for improper
//!   priors), steady states, and the classical-simulation estimation bound
//!   built from a Gaussian Fisher-information recurrence.
//! * [`sme_oracle`] — a small-ensemble full quantum oracle (Dicke basis
//!   stochastic master equation) used to validate the Gaussian model.
//!
//! Units: times in seconds, magnetic fields in Gauss, rates in Hz, field
//! fluctuation strength in G^2/s, squared errors in G^2.

pub mod bessel;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod kalman;
pub mod moments;
pub mod ode;
pub mod params;
pub mod rng;
pub mod sme_oracle;
pub mod stochproc;

pub use error::Error;
pub use params::{OuParams, PhysParams, Prior, RegimeReport};

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;
