//! Expectation propagation and conditional expectation propagation.
//!
//! The [`engine`] runs the generic deletion / projection / update loop over a
//! store of exponential-family messages ([`expfam`]). Models in [`models`]
//! provide the projection step: probit and logistic regression with
//! factorized Gaussian posteriors, and CP tensor decomposition with
//! per-row embedding posteriors. [`streaming`] absorbs tensor entries in a
//! single pass, and [`oracle`] holds brute-force reference estimators.

pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod expfam;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod quadrature;
pub mod special;
pub mod streaming;

pub use error::{Error, Result};
