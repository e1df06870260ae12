//! Gradient estimation and stochastic gradient descent for conditional
//! stochastic optimization problems
//!
//! ```text
//! F(x) = E_ξ[ f_ξ( E_{η|ξ}[ g_η(x, ξ) ] ) ]
//! ```
//!
//! The plug-in nested Monte Carlo gradient is biased whenever `f_ξ` is
//! nonlinear. This crate provides the antithetic multilevel difference
//! `Δψ_ℓ`, the fixed-level MLMC estimator, and the randomized single-term
//! estimator which is unbiased with finite expected cost. For squared-loss
//! objectives three further unbiased estimators are available in
//! [`squared_loss`].
//!
//! All randomness flows through [`rng::RngStream`] values derived from a
//! [`rng::StreamKey`], so every result is reproducible from a master seed
//! regardless of thread count.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod models;
pub mod optimizer;
pub mod problem;
pub mod rng;
pub mod squared_loss;

pub use error::{Error, Result};
