//! Time-varying parameter (TVP) regression estimated with generalized
//! approximate message passing (GAMP).
//!
//! A TVP regression `y_t = x_t β_t + ε_t` is rewritten in static form
//! `y = 𝒳β + ε` with `(T+1)p` coefficients: a constant block followed by one
//! block of per-period deviations. The static regression is estimated by GAMP
//! with a sparse Bayesian learning prior on every coefficient, EM updates of
//! the prior precisions and a closed-form mixture estimator of the
//! time-varying error variance.
//!
//! Module map:
//!
//! - [`ingest`]: panel CSV reading, stationarity transforms, inflation targets
//!   and regression frames.
//! - [`design`]: principal components and the implicit TVP design operator.
//! - [`gamp`]: the message passing solver.
//! - [`volatility`]: mixture stochastic volatility and constant-variance EM.
//! - [`dgp`]: seeded Monte Carlo data generators.
//! - [`oracles`]: OLS, exact Gaussian posterior and Gibbs samplers.
//! - [`forecast`]: recursive out-of-sample forecasting and evaluation.
//! - [`benchmark`]: Monte Carlo exercises comparing the estimators.

pub mod benchmark;
pub mod design;
pub mod dgp;
pub mod error;
pub mod forecast;
pub mod gamp;
pub mod ingest;
pub mod io;
pub mod oracles;
pub mod volatility;

pub use error::{Error, Result};
