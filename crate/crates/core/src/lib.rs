//! Multi-state Markov chain degradation models for assets inspected on an
//! ordinal condition scale.
//!
//! The crate covers the full modelling loop:
//!
//! * [`hazards`]: age-dependent transition intensities for the Exponential,
//!   Gompertz, Weibull, Log-Logistic and Log-Normal families;
//! * [`chain`]: the six-state progression chain, its generator, the master
//!   and forward equations, and the homogeneous discrete-time special case;
//! * [`inference`]: count tables, the log-likelihood, Metropolis-Hastings
//!   sampling and constrained quasi-Newton refinement;
//! * [`turnbull`]: the non-parametric baseline for interval-censored
//!   inspections;
//! * [`metrics`]: AIC, BIC, RMSE and train/test splitting;
//! * [`data`]: inspection ingestion, cohort construction and simulation.

pub mod chain;
pub mod data;
pub mod error;
pub mod format;
pub mod hazards;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod turnbull;

pub use error::{Error, Result};
