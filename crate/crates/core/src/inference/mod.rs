//! Calibration: count tables, the likelihood, Metropolis-Hastings sampling
//! and constrained local refinement.

mod counts;
mod fit;
mod likelihood;
pub mod mcmc;
pub mod sqp;

pub use counts::{build_counts, CountTable, FailureRows};
pub use fit::{
    fit, fit_and_score, score, score_discrete, DiscreteReport, FitConfig, FitDiagnostics, FitReport, Score,
    TEST_METRICS_CONVENTION,
};
pub use likelihood::{log_likelihood, log_likelihood_on_curve, log_likelihood_with, DENSITY_FLOOR};
pub use mcmc::{metropolis, mh_sample, McmcConfig, McmcRun, MhResult};
pub use sqp::{minimize, Constraints, SqpConfig, SqpResult, SqpStatus};
