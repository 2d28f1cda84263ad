use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Hazard or chain parameters outside their admissible domain.
    #[error("parameter domain error: {0}")]
    ParameterDomain(String),

    /// The adaptive integrator could not make progress.
    #[error("numeric integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    /// Invalid argument to a numerical routine (empty grid, bad generator, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cohort {0} is empty")]
    EmptyCohort(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("sampler initialisation failed: {0}")]
    Initialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Integration { .. } | Error::Simulation(_) | Error::Initialization(_)
        )
    }
}
