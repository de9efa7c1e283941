use thiserror::Error;

/// Everything that can go wrong while building, analysing or simulating a model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model has no states")]
    EmptyState,
    #[error("NonGenerator: {0}")]
    NonGenerator(String),
    #[error("InvalidLaw: {0}")]
    InvalidLaw(String),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
    #[error("InfeasibleDesign: {0}")]
    InfeasibleDesign(String),
    #[error("UnrealizableMechanism: {0}")]
    UnrealizableMechanism(String),
    #[error("NegativeTime: t = {0}")]
    NegativeTime(f64),
    #[error("NegativeInput: {0}")]
    NegativeInput(String),
    #[error("Reducible: {0}")]
    Reducible(String),
    #[error("TieUnresolved: {0}")]
    TieUnresolved(String),
    #[error("NotSupercritical: lambda_1 = {0} is not negative")]
    NotSupercritical(f64),
    #[error("WrongRegime: {0}")]
    WrongRegime(String),
    #[error("QuadratureFailure: {0}")]
    QuadratureFailure(String),
    #[error("StiffnessFailure: {0}")]
    StiffnessFailure(String),
    #[error("MissingBlock: no estimate supplied for block {0}")]
    MissingBlock(usize),
    #[error("PopulationCap: population {population} exceeded cap {cap}")]
    PopulationCap { population: u64, cap: u64 },
    #[error("InvalidCheckpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("TooFewSurvivors: {retained} retained, at least {required} required")]
    TooFewSurvivors { retained: usize, required: usize },
    #[error("HorizonTooShort: T_est = {t_est} but at least {required} is needed")]
    HorizonTooShort { t_est: f64, required: f64 },
    #[error("DegenerateVariance: {0}")]
    DegenerateVariance(String),
    #[error("Config: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by malformed input rather than by the mathematics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::EmptyState
                | Error::NonGenerator(_)
                | Error::InvalidLaw(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::InvalidCheckpoint(_)
                | Error::NegativeTime(_)
                | Error::NegativeInput(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
