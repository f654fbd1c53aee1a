use thiserror::Error;

/// Errors raised by the geometry and dynamics engines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point outside the disk: |z| = {0}")]
    Domain(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("reduction did not terminate after {0} steps")]
    NonTermination(usize),
    #[error("isometry is not hyperbolic (|trace| = {0})")]
    NotHyperbolic(f64),
    #[error("frame drift {0:e} exceeds tolerance")]
    NumericDrift(f64),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shift is not mixing: A^{power} has a zero at ({row}, {col})")]
    NotMixing { power: usize, row: usize, col: usize },
    #[error("iteration did not converge: {0}")]
    Convergence(String),
    #[error("leading eigenvalue is not separated: ratio {0}")]
    DegenerateGap(f64),
    #[error("inadmissible word {0:?}")]
    InadmissibleWord(Vec<usize>),
    #[error("window too short: need {needed}, have {have}")]
    WindowTooShort { needed: usize, have: usize },
    #[error("height function is arithmetic or uncertified")]
    ArithmeticHeight,
    #[error("memory {0} exceeds block cap")]
    MemoryCap(usize),
    #[error("prerequisite failed: {0}")]
    PrerequisiteFailed(String),
    #[error("could not bracket root: {0}")]
    BracketFailure(String),
    #[error("too few samples: {0}")]
    TooFewSamples(usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "DomainError",
            Error::Config(_) => "ConfigError",
            Error::NonTermination(_) => "NonTermination",
            Error::NotHyperbolic(_) => "NotHyperbolic",
            Error::NumericDrift(_) => "NumericDrift",
            Error::BudgetExceeded(_) => "BudgetExceeded",
            Error::InsufficientData(_) => "InsufficientData",
            Error::NotMixing { .. } => "NotMixing",
            Error::Convergence(_) => "ConvergenceError",
            Error::DegenerateGap(_) => "DegenerateGap",
            Error::InadmissibleWord(_) => "InadmissibleWord",
            Error::WindowTooShort { .. } => "WindowTooShort",
            Error::ArithmeticHeight => "ArithmeticHeight",
            Error::MemoryCap(_) => "MemoryCap",
            Error::PrerequisiteFailed(_) => "PrerequisiteFailed",
            Error::BracketFailure(_) => "BracketFailure",
            Error::TooFewSamples(_) => "TooFewSamples",
            Error::DegenerateInput(_) => "DegenerateInput",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
