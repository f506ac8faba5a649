use thiserror::Error;

/// Errors produced by the monitoring engine and its supporting modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImlError {
    #[error("malformed configuration: {0}")]
    Config(String),

    #[error("risk out of range for tool `{tool}`: {value}")]
    RiskOutOfRange { tool: String, value: f64 },

    #[error("weights must sum to 1 (got {0})")]
    WeightSum(f64),

    #[error("unknown tool `{0}`")]
    UnknownTool(String),

    #[error("no observations")]
    NoObservations,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("burn-in needs at least {required} events, got {got}")]
    BurnInTooShort { required: usize, got: usize },

    #[error("burn-in event at step {step} violates enforcement")]
    NonCompliantBurnIn { step: u64 },

    #[error("step {step} is out of range for a {total}-step scenario")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("trace too short: need {required} steps, got {got}")]
    TraceTooShort { required: usize, got: usize },

    #[error("witness invalid: {0}")]
    WitnessInvalid(String),

    #[error("no detection at threshold {0}")]
    NoDetection(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ImlError {
    fn from(err: std::io::Error) -> Self {
        ImlError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ImlError>;
