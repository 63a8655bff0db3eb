use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("group {group} has zero Frobenius norm")]
    ZeroNormGroup { group: usize },
    #[error("level {level} never occurs (levels must cover 1..={levels})")]
    EmptyLevel { level: usize, levels: usize },
    #[error("level value {value} outside 1..={levels}")]
    LevelOutOfRange { value: usize, levels: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("y does not satisfy inequalities (constraint {index})")]
    Infeasible { index: usize },
    #[error("degenerate conditional variance {0}")]
    DegenerateVariance(f64),
    #[error("numerical inconsistency: {0}")]
    Numerical(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("column budget exceeded: expansion needs {needed} columns, budget is {budget}")]
    ColumnBudget { needed: usize, budget: usize },
    #[error("categorical resampling failed after {attempts} attempts; increase n")]
    ResamplingExhausted { attempts: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible { .. } | Error::DegenerateVariance(_) | Error::Numerical(_) => 3,
            Error::InvalidArgument(_) | Error::InvalidConfig(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
