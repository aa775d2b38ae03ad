use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used by the command-line runner to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Model,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Model => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: malformed header, expected `{expected}`, found `{found}`")]
    MalformedHeader {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: non-numeric value `{value}`")]
    NonNumeric {
        path: String,
        line: u64,
        value: String,
    },
    #[error("{path}:{line}: negative value {value}")]
    NegativeValue { path: String, line: u64, value: f64 },
    #[error("{path}:{line}: invalid ISO week `{value}`")]
    InvalidWeek {
        path: String,
        line: u64,
        value: String,
    },
    #[error("duplicate entry for week {week}, series `{series}`")]
    DuplicateEntry { week: String, series: String },
    #[error("panel is empty after dropping incomplete series")]
    EmptyPanel,
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("unknown series `{0}`")]
    UnknownSeries(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero variance input")]
    ZeroVariance,
    #[error("no nonzero paired differences; the signed-rank test is undefined")]
    NoEffectiveDifferences,
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{0}")]
    Model(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config(_) | InvalidArgument(_) | Toml(_) => ErrorKind::Config,
            MalformedHeader { .. }
            | NonNumeric { .. }
            | NegativeValue { .. }
            | InvalidWeek { .. }
            | DuplicateEntry { .. }
            | EmptyPanel
            | InvalidPanel(_)
            | UnknownSeries(_)
            | InsufficientHistory(_)
            | MissingFile(_)
            | Io(_)
            | Csv(_)
            | Json(_) => ErrorKind::Data,
            DimensionMismatch { .. }
            | ZeroVariance
            | NoEffectiveDifferences
            | NonFiniteLoss { .. }
            | Model(_) => ErrorKind::Model,
            Context { source, .. } => source.kind(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }

    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
