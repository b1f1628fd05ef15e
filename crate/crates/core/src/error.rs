use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown behavior token `{token}`")]
    UnknownBehavior { line: usize, token: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("empty dataset after {0}")]
    EmptyDataset(String),

    #[error("need at least {needed} sessions, got {got}")]
    TooFewSessions { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("item id {id} out of range for {n_items} items")]
    ItemOutOfRange { id: usize, n_items: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("negative sampling failed: {0}")]
    Sampling(String),

    #[error("degenerate kernel row {row}: {reason}")]
    DegenerateKernel { row: usize, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Stable machine-readable category, used by the CLI for exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::Csv(_) => "parse",
            Error::UnknownBehavior { .. } | Error::MissingColumn(_) => "schema",
            Error::EmptyDataset(_) | Error::TooFewSessions { .. } => "dataset",
            Error::Shape(_) | Error::ItemOutOfRange { .. } => "shape",
            Error::NonFinite(_) => "numeric",
            Error::Config(_) | Error::TomlDe(_) | Error::TomlSer(_) => "config",
            Error::EmptyBatch | Error::Sampling(_) => "training",
            Error::DegenerateKernel { .. } => "synthetic",
            Error::Checkpoint(_) | Error::Json(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "io" => 3,
            "parse" | "schema" => 4,
            "dataset" => 5,
            "config" => 6,
            "checkpoint" => 7,
            _ => 1,
        }
    }
}
