use std::fmt;

/// Errors produced by the placement toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{section} line {line}: {message}")]
    Parse {
        section: Section,
        line: usize,
        message: String,
    },
    #[error("net `{net}` references undefined module `{module}`")]
    DanglingEndpoint { net: String, module: String },
    #[error("duplicate module name `{0}`")]
    DuplicateModule(String),
    #[error("module `{name}` has non-positive dimension {width} x {height}")]
    NonPositiveDimension { name: String, width: f64, height: f64 },
    #[error("invalid netlist: {0}")]
    InvalidNetlist(String),
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("energy references are not set")]
    UnsetReferences,
    #[error("infeasible generation spec: {0}")]
    Infeasible(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Bookshelf section an error was found in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Nodes,
    Nets,
    Pl,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Nodes => ".nodes",
            Section::Nets => ".nets",
            Section::Pl => ".pl",
        })
    }
}

impl Error {
    /// True for failures caused by bad numbers rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
