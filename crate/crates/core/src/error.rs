use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape must have at least one dimension")]
    EmptyShape,

    #[error("shape {0:?} has a zero-sized dimension")]
    ZeroDim(Vec<usize>),

    #[error("shape {shape:?} needs {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    /// A layer spec that cannot produce a valid output (bad kernel, stride,
    /// padding or non-positive output size).
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    /// Model configuration rejected at build time.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node `{path}`: {source}")]
    Node {
        path: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("malformed file at byte {offset} ({field}): {msg}")]
    Format {
        offset: u64,
        field: &'static str,
        msg: String,
    },

    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_node(self, path: &str) -> Self {
        Error::Node {
            path: path.to_string(),
            source: Box::new(self),
        }
    }

    pub fn in_file(self, path: &std::path::Path) -> Self {
        Error::File {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input (configuration, arguments,
    /// shapes) rather than by I/O or numerical failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Node { source, .. } | Error::File { source, .. } => source.is_validation(),
            Error::Io(_) | Error::Format { .. } | Error::NonFiniteLoss { .. } => false,
            _ => true,
        }
    }
}
