use thiserror::Error;

/// Checkpoint file failure classes, kept distinct so callers can map them
/// to different diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFault {
    NotACheckpoint,
    VersionMismatch,
    DigestMismatch,
    Truncated,
    Corrupt,
}

impl std::fmt::Display for CheckpointFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CheckpointFault::NotACheckpoint => "not a checkpoint",
            CheckpointFault::VersionMismatch => "version mismatch",
            CheckpointFault::DigestMismatch => "digest mismatch",
            CheckpointFault::Truncated => "truncated file",
            CheckpointFault::Corrupt => "corrupt contents",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: operand/result contains a non-finite value ({context})")]
    NonFinite { op: &'static str, context: String },

    #[error("expected a scalar node, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("operation {op} does not support differentiable input gradients")]
    SecondOrderUnsupported { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("user {user} has too few interactions ({count}, need at least 2)")]
    TooFewInteractions { user: u32, count: usize },

    #[error("user index {user} out of range (m={m})")]
    UserOutOfRange { user: usize, m: usize },

    #[error("no evaluable users for split '{split}'")]
    NoEvaluableUsers { split: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {fault}: {msg}")]
    Checkpoint { fault: CheckpointFault, msg: String },

    #[error("numerical abort at epoch {epoch}, step {step}: {detail}")]
    NumericalAbort {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 data, 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Parse { .. }
            | Error::EmptyInput(_)
            | Error::TooFewInteractions { .. }
            | Error::UserOutOfRange { .. }
            | Error::NoEvaluableUsers { .. }
            | Error::Checkpoint { .. }
            | Error::Io(_) => 2,
            Error::NonFinite { .. } | Error::NumericalAbort { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
