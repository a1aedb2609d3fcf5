//! Error type shared across the crate.

use std::fmt;
use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, NkError>;

/// Errors emitted by graph loading, numeric kernels, training, and persistence.
#[derive(Debug)]
pub enum NkError {
    /// Operands have incompatible shapes for the named operation.
    Shape { op: &'static str, detail: String },
    /// A text input (GraphBundle file, config) failed to parse.
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    /// A caller violated an operation's contract (invalid range, missing labels, ...).
    Contract(String),
    /// A numeric kernel produced or detected a non-finite value, or failed to converge.
    Numeric { op: String, msg: String },
    /// The differentiable program used a primitive outside the supported set.
    Capability { op: String },
    /// Underlying I/O failure, annotated with the path involved.
    Io { path: PathBuf, source: std::io::Error },
    /// Model file carries an unsupported format version.
    Version { found: u32, supported: u32 },
}

impl fmt::Display for NkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NkError::Shape { op, detail } => write!(f, "shape error in {op}: {detail}"),
            NkError::Parse { path, line, msg } => {
                write!(f, "parse error at {}:{line}: {msg}", path.display())
            }
            NkError::Contract(msg) => write!(f, "contract violation: {msg}"),
            NkError::Numeric { op, msg } => write!(f, "numeric failure in {op}: {msg}"),
            NkError::Capability { op } => write!(f, "unsupported primitive: {op}"),
            NkError::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            NkError::Version { found, supported } => write!(
                f,
                "model format version {found} not supported (max supported: {supported})"
            ),
        }
    }
}

impl std::error::Error for NkError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            NkError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl NkError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NkError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        NkError::Contract(msg.into())
    }

    pub fn numeric(op: impl Into<String>, msg: impl Into<String>) -> Self {
        NkError::Numeric {
            op: op.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NkError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI maps this error to: 2 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            NkError::Numeric { .. } => 2,
            _ => 1,
        }
    }
}
