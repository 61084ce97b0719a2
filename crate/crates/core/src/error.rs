use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("qubit index {qubit} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { qubit: usize, n_qubits: usize },

    #[error("CZ needs two distinct qubits, got ({0}, {0})")]
    RepeatedQubit(usize),

    #[error("non-finite rotation angle {0}")]
    NonFiniteAngle(f64),

    #[error("gate angle mismatch: {0}")]
    AngleMismatch(&'static str),

    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid circuit template: {0}")]
    InvalidTemplate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: bad magic number at offset 0: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated at offset {offset}: needed {needed} bytes, file has {actual}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
        actual: usize,
    },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: label {value} at offset {offset} is not a digit class")]
    LabelOutOfRange {
        path: PathBuf,
        offset: usize,
        value: u8,
    },

    #[error("{path}: corrupt file: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("Hessian-vector product vanished for every random start ({attempts} attempts)")]
    ZeroOperator { attempts: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for malformed input files (as opposed to I/O or numerical trouble).
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::Truncated { .. }
                | Error::CountMismatch { .. }
                | Error::LabelOutOfRange { .. }
                | Error::Corrupt { .. }
                | Error::Json { .. }
        )
    }

    /// True for failures caused by the numbers themselves diverging.
    pub fn is_numerical_error(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NonFiniteLoss { .. }
                | Error::NonFiniteAngle(_)
                | Error::ZeroOperator { .. }
        )
    }
}
