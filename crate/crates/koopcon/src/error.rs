use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the process exit classes used by the CLI:
/// configuration/usage problems exit 2, data/format problems exit 3, numeric
/// divergence exits 4. See [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensor shapes that must agree do not.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operation was called outside its contract (wrong rank, non-scalar
    /// backward root, out-of-range label, oracle scope, ...).
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },

    /// A byte stream does not follow its declared format.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// A payload ended before its header said it would.
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    /// Well-formed input that is semantically unusable (empty class, class
    /// smaller than a requested split, image/label count mismatch, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A configuration key is unknown, ill-typed or out of range.
    #[error("config error: {key}: {msg}")]
    Config { key: String, msg: String },

    /// A numeric quantity became non-finite, or a solver diverged.
    #[error("numeric error in {term}: {msg}")]
    Numeric { term: String, msg: String },

    /// A stored artifact cannot be used with the current configuration.
    #[error("incompatible artifact: {0}")]
    Compat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn contract(op: &'static str, msg: impl Into<String>) -> Error {
        Error::Contract {
            op,
            msg: msg.into(),
        }
    }

    pub fn format(offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Error {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn numeric(term: impl Into<String>, msg: impl Into<String>) -> Error {
        Error::Numeric {
            term: term.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit class for the CLI: 2 usage/config, 3 data/format, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Numeric { .. } => 4,
            _ => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_cli_contract() {
        assert_eq!(Error::config("alpha2", "must be >= 0").exit_code(), 2);
        assert_eq!(Error::numeric("l_w", "loss is NaN").exit_code(), 4);
        assert_eq!(Error::format(0, "bad magic").exit_code(), 3);
        assert_eq!(Error::Data("empty class 3".into()).exit_code(), 3);
        assert_eq!(
            Error::shape("matmul", &[2, 3], &[4, 2]).exit_code(),
            3
        );
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let msg = Error::shape("matmul", &[2, 3], &[4, 2]).to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }
}
