use std::path::PathBuf;

use thiserror::Error;

use crate::annotation_store::CoordSpace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON at byte {offset} (line {line}, column {column}): {message}")]
    Json {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("annotation references unknown image id {0:?}")]
    DanglingImage(String),

    #[error("coordinate space mismatch: {left} vs {right}")]
    SpaceMismatch { left: CoordSpace, right: CoordSpace },

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    DimMismatch {
        axis: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid npy data: {0}")]
    Npy(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Converts a serde_json error into [`Error::Json`], resolving the
    /// reported line/column into a byte offset within `input`.
    pub fn json(input: &str, err: &serde_json::Error) -> Self {
        let (line, column) = (err.line(), err.column());
        Error::Json {
            offset: byte_offset(input, line, column),
            line,
            column,
            message: err.to_string(),
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = input
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(input.len())
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_error_reports_byte_offset() {
        let input = "{\n  \"a\": 1,\n  \"b\": ]\n}";
        let err = serde_json::from_str::<serde_json::Value>(input).unwrap_err();
        match Error::json(input, &err) {
            Error::Json { offset, line, .. } => {
                assert_eq!(line, 3);
                assert_eq!(&input[offset..offset + 1], "]");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
