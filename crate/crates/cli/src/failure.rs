//! Exit codes and the machine-readable error record written to stderr.

use serde::Serialize;

use rtprobe_core::Error;

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl Failure {
    pub fn validation(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            exit_code: EXIT_VALIDATION,
        }
    }

    pub fn internal(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            exit_code: EXIT_INTERNAL,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

/// Problems with the inputs are validation failures; numerical and I/O
/// trouble while running is internal.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Io { .. } => "io",
            Error::BadMagic(_) | Error::UnsupportedVersion(_) | Error::Format(_) => "trace_format",
            Error::Invariant { .. } | Error::EmptyDocument(_) | Error::Shape(_) => "trace_invariant",
            Error::Corpus(_) | Error::Csv(_) => "corpus",
            Error::Alignment(_) => "alignment",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Json(_) => "json",
            Error::NonFinite(_) => "non_finite",
            Error::Dimension { .. } => "dimension",
            Error::Singular(_) => "singular",
        };
        let internal = matches!(
            e,
            Error::Io { .. } | Error::NonFinite(_) | Error::Dimension { .. } | Error::Singular(_)
        );
        if internal {
            Failure::internal(kind, e.to_string())
        } else {
            Failure::validation(kind, e.to_string())
        }
    }
}
