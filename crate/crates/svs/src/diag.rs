//! Error classification and single-line JSON diagnostics.

use std::fmt;
use std::io::ErrorKind;

use serde::Serialize;
use svs_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Validation,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { kind: Kind::Validation, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { kind: Kind::Internal, message: message.into() }
    }

    /// Process exit status: 1 for bad input, 2 for internal faults.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Validation => 1,
            Kind::Internal => 2,
        }
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            level: &'static str,
            kind: Kind,
            message: &'a str,
        }
        let message = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        serde_json::to_string(&Line { level: "error", kind: self.kind, message: &message })
            .expect("diagnostic serialises")
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let user_side = match &e {
            Error::Io { source, .. } => matches!(
                source.kind(),
                ErrorKind::NotFound | ErrorKind::InvalidData | ErrorKind::UnexpectedEof
            ),
            other => other.is_validation(),
        };
        if user_side {
            Self::validation(e.to_string())
        } else {
            Self::internal(e.to_string())
        }
    }
}
