use std::fmt;

use serde::Serialize;

/// Error reported on stderr as `{"error": kind, "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliError {
    #[serde(rename = "error")]
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.to_string(),
            message: message.into(),
        }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        CliError::new("schema", message)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<misalign::Error> for CliError {
    fn from(e: misalign::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}
