use std::path::{Path, PathBuf};

use serde::Serialize;

/// Failure reported as JSON on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: "config",
            message: message.into(),
            path: None,
            exit_code: 2,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError {
            kind: "io",
            message: format!("{}: {e}", path.display()),
            path: Some(path.to_path_buf()),
            exit_code: 2,
        }
    }

    pub fn with_path(mut self, path: &Path) -> Self {
        self.path = Some(path.to_path_buf());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<degradation_core::Error> for CliError {
    fn from(e: degradation_core::Error) -> Self {
        let numeric = e.is_numeric();
        CliError {
            kind: if numeric { "numeric" } else { "input" },
            message: e.to_string(),
            path: None,
            exit_code: if numeric { 1 } else { 2 },
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::config(e.to_string())
    }
}
