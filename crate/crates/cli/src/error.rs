//! Failures and their exit codes.

use std::fmt;
use std::path::Path;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;
pub const EXIT_SCHEMA: i32 = 4;
pub const EXIT_MODEL: i32 = 5;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or parameter grids.
    Usage(String),
    /// An input or prior-stage output is absent or unreadable.
    MissingInput { path: String, message: String },
    /// A file exists but does not match its expected layout.
    Schema { file: String, message: String },
    /// Fitting or scoring failed, including infeasible grid entries.
    Model(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> CliError {
        CliError::MissingInput {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn schema(path: &Path, message: impl fmt::Display) -> CliError {
        CliError::Schema {
            file: path.display().to_string(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::MissingInput { .. } => EXIT_MISSING_INPUT,
            CliError::Schema { .. } => EXIT_SCHEMA,
            CliError::Model(_) => EXIT_MODEL,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingInput { .. } => "missing_input",
            CliError::Schema { .. } => "schema",
            CliError::Model(_) => "model",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Model(m) => f.write_str(m),
            CliError::MissingInput { path, message } => write!(f, "{path}: {message}"),
            CliError::Schema { file, message } => write!(f, "{file}: {message}"),
        }
    }
}

impl std::error::Error for CliError {}

/// One structured stderr line: `readmit: <level> stage=<s> key=value ...`.
pub fn diagnostic(level: &str, stage: &str, fields: &[(&str, String)]) -> String {
    let mut line = format!("readmit: {level} stage={stage}");
    for (k, v) in fields {
        if v.chars().any(|c| c.is_whitespace() || c == '"' || c == '=') {
            line.push_str(&format!(" {k}={v:?}"));
        } else {
            line.push_str(&format!(" {k}={v}"));
        }
    }
    line
}

pub fn error_diagnostic(stage: &str, e: &CliError) -> String {
    let mut fields = vec![
        ("kind", e.kind().to_string()),
        ("exit", e.exit_code().to_string()),
    ];
    match e {
        CliError::MissingInput { path, message } => {
            fields.push(("file", path.clone()));
            fields.push(("message", message.clone()));
        }
        CliError::Schema { file, message } => {
            fields.push(("file", file.clone()));
            fields.push(("message", message.clone()));
        }
        CliError::Usage(m) | CliError::Model(m) => fields.push(("message", m.clone())),
    }
    diagnostic("error", stage, &fields)
}
