use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("layout: {0}")]
    Layout(String),
    #[error("{module}: {source}")]
    Numerical {
        module: &'static str,
        #[source]
        source: qlink_core::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn field(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Field { path: path.into(), message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// Map a core error raised while building or running `module`. Parameter
    /// and layout errors are configuration problems and keep their field path
    /// under `prefix`.
    pub fn core(module: &'static str, prefix: &str, e: qlink_core::Error) -> Self {
        use qlink_core::Error as E;
        match e {
            E::InvalidParam { field, reason } => CliError::field(format!("{prefix}.{field}"), reason),
            E::Layout(msg) => CliError::Layout(msg),
            E::Io(source) => CliError::Io { path: module.into(), source },
            other => CliError::Numerical { module, source: other },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Field { .. } | CliError::Syntax(_) | CliError::Layout(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io { .. } => 4,
        }
    }
}
