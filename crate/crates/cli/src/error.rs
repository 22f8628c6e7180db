use std::path::PathBuf;

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] uvmakeup_core::Error),
    #[error(transparent)]
    Serve(#[from] uvmakeup_service::ServeError),
    #[error(transparent)]
    ServiceConfig(#[from] uvmakeup_service::ConfigError),
    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    ConfigParse { path: PathBuf, source: toml::de::Error },
    #[error("cannot start runtime: {0}")]
    Runtime(std::io::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Serve(uvmakeup_service::ServeError::Core(e)) => e.category(),
            CliError::Serve(uvmakeup_service::ServeError::Config(_)) => "config",
            CliError::Serve(_) | CliError::Runtime(_) | CliError::Io(_) => "io",
            CliError::ServiceConfig(_) | CliError::ConfigRead { .. } | CliError::ConfigParse { .. } => "config",
        }
    }

    /// The document printed on stderr when a command fails.
    pub fn to_json(&self) -> Value {
        let mut doc = json!({ "category": self.category(), "message": self.to_string() });
        if let CliError::Core(uvmakeup_core::Error::Geometry { role, source }) = self {
            doc["detail"] = json!({ "input": role, "reason": source.to_string() });
        }
        doc
    }
}
