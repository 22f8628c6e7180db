use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variables that override the matching config keys.
pub const ENV_BIND: &str = "UVMAKEUP_BIND";
pub const ENV_MODELS: &str = "UVMAKEUP_MODELS";
pub const ENV_STYLES: &str = "UVMAKEUP_STYLES";
pub const ENV_MAX_UPLOAD: &str = "UVMAKEUP_MAX_UPLOAD_BYTES";
pub const ENV_MAX_RESULTS: &str = "UVMAKEUP_MAX_RESULTS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid value `{value}` for {var}")]
    Env { var: &'static str, value: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Directory holding `color.ckpt` and `pattern.ckpt`.
    pub models: PathBuf,
    /// Style library directory, created on start.
    pub styles: PathBuf,
    pub max_upload_bytes: usize,
    /// Transfer results kept for `/api/result`; the oldest are evicted first.
    pub max_results: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            models: "models".into(),
            styles: "styles".into(),
            max_upload_bytes: 8 << 20,
            max_results: 64,
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    /// Applies overrides from `lookup` (the process environment in [`ServiceConfig::load`]).
    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        if let Some(v) = lookup(ENV_BIND) {
            self.bind = v;
        }
        if let Some(v) = lookup(ENV_MODELS) {
            self.models = v.into();
        }
        if let Some(v) = lookup(ENV_STYLES) {
            self.styles = v.into();
        }
        let number = |var: &'static str, v: String| v.parse::<usize>().map_err(|_| ConfigError::Env { var, value: v });
        if let Some(v) = lookup(ENV_MAX_UPLOAD) {
            self.max_upload_bytes = number(ENV_MAX_UPLOAD, v)?;
        }
        if let Some(v) = lookup(ENV_MAX_RESULTS) {
            self.max_results = number(ENV_MAX_RESULTS, v)?;
        }
        Ok(self)
    }

    /// Defaults, then the file if given, then the environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let base = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        base.with_overrides(|k| std::env::var(k).ok())
    }
}
