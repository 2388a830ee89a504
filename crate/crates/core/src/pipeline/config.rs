use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{
    BackendError, Gateway, GatewayConfig, LiveBackend, LlmBackend, ScriptedBackend, DEFAULT_TEMPERATURE,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown backend `{0}` (expected scripted:<path> or live:<model>)")]
    UnknownBackend(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Scripted(PathBuf),
    Live(String),
}

impl BackendSpec {
    pub fn parse(text: &str) -> Result<BackendSpec, ConfigError> {
        match text.split_once(':') {
            Some(("scripted", p)) if !p.is_empty() => Ok(BackendSpec::Scripted(PathBuf::from(p))),
            Some(("live", m)) if !m.is_empty() => Ok(BackendSpec::Live(m.to_string())),
            _ => Err(ConfigError::UnknownBackend(text.to_string())),
        }
    }

    /// `base_url` overrides the environment for live backends.
    pub fn build(&self, base_url: Option<&str>) -> Result<Arc<dyn LlmBackend>, ConfigError> {
        Ok(match self {
            BackendSpec::Scripted(p) => Arc::new(ScriptedBackend::from_path(p)?),
            BackendSpec::Live(model) => match base_url {
                Some(url) => Arc::new(LiveBackend::new(url, model.clone(), std::env::var(LiveBackend::API_KEY_ENV).ok())),
                None => Arc::new(LiveBackend::from_env(model.clone())),
            },
        })
    }
}

/// Settings for a run, readable from a TOML file. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `scripted:<path>` or `live:<model>`.
    pub backend: Option<String>,
    pub base_url: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub chunk_size: usize,
    pub parallelism: usize,
    pub batch_budget: usize,
    pub optimize: bool,
    pub llm_optimize: bool,
    pub retain_trace: bool,
    /// Rows shown to the model when a table is rendered into a prompt.
    pub prompt_row_limit: usize,
    /// Concurrent records in a benchmark run.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let g = GatewayConfig::default();
        PipelineConfig {
            backend: None,
            base_url: None,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: g.max_tokens,
            max_retries: g.max_retries,
            chunk_size: g.chunk_size,
            parallelism: g.parallelism,
            batch_budget: g.batch_budget,
            optimize: true,
            llm_optimize: false,
            retain_trace: true,
            prompt_row_limit: 50,
            workers: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<PipelineConfig, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            max_retries: self.max_retries,
            chunk_size: self.chunk_size.max(1),
            parallelism: self.parallelism.max(1),
            batch_budget: self.batch_budget.max(1),
        }
    }

    pub fn backend_spec(&self) -> Result<BackendSpec, ConfigError> {
        BackendSpec::parse(self.backend.as_deref().unwrap_or(""))
    }

    /// Builds the configured backend and a gateway over it.
    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        let backend = self.backend_spec()?.build(self.base_url.as_deref())?;
        Ok(Gateway::new(backend, self.gateway_config()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = PipelineConfig::from_toml("chunk_size = 7\noptimize = false\nbackend = \"live:gpt-4o-mini\"").unwrap();
        assert_eq!(c.chunk_size, 7);
        assert!(!c.optimize);
        assert_eq!(c.temperature, DEFAULT_TEMPERATURE);
        assert_eq!(c.backend_spec().unwrap(), BackendSpec::Live("gpt-4o-mini".into()));
        assert!(PipelineConfig::from_toml("chunk = 7").is_err());
    }

    #[test]
    fn backend_specs() {
        assert_eq!(
            BackendSpec::parse("scripted:a/b.json").unwrap(),
            BackendSpec::Scripted("a/b.json".into())
        );
        assert!(BackendSpec::parse("mock").is_err());
        assert!(BackendSpec::parse("live:").is_err());
    }
}
