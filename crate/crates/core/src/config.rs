//! Run configuration: a TOML file whose every field has a default.
//!
//! ```toml
//! test_corpus = "data/test.jsonl"
//! pool_corpus = "data/pool.jsonl"
//! strategy = "dense"
//! modes = ["zero", "similar_demo", "pads"]
//! model_path = "out/ranker.json"
//!
//! [generation]
//! k = 5
//! max_format_retries = 5
//!
//! [provider]
//! kind = "hashed"
//!
//! [transport]
//! kind = "replay"
//! replay_path = "fixtures/replay.jsonl"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EvalConfig, EvalMode};
use crate::llm::{
    ChatTransport, GenerationConfig, LiveTransport, LlmError, RecordingTransport, ReplayTransport,
    RetryPolicy,
};
use crate::ranker::TrainConfig;
use crate::retrieval::{
    EmbeddingProvider, HashedProjection, PrecomputedEmbeddings, ProviderError, RemoteEmbeddings,
    Strategy,
};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Hashed,
    Precomputed,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    /// Vector size for `hashed` and `remote`.
    pub dim: usize,
    /// Seed of the hashed projection.
    pub seed: u64,
    /// Embedding file for `precomputed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Endpoint for `remote`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub api_key_env: String,
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec {
            kind: ProviderKind::Hashed,
            dim: HashedProjection::DEFAULT_DIM,
            seed: HashedProjection::DEFAULT_SEED,
            path: None,
            endpoint: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
        }
    }
}

impl ProviderSpec {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, ConfigError> {
        Ok(match self.kind {
            ProviderKind::Hashed => Box::new(HashedProjection::new(self.dim, self.seed)),
            ProviderKind::Precomputed => {
                let path = self.path.as_ref().ok_or_else(|| invalid("provider.path", "required"))?;
                Box::new(PrecomputedEmbeddings::load(path)?)
            }
            ProviderKind::Remote => {
                let url = self.endpoint.clone().ok_or_else(|| invalid("provider.endpoint", "required"))?;
                let token = std::env::var(&self.api_key_env).ok().filter(|t| !t.is_empty());
                Box::new(RemoteEmbeddings::new(url, token, self.dim))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Replay,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSpec {
    pub kind: TransportKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_path: Option<PathBuf>,
    /// Chat completions URL for `live`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub api_key_env: String,
    /// Append every live exchange to this replay file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_path: Option<PathBuf>,
    /// Network retries per request (live only).
    pub max_retries: usize,
}

impl Default for TransportSpec {
    fn default() -> Self {
        TransportSpec {
            kind: TransportKind::Replay,
            replay_path: None,
            endpoint: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            record_path: None,
            max_retries: RetryPolicy::default().max_retries,
        }
    }
}

impl TransportSpec {
    pub fn build(&self) -> Result<Box<dyn ChatTransport>, ConfigError> {
        match self.kind {
            TransportKind::Replay => {
                let path = self
                    .replay_path
                    .as_ref()
                    .ok_or_else(|| invalid("transport.replay_path", "required for replay transport"))?;
                Ok(Box::new(ReplayTransport::load(path)?))
            }
            TransportKind::Live => {
                let url = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| invalid("transport.endpoint", "required for live transport"))?;
                let live = LiveTransport::from_env(url, &self.api_key_env);
                Ok(match &self.record_path {
                    Some(path) => Box::new(RecordingTransport::new(live, path)?),
                    None => Box::new(live),
                })
            }
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        match self.kind {
            TransportKind::Replay => RetryPolicy::none(),
            TransportKind::Live => RetryPolicy {
                max_retries: self.max_retries,
                ..RetryPolicy::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_corpus: Option<PathBuf>,
    /// Training-instance file for `train-ranker`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_instances: Option<PathBuf>,
    pub strategy: Strategy,
    pub modes: Vec<EvalMode>,
    pub seed: u64,
    pub concurrency: usize,
    pub exclude_self: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub generation: GenerationConfig,
    pub training: TrainConfig,
    pub provider: ProviderSpec,
    pub transport: TransportSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            test_corpus: None,
            pool_corpus: None,
            train_instances: None,
            strategy: Strategy::Dense,
            modes: Vec::new(),
            seed: 0,
            concurrency: 4,
            exclude_self: true,
            model_path: None,
            output_dir: PathBuf::from("out"),
            generation: GenerationConfig::default(),
            training: TrainConfig::default(),
            provider: ProviderSpec::default(),
            transport: TransportSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that the fields agree with each other.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.modes.contains(&EvalMode::Pads) && self.model_path.is_none() {
            return Err(invalid("model_path", "pads mode needs a trained model"));
        }
        if self.transport.kind == TransportKind::Live
            && self.transport.endpoint.as_deref().is_none_or(|u| u.trim().is_empty())
        {
            return Err(invalid("transport.endpoint", "live transport needs an endpoint URL"));
        }
        match self.provider.kind {
            ProviderKind::Precomputed if self.provider.path.is_none() => {
                return Err(invalid("provider.path", "precomputed provider needs an embedding file"))
            }
            ProviderKind::Remote if self.provider.endpoint.as_deref().is_none_or(|u| u.trim().is_empty()) => {
                return Err(invalid("provider.endpoint", "remote provider needs an endpoint URL"))
            }
            ProviderKind::Hashed | ProviderKind::Remote if self.provider.dim == 0 => {
                return Err(invalid("provider.dim", "must be positive"))
            }
            _ => {}
        }
        if self.concurrency == 0 {
            return Err(invalid("concurrency", "must be at least 1"));
        }
        self.generation
            .validate()
            .map_err(|e| invalid("generation", e.to_string()))?;
        self.training
            .validate()
            .map_err(|e| invalid("training", e.to_string()))?;
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            generation: self.generation.clone(),
            retry: self.transport.retry_policy(),
            strategy: self.strategy,
            seed: self.seed,
            concurrency: self.concurrency,
            exclude_self: self.exclude_self,
        }
    }
}

/// Reads, parses and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg = RunConfig::from_toml(&text, path)?;
    cfg.validate()?;
    Ok(cfg)
}
