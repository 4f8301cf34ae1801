//! TOML configuration and client wiring.
//!
//! Sections: `[pipeline]`, `[endpoints.verifier|captioner|proposer]`,
//! `[embedding]`, `[generator]`, `[mock]` and `[templates]`. Credentials
//! are referenced by environment variable name only.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentEndpoint, AgentError, ChatCaptioner, ChatClient, ChatProposer, ChatVerifier,
    SceneCaptioner, SceneProposer, SceneVerifier, Templates,
};
use crate::embedding::{CachedBackend, MockEmbeddingBackend, RemoteEmbeddingBackend};
use crate::generation::{ArtifactStore, MockGenerator, MockSceneConfig, RemoteGenerator};
use crate::http::{RetryPolicy, Transport};
use crate::model::{ModelError, PipelineConfig};
use crate::orchestrator::Clients;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("config: {0}")]
    Missing(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("template overrides: {0}")]
    Templates(std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    pub backend: Backend,
    /// Sidecar base URL; `/embed` is appended.
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Mock backend seed and width.
    pub seed: u64,
    pub dim: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            base_url: "http://127.0.0.1:8765".into(),
            timeout_ms: 30_000,
            max_retries: 2,
            seed: 0,
            dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSection {
    pub backend: Backend,
    /// Sidecar base URL; `/generate` is appended.
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            base_url: "http://127.0.0.1:8765".into(),
            timeout_ms: 300_000,
            max_retries: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub verifier: AgentEndpoint,
    pub captioner: AgentEndpoint,
    pub proposer: AgentEndpoint,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateSection {
    /// Directory whose files replace the built-in templates.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NpcConfig {
    pub pipeline: PipelineConfig,
    pub endpoints: Option<Endpoints>,
    pub embedding: EmbeddingSection,
    pub generator: GeneratorSection,
    pub mock: MockSceneConfig,
    pub templates: TemplateSection,
}

impl NpcConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: NpcConfig = toml::from_str(text)?;
        cfg.pipeline.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Offline clients: scene-model generator and agents, hashed embeddings.
    /// Nothing here touches the network.
    pub fn mock_clients(&self, store: ArtifactStore) -> Clients {
        Clients {
            generator: Arc::new(MockGenerator::new(store.clone(), self.mock)),
            verifier: Arc::new(SceneVerifier::new(store.clone())),
            captioner: Arc::new(SceneCaptioner::new(store)),
            proposer: Arc::new(SceneProposer::new()),
            embedding: Arc::new(
                MockEmbeddingBackend::new(self.embedding.seed).with_dim(self.embedding.dim),
            ),
        }
    }

    /// Clients as configured. Sections set to `mock` use the offline
    /// implementation; agents are always remote and need `[endpoints]`.
    pub fn clients(
        &self,
        store: ArtifactStore,
        transport: Arc<dyn Transport>,
    ) -> Result<Clients, ConfigError> {
        let eps = self.endpoints.as_ref().ok_or_else(|| {
            ConfigError::Missing("[endpoints] is required unless running with --mock".into())
        })?;
        let templates = Arc::new(match &self.templates.dir {
            Some(dir) => Templates::with_overrides(dir).map_err(ConfigError::Templates)?,
            None => Templates::builtin(),
        });
        let client = |ep: &AgentEndpoint| -> Result<Arc<ChatClient>, ConfigError> {
            Ok(Arc::new(ChatClient::new(ep.clone(), transport.clone())?))
        };

        let generator: Arc<dyn crate::generation::Generator> = match self.generator.backend {
            Backend::Mock => Arc::new(MockGenerator::new(store.clone(), self.mock)),
            Backend::Remote => Arc::new(
                RemoteGenerator::new(&self.generator.base_url, transport.clone(), store.clone())
                    .with_retry(RetryPolicy::new(self.generator.max_retries))
                    .with_timeout(Duration::from_millis(self.generator.timeout_ms)),
            ),
        };
        let embedding: Arc<dyn crate::embedding::EmbeddingBackend> = match self.embedding.backend {
            Backend::Mock => Arc::new(
                MockEmbeddingBackend::new(self.embedding.seed).with_dim(self.embedding.dim),
            ),
            Backend::Remote => Arc::new(CachedBackend::new(
                RemoteEmbeddingBackend::new(&self.embedding.base_url, transport.clone())
                    .with_retry(RetryPolicy::new(self.embedding.max_retries))
                    .with_timeout(Duration::from_millis(self.embedding.timeout_ms)),
            )),
        };
        Ok(Clients {
            generator,
            verifier: Arc::new(ChatVerifier::new(
                client(&eps.verifier)?,
                templates.clone(),
                store.clone(),
            )),
            captioner: Arc::new(ChatCaptioner::new(
                client(&eps.captioner)?,
                templates.clone(),
                store,
            )),
            proposer: Arc::new(ChatProposer::new(client(&eps.proposer)?, templates)),
            embedding,
        })
    }
}
