//! Image generation: request types, the content-addressed artifact store, a
//! deterministic mock generator and the HTTP client for a generation service.

pub(crate) mod mock;
mod remote;
mod store;

pub use mock::{mock_scene, MockGenerator, MockSceneConfig, SceneDescriptor, SceneObject};
pub use remote::RemoteGenerator;
pub use store::{ArtifactMeta, ArtifactStore, ImageArtifact, StoreError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::GeneratorParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub positive_prompt: String,
    pub negative_prompt: Option<String>,
    #[serde(flatten)]
    pub params: GeneratorParams,
    pub want_attention_dump: bool,
}

impl GenerationRequest {
    pub fn new(positive_prompt: impl Into<String>, params: GeneratorParams) -> Self {
        Self {
            positive_prompt: positive_prompt.into(),
            negative_prompt: None,
            params,
            want_attention_dump: false,
        }
    }

    pub fn with_negative(mut self, negative: impl Into<String>) -> Self {
        self.negative_prompt = Some(negative.into());
        self
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.positive_prompt.trim().is_empty() {
            return Err(GenerationError::InvalidRequest(
                "empty positive prompt".into(),
            ));
        }
        if self.params.steps < 1 {
            return Err(GenerationError::InvalidRequest("steps must be >= 1".into()));
        }
        if let Some(s) = self
            .params
            .negative_active_steps
            .iter()
            .find(|&&s| s < 1 || s > self.params.steps)
        {
            return Err(GenerationError::InvalidRequest(format!(
                "active step {s} outside [1, {}]",
                self.params.steps
            )));
        }
        Ok(())
    }

    /// Canonical JSON encoding; equal requests encode to equal bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("generation requests serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub image_ref: String,
    pub attention_dump_ref: Option<String>,
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("generator rejected a parameter: {0}")]
    UnsupportedParam(String),
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("generation transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationOutput, GenerationError>;
}
