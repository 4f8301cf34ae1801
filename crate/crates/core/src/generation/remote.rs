use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Deserialize;

use super::store::{ArtifactMeta, ArtifactStore};
use super::{GenerationError, GenerationOutput, GenerationRequest, Generator};
use crate::attention::read_dump;
use crate::http::{post_with_retry, CallError, RetryPolicy, Transport};

#[derive(Debug, Deserialize)]
struct GenerateResponse {
    image: String,
    #[serde(default)]
    attention_dump: Option<String>,
}

fn sniff_ext(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "png"
    } else if bytes.starts_with(b"BM") {
        "bmp"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "jpg"
    } else if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        "webp"
    } else {
        "bin"
    }
}

/// Client for `POST {base}/generate`, storing returned bytes locally.
pub struct RemoteGenerator {
    url: String,
    transport: Arc<dyn Transport>,
    store: ArtifactStore,
    policy: RetryPolicy,
    timeout: Duration,
}

impl RemoteGenerator {
    pub fn new(base_url: &str, transport: Arc<dyn Transport>, store: ArtifactStore) -> Self {
        Self {
            url: format!("{}/generate", base_url.trim_end_matches('/')),
            transport,
            store,
            policy: RetryPolicy::new(2),
            timeout: Duration::from_secs(600),
        }
    }

    pub fn with_retry(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationOutput, GenerationError> {
        req.validate()?;
        let body = req.canonical_bytes();
        let resp = post_with_retry(
            self.transport.as_ref(),
            &self.url,
            &body,
            None,
            self.timeout,
            self.policy,
        )
        .map_err(|e| match e {
            CallError::Status { status: 422, body } => GenerationError::UnsupportedParam(body),
            CallError::Status { status: 500, body } => GenerationError::GenerationFailed(body),
            other => GenerationError::Transport(other.to_string()),
        })?;
        let parsed: GenerateResponse = serde_json::from_slice(&resp.body).map_err(|e| {
            GenerationError::GenerationFailed(format!("bad /generate response: {e}"))
        })?;
        let image = STANDARD
            .decode(parsed.image.as_bytes())
            .map_err(|e| GenerationError::GenerationFailed(format!("image is not base64: {e}")))?;
        let image_ref = self.store.put(&image, sniff_ext(&image))?;
        self.store.put_meta(
            &image_ref,
            &ArtifactMeta {
                request: req.clone(),
                scene: None,
            },
        )?;
        let attention_dump_ref = match (req.want_attention_dump, parsed.attention_dump) {
            (true, Some(b64)) => {
                let bytes = STANDARD.decode(b64.as_bytes()).map_err(|e| {
                    GenerationError::GenerationFailed(format!("attention dump is not base64: {e}"))
                })?;
                read_dump(bytes.as_slice()).map_err(|e| {
                    GenerationError::GenerationFailed(format!("attention dump: {e}"))
                })?;
                Some(self.store.put(&bytes, "npcattn")?)
            }
            (true, None) => {
                tracing::warn!(url = %self.url, "generator did not return an attention dump; capability unsupported");
                None
            }
            (false, _) => None,
        };
        Ok(GenerationOutput {
            image_ref,
            attention_dump_ref,
        })
    }
}
