//! Agents backed by a chat-completions style HTTP endpoint.
//!
//! Requests are `{"model", "temperature", "messages": [system, user]}`; the
//! image, when any, travels as a base64 data URL inside the user message.
//! Replies are read from `choices[0].message.content`.

use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    parse_candidates, parse_caption, parse_verdict, render, AgentError, Captioner, Proposer,
    ProposerRequest, TemplatePair, Templates, Verifier,
};
use crate::generation::ArtifactStore;
use crate::http::{post_with_retry, CallError, RetryPolicy, Semaphore, Transport};
use crate::model::{PromptRecord, VerifierVerdict};

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token. Empty
    /// means no authorization header.
    #[serde(default)]
    pub auth_token_env_var: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

fn default_retries() -> u32 {
    2
}

fn default_timeout() -> u64 {
    60_000
}

impl AgentEndpoint {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            auth_token_env_var: String::new(),
            temperature: 0.0,
            max_retries: default_retries(),
            timeout_ms: default_timeout(),
            max_concurrency: default_concurrency(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let url = url::Url::parse(&self.base_url)
            .map_err(|e| AgentError::Endpoint(format!("{}: {e}", self.base_url)))?;
        if !matches!(url.scheme(), "http" | "https") || url.cannot_be_a_base() {
            return Err(AgentError::Endpoint(format!(
                "{} is not an http(s) URL",
                self.base_url
            )));
        }
        if self.model_name.trim().is_empty() {
            return Err(AgentError::Endpoint("model_name is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(AgentError::Endpoint(format!(
                "temperature {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Rate-limited client for one endpoint.
pub struct ChatClient {
    endpoint: AgentEndpoint,
    transport: Arc<dyn Transport>,
    permits: Semaphore,
    policy: RetryPolicy,
}

impl ChatClient {
    pub fn new(endpoint: AgentEndpoint, transport: Arc<dyn Transport>) -> Result<Self, AgentError> {
        endpoint.validate()?;
        Ok(Self {
            permits: Semaphore::new(endpoint.max_concurrency),
            policy: RetryPolicy::new(endpoint.max_retries),
            endpoint,
            transport,
        })
    }

    pub fn with_retry(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn endpoint(&self) -> &AgentEndpoint {
        &self.endpoint
    }

    fn bearer(&self) -> Result<Option<String>, AgentError> {
        let var = self.endpoint.auth_token_env_var.trim();
        if var.is_empty() {
            return Ok(None);
        }
        match std::env::var(var) {
            Ok(token) if !token.is_empty() => Ok(Some(token)),
            _ => Err(AgentError::Auth(format!(
                "environment variable {var} is not set"
            ))),
        }
    }

    /// Request body for one exchange. Pure in its inputs.
    pub fn request_body(&self, system: &str, user: &str, image: Option<(&[u8], &str)>) -> Vec<u8> {
        let user_content = match image {
            None => Value::String(user.to_string()),
            Some((bytes, mime)) => json!([
                {"type": "text", "text": user},
                {"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{}", STANDARD.encode(bytes))}}
            ]),
        };
        let body = json!({
            "model": self.endpoint.model_name,
            "temperature": self.endpoint.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user_content}
            ]
        });
        serde_json::to_vec(&body).expect("chat body serializes")
    }

    /// One round trip, returning the assistant text.
    pub fn complete(
        &self,
        system: &str,
        user: &str,
        image: Option<(&[u8], &str)>,
    ) -> Result<String, AgentError> {
        let bearer = self.bearer()?;
        let body = self.request_body(system, user, image);
        let resp = {
            let _permit = self.permits.acquire();
            post_with_retry(
                self.transport.as_ref(),
                &self.endpoint.base_url,
                &body,
                bearer.as_deref(),
                Duration::from_millis(self.endpoint.timeout_ms),
                self.policy,
            )
        }
        .map_err(|e| match e {
            CallError::Auth(status) => AgentError::Auth(format!("HTTP {status}")),
            other => AgentError::Transport(other.to_string()),
        })?;
        let v: Value = serde_json::from_slice(&resp.body)
            .map_err(|e| AgentError::Protocol(format!("response is not JSON: {e}")))?;
        let content = &v["choices"][0]["message"]["content"];
        match content {
            Value::String(s) => Ok(s.clone()),
            Value::Array(parts) => Ok(parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join("")),
            _ => Err(AgentError::Protocol(
                "response has no choices[0].message.content".into(),
            )),
        }
    }

    /// Ask, then parse; protocol failures are re-asked up to `max_retries`
    /// times.
    fn ask<T>(
        &self,
        pair: &TemplatePair,
        user: &str,
        image: Option<(&[u8], &str)>,
        parse: impl Fn(&str) -> Result<T, AgentError>,
    ) -> Result<T, AgentError> {
        let mut attempt = 0;
        loop {
            let reply = self.complete(&pair.system, user, image)?;
            match parse(&reply) {
                Ok(v) => return Ok(v),
                Err(AgentError::Protocol(msg)) if attempt < self.endpoint.max_retries => {
                    attempt += 1;
                    tracing::warn!(model = %self.endpoint.model_name, attempt, "re-asking after protocol error: {msg}");
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn checklist_text(prompt: &PromptRecord) -> String {
    match &prompt.checklist {
        Some(items) if !items.is_empty() => items
            .iter()
            .map(|i| format!("- {i}"))
            .collect::<Vec<_>>()
            .join("\n"),
        _ => "none".to_string(),
    }
}

pub struct ChatVerifier {
    client: Arc<ChatClient>,
    templates: Arc<Templates>,
    store: ArtifactStore,
}

impl ChatVerifier {
    pub fn new(client: Arc<ChatClient>, templates: Arc<Templates>, store: ArtifactStore) -> Self {
        Self {
            client,
            templates,
            store,
        }
    }

    pub fn user_message(&self, prompt: &PromptRecord) -> String {
        render(
            &self.templates.verifier.user,
            &[
                ("positive_prompt", &prompt.positive_prompt),
                ("checklist", &checklist_text(prompt)),
            ],
        )
    }
}

impl Verifier for ChatVerifier {
    fn verify(
        &self,
        image_ref: &str,
        prompt: &PromptRecord,
    ) -> Result<VerifierVerdict, AgentError> {
        let image = self.store.load(image_ref)?;
        let user = self.user_message(prompt);
        self.client.ask(
            &self.templates.verifier,
            &user,
            Some((&image.bytes, image.mime)),
            parse_verdict,
        )
    }
}

pub struct ChatCaptioner {
    client: Arc<ChatClient>,
    templates: Arc<Templates>,
    store: ArtifactStore,
}

impl ChatCaptioner {
    pub fn new(client: Arc<ChatClient>, templates: Arc<Templates>, store: ArtifactStore) -> Self {
        Self {
            client,
            templates,
            store,
        }
    }
}

impl Captioner for ChatCaptioner {
    fn caption(&self, image_ref: &str) -> Result<String, AgentError> {
        let image = self.store.load(image_ref)?;
        let user = render(&self.templates.captioner.user, &[]);
        self.client.ask(
            &self.templates.captioner,
            &user,
            Some((&image.bytes, image.mime)),
            parse_caption,
        )
    }
}

pub struct ChatProposer {
    client: Arc<ChatClient>,
    templates: Arc<Templates>,
}

impl ChatProposer {
    pub fn new(client: Arc<ChatClient>, templates: Arc<Templates>) -> Self {
        Self { client, templates }
    }

    fn pair(&self, req: &ProposerRequest) -> &TemplatePair {
        if req.is_caption_conditioned() {
            &self.templates.proposer
        } else {
            &self.templates.proposer_prompt_only
        }
    }

    pub fn user_message(&self, req: &ProposerRequest) -> String {
        let fallbacks = serde_json::to_string(&req.fallbacks).expect("strings serialize");
        let k = req.k.to_string();
        render(
            &self.pair(req).user,
            &[
                ("positive_prompt", &req.positive_prompt),
                ("caption", req.caption.as_deref().unwrap_or("")),
                ("reason", req.reason.as_deref().unwrap_or("")),
                ("fallbacks", &fallbacks),
                ("k", &k),
            ],
        )
    }
}

impl Proposer for ChatProposer {
    fn propose_raw(&self, req: &ProposerRequest) -> Result<Vec<String>, AgentError> {
        let user = self.user_message(req);
        self.client
            .ask(self.pair(req), &user, None, parse_candidates)
    }
}
