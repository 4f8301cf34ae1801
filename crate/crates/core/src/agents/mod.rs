//! Verifier, captioner and proposer agents.
//!
//! Each role is a trait so the orchestrator can run against chat-completion
//! endpoints ([`chat`]) or the scene-reading mocks ([`mock`]). Proposers
//! return raw strings; [`propose`] applies the shared candidate hygiene.

pub mod chat;
pub mod mock;
pub mod templates;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::StoreError;
use crate::model::{
    validate_candidate, CandidateKind, NegativeCandidate, PromptRecord, VerifierVerdict,
};
use crate::text::{content_words, words};

pub use chat::{AgentEndpoint, ChatCaptioner, ChatClient, ChatProposer, ChatVerifier};
pub use mock::{SceneCaptioner, SceneProposer, SceneVerifier, ScriptedVerdict, ScriptedVerifier};
pub use templates::{render, TemplatePair, Templates};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent protocol violation: {0}")]
    Protocol(String),
    #[error("agent transport failure: {0}")]
    Transport(String),
    #[error("agent authorization failed: {0}")]
    Auth(String),
    #[error("proposer produced no usable candidates")]
    NoCandidates,
    #[error("invalid agent endpoint: {0}")]
    Endpoint(String),
    #[error(transparent)]
    Image(#[from] StoreError),
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::Protocol(_) => "AGENT_PROTOCOL",
            AgentError::Transport(_) => "TRANSPORT",
            AgentError::Auth(_) => "AUTH",
            AgentError::NoCandidates => "NO_CANDIDATES",
            AgentError::Endpoint(_) => "INVALID_ENDPOINT",
            AgentError::Image(_) => "ARTIFACT",
        }
    }
}

/// Inputs to a proposer call. `reason` and `caption` are absent in
/// prompt-only mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerRequest {
    pub positive_prompt: String,
    pub reason: Option<String>,
    pub caption: Option<String>,
    pub fallbacks: Vec<String>,
    pub k: u32,
}

impl ProposerRequest {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.k < 1 {
            return Err(AgentError::Protocol("proposer k must be >= 1".into()));
        }
        if self.reason.is_some() != self.caption.is_some() {
            return Err(AgentError::Protocol(
                "caption-conditioned requests need both reason and caption".into(),
            ));
        }
        Ok(())
    }

    pub fn is_caption_conditioned(&self) -> bool {
        self.caption.is_some()
    }
}

pub trait Verifier: Send + Sync {
    fn verify(&self, image_ref: &str, prompt: &PromptRecord)
        -> Result<VerifierVerdict, AgentError>;
}

pub trait Captioner: Send + Sync {
    fn caption(&self, image_ref: &str) -> Result<String, AgentError>;
}

pub trait Proposer: Send + Sync {
    /// Candidate strings exactly as the model returned them.
    fn propose_raw(&self, req: &ProposerRequest) -> Result<Vec<String>, AgentError>;
}

/// Propose and sanitize: at most `k` validated, deduplicated candidates,
/// topped up from the fallbacks and ranked in emission order.
pub fn propose(
    proposer: &dyn Proposer,
    req: &ProposerRequest,
) -> Result<Vec<NegativeCandidate>, AgentError> {
    req.validate()?;
    let raw = proposer.propose_raw(req)?;
    sanitize(req, &raw)
}

pub fn sanitize(
    req: &ProposerRequest,
    raw: &[String],
) -> Result<Vec<NegativeCandidate>, AgentError> {
    let k = req.k as usize;
    let prompt_words: HashSet<String> = words(&req.positive_prompt).into_iter().collect();
    let reason_words: HashSet<String> = req
        .reason
        .as_deref()
        .map(words)
        .unwrap_or_default()
        .into_iter()
        .collect();
    let mut seen: HashSet<String> = HashSet::new();
    let mut out: Vec<(String, CandidateKind)> = Vec::new();

    for text in raw {
        let normalized = match validate_candidate(text) {
            Ok(t) => t,
            Err(v) => {
                tracing::debug!(candidate = %text, violations = ?v, "dropping invalid candidate");
                continue;
            }
        };
        let content = content_words(&normalized);
        if content.iter().all(|w| prompt_words.contains(w)) {
            tracing::debug!(candidate = %normalized, "dropping candidate already in the prompt");
            continue;
        }
        if !seen.insert(normalized.clone()) {
            continue;
        }
        let kind = if content.iter().any(|w| reason_words.contains(w)) {
            CandidateKind::Targeted
        } else {
            CandidateKind::Untargeted
        };
        out.push((normalized, kind));
    }
    for text in &req.fallbacks {
        if out.len() >= k {
            break;
        }
        match validate_candidate(text) {
            Ok(t) if seen.insert(t.clone()) => out.push((t, CandidateKind::Fallback)),
            Ok(_) => {}
            Err(v) => tracing::warn!(fallback = %text, violations = ?v, "invalid fallback skipped"),
        }
    }
    out.truncate(k);
    if out.is_empty() {
        return Err(AgentError::NoCandidates);
    }
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(i, (text, kind))| NegativeCandidate::new(text, kind, i as u32))
        .collect())
}

/// Remove a surrounding Markdown code fence, if any.
pub fn strip_code_fences(reply: &str) -> &str {
    let t = reply.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let body = match rest.find('\n') {
        Some(i) => &rest[i + 1..],
        None => rest,
    };
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

#[derive(Deserialize)]
struct RawVerdict {
    correct: serde_json::Value,
    score: f64,
    reason: String,
}

/// Parse `{"correct":0|1,"score":x,"reason":"..."}`, strictly, after fence
/// stripping. Booleans are accepted for `correct`; the score is clamped.
pub fn parse_verdict(reply: &str) -> Result<VerifierVerdict, AgentError> {
    let body = strip_code_fences(reply);
    let raw: RawVerdict = serde_json::from_str(body).map_err(|e| {
        AgentError::Protocol(format!("verifier reply is not the expected JSON: {e}"))
    })?;
    let correct = match &raw.correct {
        serde_json::Value::Bool(b) => *b,
        serde_json::Value::Number(n) if n.as_f64() == Some(1.0) => true,
        serde_json::Value::Number(n) if n.as_f64() == Some(0.0) => false,
        other => {
            return Err(AgentError::Protocol(format!(
                "`correct` must be 0 or 1, got {other}"
            )))
        }
    };
    if !(0.0..=1.0).contains(&raw.score) {
        tracing::warn!(score = raw.score, "verifier score outside [0, 1]; clamping");
    }
    Ok(VerifierVerdict::new(correct, raw.score, raw.reason))
}

#[derive(Deserialize)]
struct RawCandidates {
    candidates: Vec<serde_json::Value>,
}

/// Parse `{"candidates":[...]}`. Non-string entries are skipped.
pub fn parse_candidates(reply: &str) -> Result<Vec<String>, AgentError> {
    let body = strip_code_fences(reply);
    let raw: RawCandidates = serde_json::from_str(body).map_err(|e| {
        AgentError::Protocol(format!("proposer reply is not the expected JSON: {e}"))
    })?;
    Ok(raw
        .candidates
        .into_iter()
        .filter_map(|v| match v {
            serde_json::Value::String(s) => Some(s),
            other => {
                tracing::warn!(item = %other, "non-string candidate skipped");
                None
            }
        })
        .collect())
}

pub fn parse_caption(reply: &str) -> Result<String, AgentError> {
    let t = reply.trim();
    if t.is_empty() {
        return Err(AgentError::Protocol("empty caption".into()));
    }
    Ok(t.to_string())
}
