//! Offline agents that read the symbolic scene the mock generator stores
//! next to each image, plus a verifier with scripted verdicts.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{AgentError, Captioner, Proposer, ProposerRequest, Verifier};
use crate::generation::mock::{parse_objects, wrong_color};
use crate::generation::{ArtifactStore, SceneDescriptor};
use crate::model::{PromptRecord, VerifierVerdict};

fn load_scene(store: &ArtifactStore, image_ref: &str) -> Result<SceneDescriptor, AgentError> {
    store
        .load(image_ref)?
        .meta
        .and_then(|m| m.scene)
        .ok_or_else(|| AgentError::Protocol(format!("{image_ref} has no scene description")))
}

/// Scores the fraction of requested objects rendered correctly, with a
/// small bonus for an uncluttered background.
pub fn scene_verdict(scene: &SceneDescriptor) -> VerifierVerdict {
    let score = 0.9 * scene.satisfied_fraction() + 0.1 / (1.0 + scene.background.len() as f64);
    if scene.is_correct() {
        return VerifierVerdict::new(
            true,
            score,
            "all requested objects are present as described",
        );
    }
    let reason = scene
        .failures()
        .map(|o| {
            format!(
                "expected {} but found {}",
                o.requested_text(),
                o.rendered_text()
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    VerifierVerdict::new(false, score, reason)
}

pub struct SceneVerifier {
    store: ArtifactStore,
    calls: AtomicUsize,
}

impl SceneVerifier {
    pub fn new(store: ArtifactStore) -> Self {
        Self {
            store,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Verifier for SceneVerifier {
    fn verify(
        &self,
        image_ref: &str,
        _prompt: &PromptRecord,
    ) -> Result<VerifierVerdict, AgentError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(scene_verdict(&load_scene(&self.store, image_ref)?))
    }
}

pub struct SceneCaptioner {
    store: ArtifactStore,
    calls: AtomicUsize,
}

impl SceneCaptioner {
    pub fn new(store: ArtifactStore) -> Self {
        Self {
            store,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Captioner for SceneCaptioner {
    fn caption(&self, image_ref: &str) -> Result<String, AgentError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(load_scene(&self.store, image_ref)?.caption())
    }
}

/// Proposes what the verifier says was found instead of what was asked,
/// then the caption's background elements. Prompt-only requests get
/// count and color variants of each requested object.
#[derive(Default)]
pub struct SceneProposer {
    calls: AtomicUsize,
}

impl SceneProposer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn found_phrases(reason: &str) -> Vec<String> {
    reason
        .split(';')
        .filter_map(|part| {
            part.split_once(" but found ")
                .map(|(_, f)| f.trim().to_string())
        })
        .collect()
}

fn background_phrases(caption: &str) -> Vec<String> {
    caption
        .split_once("Background elements:")
        .map(|(_, rest)| {
            rest.trim()
                .trim_end_matches('.')
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

impl Proposer for SceneProposer {
    fn propose_raw(&self, req: &ProposerRequest) -> Result<Vec<String>, AgentError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut out = Vec::new();
        match (&req.reason, &req.caption) {
            (Some(reason), Some(caption)) => {
                out.extend(found_phrases(reason));
                out.extend(background_phrases(caption));
            }
            _ => {
                for o in parse_objects(&req.positive_prompt) {
                    let n = o.requested_count;
                    if n > 1 {
                        out.push(o.describe(n - 1, o.requested_color.as_deref()));
                    }
                    out.push(o.describe(n + 1, o.requested_color.as_deref()));
                    if let Some(c) = &o.requested_color {
                        out.push(o.describe(n, Some(&wrong_color(c, 0))));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One scripted verdict; `negative: null` addresses the base image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedVerdict {
    pub prompt_id: String,
    #[serde(default)]
    pub negative: Option<String>,
    pub verdict: VerifierVerdict,
}

/// Verdicts keyed by `(prompt_id, negative prompt)`, read from the image's
/// stored request. Unscripted images go to the inner verifier.
pub struct ScriptedVerifier {
    store: ArtifactStore,
    script: HashMap<(String, Option<String>), VerifierVerdict>,
    inner: Box<dyn Verifier>,
    calls: AtomicUsize,
}

impl ScriptedVerifier {
    pub fn new(store: ArtifactStore, inner: Box<dyn Verifier>) -> Self {
        Self {
            store,
            script: HashMap::new(),
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with(
        mut self,
        prompt_id: &str,
        negative: Option<&str>,
        verdict: VerifierVerdict,
    ) -> Self {
        self.script
            .insert((prompt_id.to_string(), negative.map(String::from)), verdict);
        self
    }

    pub fn with_script(self, entries: impl IntoIterator<Item = ScriptedVerdict>) -> Self {
        entries.into_iter().fold(self, |v, e| {
            v.with(&e.prompt_id, e.negative.as_deref(), e.verdict)
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Verifier for ScriptedVerifier {
    fn verify(
        &self,
        image_ref: &str,
        prompt: &PromptRecord,
    ) -> Result<VerifierVerdict, AgentError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let negative = self
            .store
            .load(image_ref)?
            .meta
            .and_then(|m| m.request.negative_prompt);
        match self.script.get(&(prompt.id.clone(), negative)) {
            Some(v) => Ok(v.clone()),
            None => self.inner.verify(image_ref, prompt),
        }
    }
}
