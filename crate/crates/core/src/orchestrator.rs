//! The correction loop for one prompt, and batches of prompts.
//!
//! Base image, verify; on failure collect the reason and a caption, propose
//! candidates, rank them, then regenerate with each negative in order until
//! the verifier passes. If none passes, the candidate attempt with the
//! highest verifier score is selected (earliest on ties).

use std::collections::HashSet;
use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{propose, AgentError, Captioner, Proposer, ProposerRequest, Verifier};
use crate::embedding::{EmbedError, EmbeddingBackend};
use crate::exec::Execution;
use crate::generation::{GenerationError, GenerationRequest, Generator};
use crate::ledger::{Clock, LedgerSink, RunEnd};
use crate::model::{
    ModelError, NegativeCandidate, PipelineConfig, PromptRecord, ProposerMode, RunLedgerEntry,
    VerifierVerdict,
};
use crate::saliency::{extract_salient_tokens, rank_candidates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    PrecheckPass,
    EarlyStop,
    FallbackBestScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub prompt_id: String,
    pub run_id: String,
    pub selected_image_ref: String,
    pub selected_negative: Option<NegativeCandidate>,
    /// Generator calls, the base image included.
    pub attempts_used: u32,
    pub terminal_reason: TerminalReason,
    pub final_verdict: VerifierVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("salient scoring failed: {0}")]
    Embedding(#[from] EmbedError),
    #[error("ledger write failed: {0}")]
    Ledger(#[from] io::Error),
    #[error("run cancelled")]
    Cancelled,
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Invalid(_) => "INVALID_INPUT",
            PipelineError::Generation(GenerationError::UnsupportedParam(_)) => "UNSUPPORTED_PARAM",
            PipelineError::Generation(GenerationError::GenerationFailed(_)) => "GENERATION_FAILED",
            PipelineError::Generation(_) => "TRANSPORT",
            PipelineError::Agent(e) => e.code(),
            PipelineError::Embedding(EmbedError::BackendUnavailable(_)) => "BACKEND_UNAVAILABLE",
            PipelineError::Embedding(_) => "EMBEDDING",
            PipelineError::Ledger(_) => "LEDGER_IO",
            PipelineError::Cancelled => "CANCELLED",
        }
    }
}

/// A prompt whose pipeline did not produce an outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedRun {
    pub prompt_id: String,
    pub error_code: String,
    pub message: String,
}

pub type RunResult = Result<PipelineOutcome, FailedRun>;

/// Everything a pipeline talks to.
#[derive(Clone)]
pub struct Clients {
    pub generator: Arc<dyn Generator>,
    pub verifier: Arc<dyn Verifier>,
    pub captioner: Arc<dyn Captioner>,
    pub proposer: Arc<dyn Proposer>,
    pub embedding: Arc<dyn EmbeddingBackend>,
}

/// Per-run environment: where entries go, timestamps, cancellation.
pub struct RunEnv<'a> {
    pub ledger: &'a dyn LedgerSink,
    pub clock: &'a dyn Clock,
    pub cancel: &'a AtomicBool,
}

/// Deterministic run identifier: prompt id plus a digest of the inputs.
pub fn run_id(prompt: &PromptRecord, cfg: &PipelineConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(prompt).expect("prompt serializes"));
    h.update([0]);
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    format!("{}-{}", prompt.id, &hex::encode(h.finalize())[..12])
}

struct Attempt {
    index: u32,
    image_ref: String,
    negative: Option<NegativeCandidate>,
    verdict: VerifierVerdict,
    generated: bool,
}

struct Run<'a> {
    prompt: &'a PromptRecord,
    cfg: &'a PipelineConfig,
    clients: &'a Clients,
    env: &'a RunEnv<'a>,
    seq: usize,
    run_id: String,
    attempts: Vec<Attempt>,
}

impl Run<'_> {
    fn record(
        &mut self,
        attempt: Attempt,
        params: &crate::model::GeneratorParams,
        note: Option<String>,
    ) -> io::Result<()> {
        let entry = RunLedgerEntry {
            run_id: self.run_id.clone(),
            prompt_id: self.prompt.id.clone(),
            attempt_index: attempt.index,
            negative: attempt.negative.clone(),
            generator_params: params.clone(),
            verdict: attempt.verdict.clone(),
            image_ref: attempt.image_ref.clone(),
            timestamp: self.env.clock.now(),
            terminal: false,
            note,
        };
        self.env.ledger.append(self.seq, entry)?;
        self.attempts.push(attempt);
        Ok(())
    }

    fn finish(
        &self,
        selected: usize,
        reason: TerminalReason,
        note: Option<String>,
    ) -> io::Result<PipelineOutcome> {
        let a = &self.attempts[selected];
        self.env
            .ledger
            .finish_run(self.seq, RunEnd::Selected(a.index))?;
        Ok(PipelineOutcome {
            prompt_id: self.prompt.id.clone(),
            run_id: self.run_id.clone(),
            selected_image_ref: a.image_ref.clone(),
            selected_negative: a.negative.clone(),
            attempts_used: self.attempts.len() as u32,
            terminal_reason: reason,
            final_verdict: a.verdict.clone(),
            note,
        })
    }

    fn check_cancel(&self) -> Result<(), PipelineError> {
        if self.env.cancel.load(Ordering::SeqCst) {
            Err(PipelineError::Cancelled)
        } else {
            Ok(())
        }
    }

    fn execute(&mut self) -> Result<PipelineOutcome, PipelineError> {
        let params = self.cfg.generator_params(self.prompt.seed.unwrap_or(0));
        let base_req = GenerationRequest::new(self.prompt.positive_prompt.clone(), params.clone());

        self.check_cancel()?;
        let base = self.clients.generator.generate(&base_req)?;
        let verdict = self.clients.verifier.verify(&base.image_ref, self.prompt)?;
        let passed = verdict.correct;
        self.record(
            Attempt {
                index: 0,
                image_ref: base.image_ref,
                negative: None,
                verdict,
                generated: true,
            },
            &params,
            None,
        )?;
        if passed {
            return Ok(self.finish(0, TerminalReason::PrecheckPass, None)?);
        }

        let reason = self.attempts[0].verdict.reason.clone();
        let (reason, caption) = match self.cfg.proposer_mode {
            ProposerMode::CaptionConditioned => {
                let caption = self
                    .clients
                    .captioner
                    .caption(&self.attempts[0].image_ref)?;
                (Some(reason), Some(caption))
            }
            ProposerMode::PromptOnly => (None, None),
        };
        let preq = ProposerRequest {
            positive_prompt: self.prompt.positive_prompt.clone(),
            reason,
            caption,
            fallbacks: self.cfg.general_fallbacks.clone(),
            k: self.cfg.k_candidates,
        };
        let candidates = match propose(self.clients.proposer.as_ref(), &preq) {
            Ok(c) => c,
            Err(AgentError::NoCandidates) => {
                let note = "NO_CANDIDATES: returning the base image".to_string();
                tracing::warn!(prompt = %self.prompt.id, "{note}");
                return Ok(self.finish_degenerate(note)?);
            }
            Err(e) => return Err(e.into()),
        };

        let salient = extract_salient_tokens(&self.prompt.positive_prompt);
        let ranked = rank_candidates(
            &self.prompt.positive_prompt,
            &candidates,
            &salient,
            self.clients.embedding.as_ref(),
            self.cfg.ordering_mode,
        )?;

        for (i, scored) in ranked.into_iter().enumerate() {
            self.check_cancel()?;
            let index = i as u32 + 1;
            let candidate = scored.candidate;
            let req = base_req.clone().with_negative(candidate.text.clone());
            match self.clients.generator.generate(&req) {
                Ok(out) => {
                    let verdict = self.clients.verifier.verify(&out.image_ref, self.prompt)?;
                    let passed = verdict.correct;
                    self.record(
                        Attempt {
                            index,
                            image_ref: out.image_ref,
                            negative: Some(candidate),
                            verdict,
                            generated: true,
                        },
                        &params,
                        None,
                    )?;
                    if passed {
                        let last = self.attempts.len() - 1;
                        return Ok(self.finish(last, TerminalReason::EarlyStop, None)?);
                    }
                }
                Err(GenerationError::GenerationFailed(msg)) => {
                    tracing::warn!(prompt = %self.prompt.id, negative = %candidate.text, "generation failed: {msg}");
                    self.record(
                        Attempt {
                            index,
                            image_ref: String::new(),
                            negative: Some(candidate),
                            verdict: VerifierVerdict::new(false, 0.0, "generation failed"),
                            generated: false,
                        },
                        &params,
                        Some(format!("GENERATION_FAILED: {msg}")),
                    )?;
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mut best: Option<usize> = None;
        for (i, a) in self.attempts.iter().enumerate().skip(1) {
            if a.generated && best.is_none_or(|b| a.verdict.score > self.attempts[b].verdict.score)
            {
                best = Some(i);
            }
        }
        match best {
            Some(b) => Ok(self.finish(b, TerminalReason::FallbackBestScore, None)?),
            None => Ok(self.finish_degenerate(
                "every candidate generation failed; returning the base image".into(),
            )?),
        }
    }

    fn finish_degenerate(&self, note: String) -> io::Result<PipelineOutcome> {
        self.finish(0, TerminalReason::FallbackBestScore, Some(note))
    }
}

/// Run the loop for one prompt. `seq` orders this run in the ledger.
pub fn run_pipeline(
    prompt: &PromptRecord,
    cfg: &PipelineConfig,
    clients: &Clients,
    env: &RunEnv<'_>,
    seq: usize,
) -> Result<PipelineOutcome, PipelineError> {
    let mut run = Run {
        prompt,
        cfg,
        clients,
        env,
        seq,
        run_id: run_id(prompt, cfg),
        attempts: Vec::new(),
    };
    let result = prompt
        .validate()
        .and_then(|_| cfg.validate())
        .map_err(PipelineError::from)
        .and_then(|_| run.execute());
    match &result {
        Ok(outcome) => {
            tracing::info!(
                prompt = %prompt.id,
                attempts = outcome.attempts_used,
                reason = ?outcome.terminal_reason,
                "run finished"
            );
        }
        Err(PipelineError::Ledger(_)) => {}
        Err(PipelineError::Cancelled) => {}
        Err(e) => {
            env.ledger
                .finish_run(seq, RunEnd::Aborted(e.code().to_string()))?;
        }
    }
    result
}

/// Run every prompt with at most `parallelism` pipelines in flight.
/// Results come back in input order; failures do not stop the batch.
pub fn run_batch(
    prompts: &[PromptRecord],
    cfg: &PipelineConfig,
    clients: &Clients,
    env: &RunEnv<'_>,
    parallelism: usize,
    exec: Execution,
) -> Result<Vec<RunResult>, PipelineError> {
    let mut seen = HashSet::new();
    for p in prompts {
        if !seen.insert(p.id.as_str()) {
            return Err(ModelError::DuplicateId(p.id.clone()).into());
        }
    }
    cfg.validate()?;
    let indexed: Vec<(usize, &PromptRecord)> = prompts.iter().enumerate().collect();
    Ok(
        exec.map_bounded(&indexed, parallelism.max(1), |&(seq, prompt)| {
            run_pipeline(prompt, cfg, clients, env, seq).map_err(|e| {
                tracing::error!(prompt = %prompt.id, "run failed: {e}");
                FailedRun {
                    prompt_id: prompt.id.clone(),
                    error_code: e.code().to_string(),
                    message: e.to_string(),
                }
            })
        }),
    )
}
