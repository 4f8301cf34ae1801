//! Negative-prompt discovery for text-to-image alignment.
//!
//! The pipeline generates a base image, asks a verifier whether it matches the
//! prompt, and on failure collects a failure reason and a caption, asks a
//! proposer for short negative prompts, ranks them with a text-space salient
//! score, and regenerates in ranked order until the verifier passes.
//!
//! Alongside the loop this crate ships the numeric kernels it relies on:
//! classifier-free guidance arithmetic ([`guidance`]), cross-attention share
//! analysis over recorded dumps ([`attention`]), and benchmark metric
//! aggregation ([`eval`]).

pub mod agents;
pub mod attention;
pub mod config;
pub mod embedding;
pub mod eval;
pub mod exec;
pub mod generation;
pub mod guidance;
pub mod http;
pub mod jsonl;
pub mod ledger;
pub mod model;
pub mod orchestrator;
pub mod saliency;
pub mod simulate;
pub(crate) mod text;

pub use exec::Execution;
pub use model::{
    validate_candidate, CandidateKind, NegativeCandidate, OrderingMode, PipelineConfig,
    PromptRecord, ProposerMode, RunLedgerEntry, VerifierVerdict, Violation,
};
