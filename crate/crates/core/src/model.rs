//! Domain types shared across the pipeline.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid prompt record `{id}`: {reason}")]
    InvalidPrompt { id: String, reason: String },
    #[error("duplicate prompt id `{0}`")]
    DuplicateId(String),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One benchmark prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub positive_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checklist: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PromptRecord {
    pub fn new(id: impl Into<String>, positive_prompt: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            positive_prompt: positive_prompt.into(),
            checklist: None,
            task_type: None,
            seed: None,
        }
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task_type = Some(task.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(ModelError::InvalidPrompt {
                id: self.id.clone(),
                reason: "empty id".into(),
            });
        }
        if self.positive_prompt.trim().is_empty() {
            return Err(ModelError::InvalidPrompt {
                id: self.id.clone(),
                reason: "empty positive_prompt".into(),
            });
        }
        Ok(())
    }
}

/// Read a line-delimited JSON prompt set. Blank lines are skipped; ids must be
/// unique.
pub fn read_prompt_set<R: Read>(reader: R) -> Result<Vec<PromptRecord>, ModelError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PromptRecord = serde_json::from_str(&line).map_err(|e| ModelError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        record.validate()?;
        if !seen.insert(record.id.clone()) {
            return Err(ModelError::DuplicateId(record.id));
        }
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Targeted,
    Untargeted,
    Fallback,
    Unknown,
}

/// A proposed negative phrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeCandidate {
    pub text: String,
    pub kind: CandidateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub salient_score: Option<f64>,
    pub proposer_rank: u32,
}

impl NegativeCandidate {
    pub fn new(text: impl Into<String>, kind: CandidateKind, proposer_rank: u32) -> Self {
        Self {
            text: text.into(),
            kind,
            salient_score: None,
            proposer_rank,
        }
    }
}

/// A constraint violated by a proposed negative phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    Empty,
    TooLong,
    NegationWord,
    Quotes,
    TrailingPunct,
    /// Informational only: the input had uppercase letters that were lowered.
    NotLowercase,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Violation::Empty => "EMPTY",
            Violation::TooLong => "TOO_LONG",
            Violation::NegationWord => "NEGATION_WORD",
            Violation::Quotes => "QUOTES",
            Violation::TrailingPunct => "TRAILING_PUNCT",
            Violation::NotLowercase => "NOT_LOWERCASE",
        }
    }

    pub fn is_fatal(self) -> bool {
        self != Violation::NotLowercase
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

pub const MAX_CANDIDATE_WORDS: usize = 6;
const NEGATION_WORDS: &[&str] = &["no", "without", "not"];
const QUOTE_CHARS: &[char] = &['"', '\u{201c}', '\u{201d}', '`', '\u{00ab}', '\u{00bb}'];
const EDGE_QUOTE_CHARS: &[char] = &['\'', '\u{2018}', '\u{2019}'];
const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '\u{2026}'];

/// Full check of a candidate phrase, including informational findings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateReport {
    pub normalized: String,
    /// Fatal violations, sorted.
    pub violations: Vec<Violation>,
    /// Non-fatal findings.
    pub notes: Vec<Violation>,
}

impl CandidateReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_candidate(text: &str) -> CandidateReport {
    let trimmed = text.trim();
    let normalized = trimmed.to_lowercase();
    let mut violations = BTreeSet::new();
    let mut notes = Vec::new();

    if normalized != trimmed {
        notes.push(Violation::NotLowercase);
    }
    if normalized.is_empty() {
        violations.insert(Violation::Empty);
    }
    let words: Vec<&str> = normalized.split_whitespace().collect();
    if words.len() > MAX_CANDIDATE_WORDS {
        violations.insert(Violation::TooLong);
    }
    if words.iter().any(|w| {
        let core = w.trim_matches(|c: char| !c.is_alphanumeric());
        NEGATION_WORDS.contains(&core)
    }) {
        violations.insert(Violation::NegationWord);
    }
    if normalized.contains(QUOTE_CHARS)
        || normalized.starts_with(EDGE_QUOTE_CHARS)
        || normalized.ends_with(EDGE_QUOTE_CHARS)
    {
        violations.insert(Violation::Quotes);
    }
    if normalized.ends_with(TRAILING_PUNCT) {
        violations.insert(Violation::TrailingPunct);
    }
    CandidateReport {
        normalized,
        violations: violations.into_iter().collect(),
        notes,
    }
}

/// Normalize (trim, lowercase) and check a proposed negative phrase.
///
/// Returns the normalized text when every fatal constraint holds, else the
/// list of fatal violations. Lowercasing is applied rather than enforced.
pub fn validate_candidate(text: &str) -> Result<String, Vec<Violation>> {
    let report = check_candidate(text);
    if report.is_ok() {
        Ok(report.normalized)
    } else {
        Err(report.violations)
    }
}

/// Parsed verifier output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierVerdict {
    pub correct: bool,
    pub score: f64,
    pub reason: String,
}

impl VerifierVerdict {
    /// Build a verdict, clamping `score` into [0, 1] (NaN becomes 0).
    pub fn new(correct: bool, score: f64, reason: impl Into<String>) -> Self {
        let clamped = if score.is_nan() {
            0.0
        } else {
            score.clamp(0.0, 1.0)
        };
        Self {
            correct,
            score: clamped,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProposerMode {
    #[default]
    CaptionConditioned,
    PromptOnly,
}

/// Order in which ranked candidates are tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderingMode {
    #[default]
    SalientDesc,
    ProposerOrder,
    /// Seeded random permutation.
    Random(u64),
}

/// Generation parameters forwarded to the image generator and recorded in
/// the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub steps: u32,
    pub guidance_scale: f64,
    pub true_cfg_scale: f64,
    pub negative_active_steps: BTreeSet<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k_candidates: u32,
    pub denoise_steps: u32,
    pub negative_active_steps: BTreeSet<u32>,
    pub guidance_scale: f64,
    pub true_cfg_scale: f64,
    pub general_fallbacks: Vec<String>,
    pub proposer_mode: ProposerMode,
    pub ordering_mode: OrderingMode,
    pub max_retries_per_agent: u32,
    pub request_timeout_ms: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_candidates: 5,
            denoise_steps: 50,
            negative_active_steps: [1, 2, 3].into_iter().collect(),
            guidance_scale: 3.5,
            true_cfg_scale: 1.8,
            general_fallbacks: vec![
                "blurry".into(),
                "low quality".into(),
                "cartoon style".into(),
                "distorted shapes".into(),
                "extra objects".into(),
            ],
            proposer_mode: ProposerMode::CaptionConditioned,
            ordering_mode: OrderingMode::SalientDesc,
            max_retries_per_agent: 2,
            request_timeout_ms: 60_000,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k_candidates < 1 {
            return Err(ModelError::InvalidConfig(
                "k_candidates must be >= 1".into(),
            ));
        }
        if self.denoise_steps < 1 {
            return Err(ModelError::InvalidConfig(
                "denoise_steps must be >= 1".into(),
            ));
        }
        if let Some(bad) = self
            .negative_active_steps
            .iter()
            .find(|&&s| s < 1 || s > self.denoise_steps)
        {
            return Err(ModelError::InvalidConfig(format!(
                "negative_active_steps entry {bad} outside [1, {}]",
                self.denoise_steps
            )));
        }
        if self.guidance_scale.is_nan() || self.guidance_scale < 0.0 {
            return Err(ModelError::InvalidConfig(
                "guidance_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn generator_params(&self, seed: u64) -> GeneratorParams {
        GeneratorParams {
            steps: self.denoise_steps,
            guidance_scale: self.guidance_scale,
            true_cfg_scale: self.true_cfg_scale,
            negative_active_steps: self.negative_active_steps.clone(),
            seed,
        }
    }
}

/// One pipeline attempt. Serialized field order is the declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedgerEntry {
    pub run_id: String,
    pub prompt_id: String,
    /// 0 is the base image generated without a negative prompt.
    pub attempt_index: u32,
    pub negative: Option<NegativeCandidate>,
    pub generator_params: GeneratorParams,
    pub verdict: VerifierVerdict,
    pub image_ref: String,
    pub timestamp: DateTime<Utc>,
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl RunLedgerEntry {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("ledger entries always serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}
