//! Salient-token extraction and the text-space salient score.
//!
//! A negative prompt `n` is modelled as pushing the pooled prompt embedding
//! along `d = pool(E(p)) - pool(E(n))`. Its salient score is the mean cosine
//! between `d` and each salient token's pooled embedding; candidates are tried
//! in descending score order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embedding::{cosine, pool, EmbedError, EmbeddingBackend, PooledEmbedding};
use crate::exec::Execution;
use crate::model::{NegativeCandidate, OrderingMode};
use crate::text::{is_quantity, STOP_NOUNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SalientSource {
    Heuristic,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SalientTokenSet {
    tokens: Vec<String>,
    source: SalientSource,
}

impl SalientTokenSet {
    /// A hand-picked set. Empty and repeated tokens are dropped.
    pub fn manual<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for t in tokens {
            let t = t.into();
            let t = t.trim();
            if !t.is_empty() && !out.iter().any(|o| o == t) {
                out.push(t.to_string());
            }
        }
        Self {
            tokens: out,
            source: SalientSource::Manual,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn source(&self) -> SalientSource {
        self.source
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }
}

/// The word right after each quantity token, in order, deduplicated.
pub fn extract_salient_tokens(prompt: &str) -> SalientTokenSet {
    let words = crate::text::words(prompt);
    let mut tokens: Vec<String> = Vec::new();
    for pair in words.windows(2) {
        let (quantity, next) = (&pair[0], &pair[1]);
        if is_quantity(quantity)
            && !STOP_NOUNS.contains(&next.as_str())
            && !tokens.iter().any(|t| t == next)
        {
            tokens.push(next.clone());
        }
    }
    SalientTokenSet {
        tokens,
        source: SalientSource::Heuristic,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenScore {
    pub token: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub candidate: NegativeCandidate,
    pub score: f64,
    pub per_token: Vec<TokenScore>,
}

/// Precomputes the prompt and salient-token embeddings once, then scores
/// any number of negatives against them.
pub struct SalientScorer<'a> {
    backend: &'a dyn EmbeddingBackend,
    prompt: PooledEmbedding,
    salient: Vec<(String, PooledEmbedding)>,
}

impl<'a> SalientScorer<'a> {
    pub fn new(
        prompt: &str,
        salient: &SalientTokenSet,
        backend: &'a dyn EmbeddingBackend,
    ) -> Result<Self, EmbedError> {
        let prompt_vec = pool(&backend.embed(prompt)?);
        let salient = salient
            .tokens()
            .iter()
            .map(|t| Ok((t.clone(), pool(&backend.embed(t)?))))
            .collect::<Result<Vec<_>, EmbedError>>()?;
        if salient.is_empty() {
            tracing::warn!(prompt, "no salient tokens; salient scores default to 0");
        }
        Ok(Self {
            backend,
            prompt: prompt_vec,
            salient,
        })
    }

    /// Score one negative phrase; returns `(mean, per-token)`.
    pub fn score_text(&self, negative: &str) -> Result<(f64, Vec<TokenScore>), EmbedError> {
        if self.salient.is_empty() {
            return Ok((0.0, Vec::new()));
        }
        let direction = self.prompt.sub(&pool(&self.backend.embed(negative)?));
        let per_token: Vec<TokenScore> = self
            .salient
            .iter()
            .map(|(token, v)| TokenScore {
                token: token.clone(),
                score: cosine(&direction, v),
            })
            .collect();
        let mean = per_token.iter().map(|t| t.score).sum::<f64>() / per_token.len() as f64;
        Ok((mean, per_token))
    }

    pub fn score(&self, candidate: &NegativeCandidate) -> Result<ScoredCandidate, EmbedError> {
        let (score, per_token) = self.score_text(&candidate.text)?;
        let mut candidate = candidate.clone();
        candidate.salient_score = Some(score);
        Ok(ScoredCandidate {
            candidate,
            score,
            per_token,
        })
    }
}

/// Salient score of a single negative against a prompt.
pub fn salient_score(
    prompt: &str,
    candidate: &NegativeCandidate,
    salient: &SalientTokenSet,
    backend: &dyn EmbeddingBackend,
) -> Result<ScoredCandidate, EmbedError> {
    SalientScorer::new(prompt, salient, backend)?.score(candidate)
}

/// Score every candidate and order them per `mode`.
///
/// `SalientDesc` sorts by score descending with ties broken by ascending
/// proposer rank. `ProposerOrder` keeps the input order. `Random(seed)`
/// applies a seeded shuffle.
pub fn rank_candidates(
    prompt: &str,
    candidates: &[NegativeCandidate],
    salient: &SalientTokenSet,
    backend: &dyn EmbeddingBackend,
    mode: OrderingMode,
) -> Result<Vec<ScoredCandidate>, EmbedError> {
    rank_candidates_with(
        prompt,
        candidates,
        salient,
        backend,
        mode,
        Execution::default(),
    )
}

pub fn rank_candidates_with(
    prompt: &str,
    candidates: &[NegativeCandidate],
    salient: &SalientTokenSet,
    backend: &dyn EmbeddingBackend,
    mode: OrderingMode,
    exec: Execution,
) -> Result<Vec<ScoredCandidate>, EmbedError> {
    let scorer = SalientScorer::new(prompt, salient, backend)?;
    let mut scored = exec
        .map(candidates, |c| scorer.score(c))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    order_scored(&mut scored, mode);
    Ok(scored)
}

/// Reorder already-scored candidates per `mode`.
pub fn order_scored(scored: &mut [ScoredCandidate], mode: OrderingMode) {
    match mode {
        OrderingMode::SalientDesc => scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.candidate.proposer_rank.cmp(&b.candidate.proposer_rank))
        }),
        OrderingMode::ProposerOrder => {}
        OrderingMode::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            scored.shuffle(&mut rng);
        }
    }
}
