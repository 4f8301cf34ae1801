//! Monte Carlo comparison of candidate orderings.
//!
//! Each trial draws `k` candidate scores and, independently of any ordering,
//! one uniform per candidate that decides whether it would succeed. Every
//! ordering then walks the same candidates (common random numbers), and the
//! number of attempts is the position of the first success, or `k` when none
//! succeeds.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::model::OrderingMode;

/// Success probability of a candidate given its score and score rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectivenessModel {
    /// Only the highest-scored candidate succeeds, always.
    TopAlwaysSucceeds,
    /// Every candidate succeeds with the same probability.
    Uniform(f64),
    /// Success probability `score^exponent`; increasing in the score.
    Power(f64),
}

impl EffectivenessModel {
    /// `rank` is 0 for the highest score.
    pub fn success_probability(&self, score: f64, rank: usize) -> f64 {
        match *self {
            EffectivenessModel::TopAlwaysSucceeds => {
                if rank == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            EffectivenessModel::Uniform(p) => p,
            EffectivenessModel::Power(e) => score.powf(e),
        }
    }

    fn validate(&self) -> Result<(), SimulationError> {
        match *self {
            EffectivenessModel::Uniform(p) if !(0.0..=1.0).contains(&p) => Err(
                SimulationError::Invalid(format!("uniform probability {p} outside [0, 1]")),
            ),
            EffectivenessModel::Power(e) if !(e.is_finite() && e >= 0.0) => Err(
                SimulationError::Invalid(format!("exponent {e} must be finite and >= 0")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid simulation: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingResult {
    pub ordering: OrderingMode,
    pub mean_attempts: f64,
    pub std_error: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub trials: usize,
    pub k: usize,
    pub seed: u64,
    pub model: EffectivenessModel,
    pub results: Vec<OrderingResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub trials: usize,
    pub k: usize,
    pub model: EffectivenessModel,
    pub orderings: Vec<OrderingMode>,
    pub seed: u64,
}

/// Per-trial outcome for one ordering: attempts used and whether any
/// candidate succeeded.
fn walk(order: &[usize], succeeds: &[bool]) -> (u32, bool) {
    match order.iter().position(|&c| succeeds[c]) {
        Some(pos) => (pos as u32 + 1, true),
        None => (order.len() as u32, false),
    }
}

fn trial(spec: &SimulationSpec, t: usize) -> Vec<(u32, bool)> {
    let k = spec.k;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(t as u64);
    let scores: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let draws: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();

    let mut by_score: Vec<usize> = (0..k).collect();
    by_score.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &c) in by_score.iter().enumerate() {
        rank[c] = r;
    }
    let succeeds: Vec<bool> = (0..k)
        .map(|c| draws[c] < spec.model.success_probability(scores[c], rank[c]))
        .collect();

    spec.orderings
        .iter()
        .map(|mode| match *mode {
            OrderingMode::SalientDesc => walk(&by_score, &succeeds),
            OrderingMode::ProposerOrder => walk(&(0..k).collect::<Vec<_>>(), &succeeds),
            OrderingMode::Random(seed) => {
                let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
                shuffle_rng.set_stream(t as u64);
                let mut order: Vec<usize> = (0..k).collect();
                order.shuffle(&mut shuffle_rng);
                walk(&order, &succeeds)
            }
        })
        .collect()
}

/// Mean attempts per ordering over `spec.trials` seeded trials.
/// Results do not depend on `exec`.
pub fn simulate_ordering(
    spec: &SimulationSpec,
    exec: Execution,
) -> Result<SimulationReport, SimulationError> {
    if spec.trials == 0 || spec.k == 0 {
        return Err(SimulationError::Invalid("trials and k must be >= 1".into()));
    }
    spec.model.validate()?;
    let per_trial = exec.map_range(spec.trials, |t| trial(spec, t));
    let n = spec.trials as f64;
    let results = spec
        .orderings
        .iter()
        .enumerate()
        .map(|(o, &ordering)| {
            let (mut sum, mut sq, mut hits) = (0.0f64, 0.0f64, 0usize);
            for r in &per_trial {
                let a = r[o].0 as f64;
                sum += a;
                sq += a * a;
                hits += r[o].1 as usize;
            }
            let mean = sum / n;
            let var = if spec.trials > 1 {
                (sq - n * mean * mean).max(0.0) / (n - 1.0)
            } else {
                0.0
            };
            OrderingResult {
                ordering,
                mean_attempts: mean,
                std_error: (var / n).sqrt(),
                success_rate: hits as f64 / n,
            }
        })
        .collect();
    Ok(SimulationReport {
        trials: spec.trials,
        k: spec.k,
        seed: spec.seed,
        model: spec.model,
        results,
    })
}
