//! Cross-attention probability analysis over recorded dumps.
//!
//! A dump holds a `T x B x H x Q x L` tensor (timesteps, batch, heads,
//! spatial queries, text tokens). The salient-attention share is the mean
//! over timesteps of `S(t) / (S(t) + U(t))`, where `S` sums probability mass
//! on the salient token indices and `U` on the rest.

mod format;

pub use format::{read_dump, write_dump, DumpFormatError, MAGIC};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

/// Tolerance on per-slice probability sums accepted when loading.
pub const PROB_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AttentionError {
    #[error("expected a {expected:?} dump, got {actual:?}")]
    WrongKind {
        expected: DumpKind,
        actual: DumpKind,
    },
    #[error("salient index {index} out of range for L = {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dumps differ in shape: {0}")]
    DimMismatch(String),
    #[error("relative delta undefined for a zero base score")]
    ZeroBase,
    #[error("invalid dump: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpKind {
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(rename = "L")]
    pub l: usize,
}

impl Dims {
    pub fn new(t: usize, b: usize, h: usize, q: usize, l: usize) -> Self {
        Self { t, b, h, q, l }
    }

    pub fn numel(&self) -> usize {
        self.t * self.b * self.h * self.q * self.l
    }

    /// Number of length-`L` slices per timestep.
    pub fn rows_per_step(&self) -> usize {
        self.b * self.h * self.q
    }

    /// Flat offset of element `(t, b, h, q, k)`.
    pub fn offset(&self, t: usize, b: usize, h: usize, q: usize, k: usize) -> usize {
        (((t * self.b + b) * self.h + h) * self.q + q) * self.l + k
    }

    fn validate(&self) -> Result<(), AttentionError> {
        if [self.t, self.b, self.h, self.q, self.l].contains(&0) {
            return Err(AttentionError::Invalid(format!(
                "zero dimension in {self:?}"
            )));
        }
        self.t
            .checked_mul(self.b)
            .and_then(|n| n.checked_mul(self.h))
            .and_then(|n| n.checked_mul(self.q))
            .and_then(|n| n.checked_mul(self.l))
            .ok_or_else(|| AttentionError::Invalid("dimension product overflows".into()))?;
        Ok(())
    }
}

/// Recorded cross-attention tensor. Values are stored in t-major then
/// b, h, q, k row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    dims: Dims,
    kind: DumpKind,
    head_dim: Option<f64>,
    values: Vec<f32>,
    salient_indices: Option<Vec<usize>>,
    producer: Option<String>,
}

impl AttentionDump {
    /// Build and validate a dump. Probability dumps must have non-negative
    /// entries whose slices sum to 1 within [`PROB_SUM_TOLERANCE`].
    pub fn new(dims: Dims, kind: DumpKind, values: Vec<f32>) -> Result<Self, AttentionError> {
        dims.validate()?;
        if values.len() != dims.numel() {
            return Err(AttentionError::Invalid(format!(
                "{} values for dims {dims:?} ({} expected)",
                values.len(),
                dims.numel()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AttentionError::Invalid("non-finite value".into()));
        }
        if kind == DumpKind::Probabilities {
            for (i, slice) in values.chunks_exact(dims.l).enumerate() {
                if slice.iter().any(|&p| p < 0.0) {
                    return Err(AttentionError::Invalid(format!(
                        "negative probability in slice {i}"
                    )));
                }
                let sum: f64 = slice.iter().map(|&p| p as f64).sum();
                if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                    return Err(AttentionError::Invalid(format!("slice {i} sums to {sum}")));
                }
            }
        }
        Ok(Self {
            dims,
            kind,
            head_dim: None,
            values,
            salient_indices: None,
            producer: None,
        })
    }

    pub fn with_head_dim(mut self, head_dim: f64) -> Self {
        self.head_dim = Some(head_dim);
        self
    }

    pub fn with_salient_indices(mut self, indices: Vec<usize>) -> Result<Self, AttentionError> {
        check_indices(&indices, self.dims.l)?;
        self.salient_indices = Some(indices);
        Ok(self)
    }

    pub fn with_producer(mut self, producer: impl Into<String>) -> Self {
        self.producer = Some(producer.into());
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kind(&self) -> DumpKind {
        self.kind
    }

    pub fn head_dim(&self) -> Option<f64> {
        self.head_dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn salient_indices(&self) -> Option<&[usize]> {
        self.salient_indices.as_deref()
    }

    pub fn producer(&self) -> Option<&str> {
        self.producer.as_deref()
    }

    /// Values of timestep `t`, `B*H*Q*L` of them.
    pub fn step(&self, t: usize) -> &[f32] {
        let n = self.dims.rows_per_step() * self.dims.l;
        &self.values[t * n..(t + 1) * n]
    }
}

fn check_indices(indices: &[usize], len: usize) -> Result<(), AttentionError> {
    match indices.iter().find(|&&i| i >= len) {
        Some(&index) => Err(AttentionError::IndexOutOfRange { index, len }),
        None => Ok(()),
    }
}

/// Softmax over the token axis of a logits dump.
pub fn logits_to_probs(dump: &AttentionDump) -> Result<AttentionDump, AttentionError> {
    logits_to_probs_with(dump, Execution::default())
}

pub fn logits_to_probs_with(
    dump: &AttentionDump,
    exec: Execution,
) -> Result<AttentionDump, AttentionError> {
    if dump.kind != DumpKind::Logits {
        return Err(AttentionError::WrongKind {
            expected: DumpKind::Logits,
            actual: dump.kind,
        });
    }
    let l = dump.dims.l;
    let steps: Vec<Vec<f32>> = exec.map_range(dump.dims.t, |t| {
        let mut out = Vec::with_capacity(dump.dims.rows_per_step() * l);
        for slice in dump.step(t).chunks_exact(l) {
            softmax_into(slice, &mut out);
        }
        out
    });
    Ok(AttentionDump {
        dims: dump.dims,
        kind: DumpKind::Probabilities,
        head_dim: dump.head_dim,
        values: steps.concat(),
        salient_indices: dump.salient_indices.clone(),
        producer: dump.producer.clone(),
    })
}

fn softmax_into(logits: &[f32], out: &mut Vec<f32>) {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    out.extend(exps.iter().map(|e| (e / total) as f32));
}

/// Salient-attention share `rho` in [0, 1].
///
/// An empty salient set yields 0 with a warning.
pub fn salient_attention_score(
    dump: &AttentionDump,
    salient: &[usize],
) -> Result<f64, AttentionError> {
    salient_attention_score_with(dump, salient, Execution::default())
}

pub fn salient_attention_score_with(
    dump: &AttentionDump,
    salient: &[usize],
    exec: Execution,
) -> Result<f64, AttentionError> {
    if dump.kind != DumpKind::Probabilities {
        return Err(AttentionError::WrongKind {
            expected: DumpKind::Probabilities,
            actual: dump.kind,
        });
    }
    let l = dump.dims.l;
    check_indices(salient, l)?;
    if salient.is_empty() {
        tracing::warn!("empty salient index set; salient-attention score defaults to 0");
        return Ok(0.0);
    }
    let mut mask = vec![false; l];
    for &i in salient {
        mask[i] = true;
    }
    let ratios = exec.map_range(dump.dims.t, |t| {
        let (mut s, mut u) = (0.0f64, 0.0f64);
        for slice in dump.step(t).chunks_exact(l) {
            for (&p, &is_salient) in slice.iter().zip(&mask) {
                if is_salient {
                    s += p as f64;
                } else {
                    u += p as f64;
                }
            }
        }
        if s + u > 0.0 {
            s / (s + u)
        } else {
            0.0
        }
    });
    Ok(pairwise_sum(&ratios) / ratios.len() as f64)
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunComparison {
    pub rho_base: f64,
    pub rho_variant: f64,
    pub abs_delta: f64,
    pub rel_delta: f64,
}

impl RunComparison {
    pub fn rel_delta_percent(&self) -> f64 {
        self.rel_delta * 100.0
    }
}

/// Compare a baseline dump against a variant over the same salient set.
pub fn compare_runs(
    base: &AttentionDump,
    variant: &AttentionDump,
    salient: &[usize],
) -> Result<RunComparison, AttentionError> {
    if base.dims.l != variant.dims.l {
        return Err(AttentionError::DimMismatch(format!(
            "L = {} vs {}",
            base.dims.l, variant.dims.l
        )));
    }
    let rho_base = salient_attention_score(base, salient)?;
    let rho_variant = salient_attention_score(variant, salient)?;
    compare_scores(rho_base, rho_variant)
}

pub fn compare_scores(rho_base: f64, rho_variant: f64) -> Result<RunComparison, AttentionError> {
    if rho_base == 0.0 {
        return Err(AttentionError::ZeroBase);
    }
    let abs_delta = rho_variant - rho_base;
    Ok(RunComparison {
        rho_base,
        rho_variant,
        abs_delta,
        rel_delta: abs_delta / rho_base,
    })
}
