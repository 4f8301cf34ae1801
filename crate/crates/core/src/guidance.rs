//! Classifier-free guidance combination with a step gate on the negative
//! branch.
//!
//! `out = base + scale * (f_pos - base)` where `base` is the negative-prompt
//! prediction on active steps and the unconditional prediction otherwise.
//! Step indices are 1-based.

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GuidanceError {
    #[error("vector length mismatch: positive {positive}, other {other}")]
    LengthMismatch { positive: usize, other: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct GuidanceInputs<'a> {
    pub f_pos: &'a [f64],
    pub f_neg: &'a [f64],
    pub scale: f64,
    pub step_index: u32,
    pub active_steps: &'a BTreeSet<u32>,
}

impl GuidanceInputs<'_> {
    pub fn negative_active(&self) -> bool {
        self.active_steps.contains(&self.step_index)
    }
}

/// Guided estimate for one step. On inactive steps the negative-branch
/// values are never read.
pub fn apply_cfg(g: &GuidanceInputs<'_>, f_null: &[f64]) -> Result<Vec<f64>, GuidanceError> {
    let n = g.f_pos.len();
    for other in [g.f_neg.len(), f_null.len()] {
        if other != n {
            return Err(GuidanceError::LengthMismatch { positive: n, other });
        }
    }
    let base = if g.negative_active() { g.f_neg } else { f_null };
    Ok(g.f_pos
        .iter()
        .zip(base)
        .map(|(&p, &b)| b + g.scale * (p - b))
        .collect())
}
