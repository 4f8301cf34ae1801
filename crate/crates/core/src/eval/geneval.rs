use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{render_table, ScoreRecord};

/// Task columns in report order.
pub const GENEVAL_TASKS: [&str; 7] = [
    "Color",
    "Count",
    "Color/Count",
    "Color/Pos",
    "Pos/Count",
    "Pos/Size",
    "Multi-Count",
];

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Map spellings like `color_count`, `Color/Count` or `multi-count` onto
/// the canonical task label.
pub fn normalize_geneval_task(task: &str) -> Option<&'static str> {
    let key = squash(task);
    GENEVAL_TASKS.iter().copied().find(|t| squash(t) == key)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    /// `None` when there are no prompts.
    pub accuracy: Option<f64>,
}

impl Accuracy {
    fn from_counts(correct: usize, total: usize) -> Self {
        Self {
            correct,
            total,
            accuracy: (total > 0).then(|| correct as f64 / total as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: String,
    #[serde(flatten)]
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenevalReport {
    pub per_task: Vec<TaskAccuracy>,
    /// Over every prompt, unknown tasks included.
    pub overall: Accuracy,
    /// Unweighted mean of the non-empty task accuracies.
    pub mean_of_tasks: Option<f64>,
    pub unknown_tasks: Vec<String>,
}

/// Per-task and overall accuracy. Records without a recognised task are
/// listed under `unknown_tasks` and only count toward the overall figure.
pub fn geneval_accuracy(records: &[ScoreRecord]) -> Result<GenevalReport, super::EvalError> {
    let mut counts = [(0usize, 0usize); GENEVAL_TASKS.len()];
    let mut unknown = BTreeSet::new();
    let (mut correct, mut total) = (0, 0);
    for r in records {
        let ok = r.correct.ok_or_else(|| super::EvalError::MissingField {
            prompt_id: r.prompt_id.clone(),
            field: "correct",
        })?;
        total += 1;
        correct += ok as usize;
        let task = r.task_type.as_deref().unwrap_or("");
        match normalize_geneval_task(task).and_then(|t| GENEVAL_TASKS.iter().position(|x| *x == t))
        {
            Some(i) => {
                counts[i].0 += ok as usize;
                counts[i].1 += 1;
            }
            None => {
                let label = if task.is_empty() { "(none)" } else { task };
                if unknown.insert(label.to_string()) {
                    tracing::warn!(
                        task = label,
                        "UNKNOWN_TASK: excluded from the per-task table"
                    );
                }
            }
        }
    }
    let per_task: Vec<TaskAccuracy> = GENEVAL_TASKS
        .iter()
        .zip(counts)
        .map(|(t, (c, n))| TaskAccuracy {
            task: t.to_string(),
            accuracy: Accuracy::from_counts(c, n),
        })
        .collect();
    let present: Vec<f64> = per_task
        .iter()
        .filter_map(|t| t.accuracy.accuracy)
        .collect();
    Ok(GenevalReport {
        mean_of_tasks: (!present.is_empty())
            .then(|| present.iter().sum::<f64>() / present.len() as f64),
        per_task,
        overall: Accuracy::from_counts(correct, total),
        unknown_tasks: unknown.into_iter().collect(),
    })
}

fn cell(a: &Accuracy) -> String {
    a.accuracy
        .map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

impl GenevalReport {
    /// Plain-text table with one column per task plus the overall column.
    pub fn to_table(&self, method: &str) -> String {
        let mut header = vec!["Method".to_string()];
        header.extend(self.per_task.iter().map(|t| t.task.clone()));
        header.push("Overall".into());
        let mut acc = vec![method.to_string()];
        acc.extend(self.per_task.iter().map(|t| cell(&t.accuracy)));
        acc.push(cell(&self.overall));
        let mut n = vec!["n".to_string()];
        n.extend(
            self.per_task
                .iter()
                .map(|t| format!("{}/{}", t.accuracy.correct, t.accuracy.total)),
        );
        n.push(format!("{}/{}", self.overall.correct, self.overall.total));
        let mut out = render_table(&header, &[acc, n]);
        if !self.unknown_tasks.is_empty() {
            out.push_str(&format!(
                "unknown tasks (overall only): {}\n",
                self.unknown_tasks.join(", ")
            ));
        }
        out
    }
}
