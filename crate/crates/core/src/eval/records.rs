use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{EvalError, ImagineScores};
use crate::model::{PromptRecord, RunLedgerEntry};

/// One line of a recorded verdict or score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub prompt_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imagine_scores: Option<ImagineScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluator_id: Option<String>,
}

impl ScoreRecord {
    /// Fill a missing task from the prompt set.
    pub fn with_task_from(mut self, tasks: &HashMap<&str, &str>) -> Self {
        if self.task_type.is_none() {
            self.task_type = tasks.get(self.prompt_id.as_str()).map(|t| t.to_string());
        }
        self
    }
}

/// Read line-delimited score records; blank lines are skipped.
pub fn read_score_records<R: BufRead>(reader: R) -> Result<Vec<ScoreRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(s) = &rec.imagine_scores {
            s.validate()?;
        }
        out.push(rec);
    }
    Ok(out)
}

/// Pass/fail records taken from the terminal verdict of each ledger run,
/// with tasks looked up in `prompts`.
pub fn records_from_ledger(
    entries: &[RunLedgerEntry],
    prompts: &[PromptRecord],
) -> Vec<ScoreRecord> {
    let tasks: HashMap<&str, &str> = prompts
        .iter()
        .filter_map(|p| p.task_type.as_deref().map(|t| (p.id.as_str(), t)))
        .collect();
    entries
        .iter()
        .filter(|e| e.terminal)
        .map(|e| {
            ScoreRecord {
                prompt_id: e.prompt_id.clone(),
                task_type: None,
                correct: Some(e.verdict.correct),
                imagine_scores: None,
                evaluator_id: Some("pipeline-verifier".into()),
            }
            .with_task_from(&tasks)
        })
        .collect()
}
