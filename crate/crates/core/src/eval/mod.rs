//! Benchmark metric aggregation over recorded verdicts.
//!
//! Two metrics: pass/fail accuracy per compositional task (GenEval-style) and
//! weighted 0 to 10 scoring of imaginative edits (Imagine-style). Inputs are
//! line-delimited JSON score records, or a run ledger plus the prompt set.

mod geneval;
mod imagine;
mod records;

pub use geneval::{
    geneval_accuracy, normalize_geneval_task, Accuracy, GenevalReport, TaskAccuracy, GENEVAL_TASKS,
};
pub use imagine::{
    imagine_final_score, imagine_report, CategoryScore, ImagineReport, ImagineScores,
    IMAGINE_CATEGORIES,
};
pub use records::{read_score_records, records_from_ledger, ScoreRecord};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{field} = {value} is outside [0, 10]")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("record for `{prompt_id}` has no `{field}`")]
    MissingField {
        prompt_id: String,
        field: &'static str,
    },
    #[error("score file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Write `<stem>.json` and `<stem>.txt` into `dir`, returning both paths.
pub fn write_report<R: serde::Serialize>(
    dir: &Path,
    stem: &str,
    report: &R,
    table: &str,
) -> Result<(PathBuf, PathBuf), EvalError> {
    fs::create_dir_all(dir)?;
    let json_path = dir.join(format!("{stem}.json"));
    let txt_path = dir.join(format!("{stem}.txt"));
    let mut json = serde_json::to_string_pretty(report).expect("reports serialize");
    json.push('\n');
    fs::write(&json_path, json)?;
    fs::write(&txt_path, table)?;
    Ok((json_path, txt_path))
}

/// Fixed-width text table with a left-aligned first column.
pub(crate) fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        parts.join(" | ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&rule.join("-+-"));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}
