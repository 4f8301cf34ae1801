//! Line-delimited JSON input files.

use std::io::{self, BufRead};

use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PromptRecord;

    #[test]
    fn reads_prompt_records() {
        let text = "{\"id\":\"a\",\"positive_prompt\":\"two dogs\",\"seed\":3}\n\n{\"id\":\"b\",\"positive_prompt\":\"a cup\"}\n";
        let ps: Vec<PromptRecord> = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].seed, Some(3));
        let err = read_jsonl::<PromptRecord, _>("{\"id\":1}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, JsonlError::Parse { line: 1, .. }));
    }
}
