//! Run ledger: line-delimited JSON, one [`RunLedgerEntry`] per attempt.
//!
//! Pipelines stage each attempt with [`LedgerSink::append`] as soon as it
//! is verified and call [`LedgerSink::finish_run`] once the selected attempt
//! is known. The writer emits whole runs in sequence-number order, so a
//! batch produces the same file at any parallelism.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::model::RunLedgerEntry;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// How a run ends in the ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunEnd {
    /// The attempt with this index was selected as output.
    Selected(u32),
    /// The run stopped with an error; no attempt is terminal.
    Aborted(String),
}

pub trait LedgerSink: Send + Sync {
    fn append(&self, seq: usize, entry: RunLedgerEntry) -> io::Result<()>;
    fn finish_run(&self, seq: usize, end: RunEnd) -> io::Result<()>;
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullLedger;

impl LedgerSink for NullLedger {
    fn append(&self, _seq: usize, _entry: RunLedgerEntry) -> io::Result<()> {
        Ok(())
    }

    fn finish_run(&self, _seq: usize, _end: RunEnd) -> io::Result<()> {
        Ok(())
    }
}

struct State<W> {
    out: W,
    next: usize,
    staged: BTreeMap<usize, Vec<RunLedgerEntry>>,
    done: BTreeMap<usize, Vec<RunLedgerEntry>>,
    lines: usize,
}

impl<W: Write> State<W> {
    fn write_run(&mut self, entries: &[RunLedgerEntry]) -> io::Result<()> {
        for e in entries {
            self.out.write_all(e.to_json_line().as_bytes())?;
            self.out.write_all(b"\n")?;
            self.lines += 1;
        }
        Ok(())
    }

    fn drain_ready(&mut self) -> io::Result<()> {
        while let Some(entries) = self.done.remove(&self.next) {
            self.write_run(&entries)?;
            self.next += 1;
        }
        self.out.flush()
    }
}

/// Single writer emitting completed runs in sequence order.
pub struct OrderedLedgerWriter<W: Write + Send> {
    state: Mutex<State<W>>,
}

impl<W: Write + Send> OrderedLedgerWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            state: Mutex::new(State {
                out,
                next: 0,
                staged: BTreeMap::new(),
                done: BTreeMap::new(),
                lines: 0,
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State<W>> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Mark `seq` as producing no run (e.g. rejected before starting) so
    /// later runs are not held back.
    pub fn skip(&self, seq: usize) -> io::Result<()> {
        let mut s = self.lock();
        s.done.insert(seq, Vec::new());
        s.drain_ready()
    }

    /// Write everything still buffered, complete or not, in sequence order.
    /// Used on interruption; unfinished runs carry no terminal entry.
    pub fn flush_all(&self) -> io::Result<()> {
        let mut s = self.lock();
        let mut all: BTreeMap<usize, Vec<RunLedgerEntry>> = std::mem::take(&mut s.done);
        for (seq, mut entries) in std::mem::take(&mut s.staged) {
            if let Some(last) = entries.last_mut() {
                last.note.get_or_insert_with(|| "interrupted".to_string());
            }
            all.entry(seq).or_default().extend(entries);
        }
        for (seq, entries) in all {
            s.write_run(&entries)?;
            s.next = s.next.max(seq + 1);
        }
        s.out.flush()
    }

    pub fn lines_written(&self) -> usize {
        self.lock().lines
    }

    pub fn into_inner(self) -> W {
        self.state
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .out
    }
}

impl<W: Write + Send> LedgerSink for OrderedLedgerWriter<W> {
    fn append(&self, seq: usize, entry: RunLedgerEntry) -> io::Result<()> {
        self.lock().staged.entry(seq).or_default().push(entry);
        Ok(())
    }

    fn finish_run(&self, seq: usize, end: RunEnd) -> io::Result<()> {
        let mut s = self.lock();
        let mut entries = s.staged.remove(&seq).unwrap_or_default();
        match end {
            RunEnd::Selected(idx) => {
                for e in &mut entries {
                    e.terminal = e.attempt_index == idx;
                }
            }
            RunEnd::Aborted(reason) => {
                for e in &mut entries {
                    e.terminal = false;
                }
                if let Some(last) = entries.last_mut() {
                    last.note = Some(format!("aborted: {reason}"));
                }
            }
        }
        s.done.insert(seq, entries);
        s.drain_ready()
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn read_ledger<R: BufRead>(reader: R) -> Result<Vec<RunLedgerEntry>, LedgerError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            RunLedgerEntry::from_json_line(&line).map_err(|e| LedgerError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Ledger text with every timestamp replaced by the Unix epoch, for
/// comparing replays.
pub fn normalize_timestamps(text: &str) -> Result<String, LedgerError> {
    let epoch = DateTime::<Utc>::UNIX_EPOCH;
    let mut out = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut e = RunLedgerEntry::from_json_line(line).map_err(|err| LedgerError::Parse {
            line: i + 1,
            message: err.to_string(),
        })?;
        e.timestamp = epoch;
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    Ok(out)
}

/// Structural problems: attempt indices not consecutive from 0, or a
/// completed run without exactly one terminal entry. Aborted or interrupted
/// runs are exempt from the terminal rule.
pub fn check_ledger(entries: &[RunLedgerEntry]) -> Vec<String> {
    let mut runs: BTreeMap<&str, Vec<&RunLedgerEntry>> = BTreeMap::new();
    for e in entries {
        runs.entry(e.run_id.as_str()).or_default().push(e);
    }
    let mut problems = Vec::new();
    for (run, es) in runs {
        for (i, e) in es.iter().enumerate() {
            if e.attempt_index as usize != i {
                problems.push(format!(
                    "{run}: attempt {} at position {i}",
                    e.attempt_index
                ));
                break;
            }
        }
        let unfinished = es
            .last()
            .and_then(|e| e.note.as_deref())
            .is_some_and(|n| n.starts_with("aborted") || n == "interrupted");
        let terminals = es.iter().filter(|e| e.terminal).count();
        if !unfinished && terminals != 1 {
            problems.push(format!("{run}: {terminals} terminal entries"));
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PipelineConfig, VerifierVerdict};

    fn entry(run: &str, idx: u32) -> RunLedgerEntry {
        RunLedgerEntry {
            run_id: run.into(),
            prompt_id: run.into(),
            attempt_index: idx,
            negative: None,
            generator_params: PipelineConfig::default().generator_params(0),
            verdict: VerifierVerdict::new(false, 0.1 * idx as f64, "r"),
            image_ref: format!("artifacts/{run}{idx}.bmp"),
            timestamp: Utc::now(),
            terminal: false,
            note: None,
        }
    }

    fn parse(buf: Vec<u8>) -> Vec<RunLedgerEntry> {
        read_ledger(buf.as_slice()).unwrap()
    }

    #[test]
    fn runs_are_written_in_sequence_order() {
        let w = OrderedLedgerWriter::new(Vec::new());
        w.append(1, entry("b", 0)).unwrap();
        w.append(0, entry("a", 0)).unwrap();
        w.append(1, entry("b", 1)).unwrap();
        w.finish_run(1, RunEnd::Selected(1)).unwrap();
        assert_eq!(w.lines_written(), 0);
        w.append(0, entry("a", 1)).unwrap();
        w.finish_run(0, RunEnd::Selected(0)).unwrap();
        assert_eq!(w.lines_written(), 4);
        let es = parse(w.into_inner());
        let order: Vec<_> = es
            .iter()
            .map(|e| (e.run_id.as_str(), e.attempt_index, e.terminal))
            .collect();
        assert_eq!(
            order,
            vec![
                ("a", 0, true),
                ("a", 1, false),
                ("b", 0, false),
                ("b", 1, true)
            ]
        );
        assert!(check_ledger(&es).is_empty());
    }

    #[test]
    fn skips_and_aborts() {
        let w = OrderedLedgerWriter::new(Vec::new());
        w.skip(0).unwrap();
        w.append(1, entry("b", 0)).unwrap();
        w.finish_run(1, RunEnd::Aborted("TRANSPORT".into()))
            .unwrap();
        let es = parse(w.into_inner());
        assert_eq!(es.len(), 1);
        assert_eq!(es[0].note.as_deref(), Some("aborted: TRANSPORT"));
        assert!(check_ledger(&es).is_empty());
    }

    #[test]
    fn flush_all_writes_partial_runs() {
        let w = OrderedLedgerWriter::new(Vec::new());
        w.append(2, entry("c", 0)).unwrap();
        w.finish_run(2, RunEnd::Selected(0)).unwrap();
        w.append(0, entry("a", 0)).unwrap();
        w.flush_all().unwrap();
        let es = parse(w.into_inner());
        assert_eq!(es.len(), 2);
        assert_eq!(es[0].run_id, "a");
        assert_eq!(es[0].note.as_deref(), Some("interrupted"));
        assert!(check_ledger(&es).is_empty());
    }

    #[test]
    fn checker_flags_bad_runs() {
        let mut a = vec![entry("a", 0), entry("a", 2)];
        a[1].terminal = true;
        assert_eq!(check_ledger(&a).len(), 1);
        let b = vec![entry("b", 0)];
        assert_eq!(check_ledger(&b), vec!["b: 0 terminal entries".to_string()]);
    }

    #[test]
    fn normalization_only_touches_timestamps() {
        let mut e = entry("a", 0);
        e.terminal = true;
        let line = format!("{}\n", e.to_json_line());
        let n = normalize_timestamps(&line).unwrap();
        assert!(n.contains("\"timestamp\":\"1970-01-01T00:00:00Z\""));
        let mut e2 = e.clone();
        e2.timestamp = DateTime::<Utc>::UNIX_EPOCH;
        assert_eq!(n, format!("{}\n", e2.to_json_line()));
        assert!(normalize_timestamps("{").is_err());
    }
}
