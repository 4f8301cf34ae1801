//! `report` and `validate`.

use std::fs::{self, File};
use std::io::{BufReader, Write};

use npc_core::eval::{
    geneval_accuracy, imagine_report, read_score_records, records_from_ledger, write_report,
    ScoreRecord,
};
use npc_core::jsonl::read_jsonl;
use npc_core::ledger::read_ledger;
use npc_core::model::check_candidate;
use npc_core::PromptRecord;
use serde_json::json;

use crate::pipeline::require_file;
use crate::{emit, CliError, CliResult, Metric, ReportArgs, ValidateArgs, EXIT_OK};

fn open(path: &std::path::Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(CliError::runtime)?))
}

pub(crate) fn report(args: ReportArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    require_file("--ledger", &args.ledger)?;
    let entries = read_ledger(open(&args.ledger)?).map_err(CliError::runtime)?;
    let prompts: Vec<PromptRecord> = match &args.prompts {
        Some(p) => {
            require_file("--prompts", p)?;
            read_jsonl(open(p)?).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?
        }
        None => Vec::new(),
    };
    let records: Vec<ScoreRecord> = match &args.scores {
        Some(s) => {
            require_file("--scores", s)?;
            let tasks = prompts
                .iter()
                .filter_map(|p| p.task_type.as_deref().map(|t| (p.id.as_str(), t)))
                .collect();
            read_score_records(open(s)?)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", s.display())))?
                .into_iter()
                .map(|r| r.with_task_from(&tasks))
                .collect()
        }
        None if args.metric == Metric::Imagine => {
            return Err(CliError::Usage(
                "--scores: required for --metric imagine".into(),
            ));
        }
        None => records_from_ledger(&entries, &prompts),
    };

    let (value, table) = match args.metric {
        Metric::Geneval => {
            let r = geneval_accuracy(&records).map_err(CliError::runtime)?;
            let t = r.to_table(&args.method);
            (serde_json::to_value(&r).map_err(CliError::runtime)?, t)
        }
        Metric::Imagine => {
            let r = imagine_report(&records).map_err(CliError::runtime)?;
            let t = r.to_table(&args.method);
            (serde_json::to_value(&r).map_err(CliError::runtime)?, t)
        }
    };
    if let Some(dir) = &args.out {
        write_report(dir, "report", &value, &table).map_err(CliError::runtime)?;
    }
    let _ = write!(err, "{table}");
    emit(out, &value)?;
    Ok(EXIT_OK)
}

pub(crate) fn validate(args: ValidateArgs, out: &mut dyn Write) -> CliResult {
    require_file("--candidates", &args.candidates)?;
    let text = fs::read_to_string(&args.candidates).map_err(CliError::runtime)?;
    for (i, line) in text.lines().enumerate() {
        let report = check_candidate(line);
        let codes = |vs: &[npc_core::Violation]| vs.iter().map(|v| v.code()).collect::<Vec<_>>();
        emit(
            out,
            &json!({
                "line": i + 1,
                "text": line,
                "ok": report.violations.is_empty(),
                "normalized": report.normalized,
                "violations": codes(&report.violations),
                "notes": codes(&report.notes),
            }),
        )?;
    }
    Ok(EXIT_OK)
}
