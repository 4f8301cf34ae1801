//! `run` and `batch`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use npc_core::agents::{SceneVerifier, ScriptedVerdict, ScriptedVerifier};
use npc_core::config::NpcConfig;
use npc_core::generation::ArtifactStore;
use npc_core::jsonl::read_jsonl;
use npc_core::ledger::{OrderedLedgerWriter, SystemClock};
use npc_core::orchestrator::{run_batch, Clients, RunEnv, RunResult};
use npc_core::{Execution, PromptRecord};

use crate::{
    emit, BatchArgs, CliError, CliResult, Context, LoopArgs, RunArgs, EXIT_OK, EXIT_RUNTIME,
};

pub(crate) fn require_file(flag: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{flag}: no such file {}",
            path.display()
        )))
    }
}

fn load_config(common: &LoopArgs) -> Result<NpcConfig, CliError> {
    require_file("--config", &common.config)?;
    if common.script.is_some() && !common.mock {
        return Err(CliError::Usage("--script requires --mock".into()));
    }
    if let Some(s) = &common.script {
        require_file("--script", s)?;
    }
    NpcConfig::load(&common.config).map_err(CliError::runtime)
}

fn build_clients(
    common: &LoopArgs,
    cfg: &NpcConfig,
    store: &ArtifactStore,
    ctx: &Context,
) -> Result<Clients, CliError> {
    if !common.mock {
        return cfg
            .clients(store.clone(), ctx.transport.clone())
            .map_err(CliError::runtime);
    }
    let mut clients = cfg.mock_clients(store.clone());
    if let Some(path) = &common.script {
        let file = File::open(path).map_err(CliError::runtime)?;
        let script: Vec<ScriptedVerdict> = read_jsonl(BufReader::new(file))
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        clients.verifier = Arc::new(
            ScriptedVerifier::new(store.clone(), Box::new(SceneVerifier::new(store.clone())))
                .with_script(script),
        );
    }
    Ok(clients)
}

fn prompt_from_arg(arg: &str) -> Result<PromptRecord, CliError> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        fs::read_to_string(path).map_err(CliError::runtime)?
    } else {
        arg.to_string()
    };
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim();
    if first.starts_with('{') {
        return serde_json::from_str(first)
            .map_err(|e| CliError::Runtime(format!("prompt record: {e}")));
    }
    Ok(PromptRecord::new("prompt", text.trim()))
}

fn result_json(r: &RunResult) -> serde_json::Value {
    match r {
        Ok(o) => serde_json::to_value(o),
        Err(f) => serde_json::to_value(f),
    }
    .expect("results serialize")
}

struct Prepared {
    cfg: NpcConfig,
    clients: Clients,
}

fn prepare(
    common: &LoopArgs,
    out_dir: &Path,
    ctx: &Context,
) -> Result<(Prepared, ArtifactStore), CliError> {
    let cfg = load_config(common)?;
    let store = ArtifactStore::open(out_dir).map_err(CliError::runtime)?;
    let clients = build_clients(common, &cfg, &store, ctx)?;
    Ok((Prepared { cfg, clients }, store))
}

/// Runs `prompts`, writing the ledger to `ledger`. Returns results and
/// whether the batch was interrupted.
fn execute<W: Write + Send>(
    prompts: &[PromptRecord],
    prepared: &Prepared,
    ledger: W,
    parallelism: usize,
    ctx: &Context,
) -> Result<(Vec<RunResult>, bool), CliError> {
    let writer = OrderedLedgerWriter::new(ledger);
    let env = RunEnv {
        ledger: &writer,
        clock: &SystemClock,
        cancel: &ctx.cancel,
    };
    let exec = if parallelism > 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let results = run_batch(
        prompts,
        &prepared.cfg.pipeline,
        &prepared.clients,
        &env,
        parallelism,
        exec,
    )
    .map_err(CliError::runtime)?;
    let interrupted = ctx.cancel.load(Ordering::SeqCst);
    if interrupted {
        writer.flush_all().map_err(CliError::runtime)?;
    }
    Ok((results, interrupted))
}

fn exit_code(results: &[RunResult], interrupted: bool, err: &mut dyn Write) -> i32 {
    if interrupted {
        let _ = writeln!(err, "interrupted: ledger flushed");
        return EXIT_RUNTIME;
    }
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        let _ = writeln!(err, "{failed} of {} runs failed", results.len());
        return EXIT_RUNTIME;
    }
    EXIT_OK
}

pub(crate) fn run_one(
    args: RunArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
    ctx: &Context,
) -> CliResult {
    let prompt = prompt_from_arg(&args.prompt)?;
    let (prepared, _store) = prepare(&args.common, &args.out, ctx)?;
    let ledger = OpenOptions::new()
        .create(true)
        .append(true)
        .open(args.out.join("ledger.jsonl"))
        .map_err(CliError::runtime)?;
    let (results, interrupted) = execute(&[prompt], &prepared, BufWriter::new(ledger), 1, ctx)?;
    for r in &results {
        emit(out, &result_json(r))?;
    }
    Ok(exit_code(&results, interrupted, err))
}

pub(crate) fn batch(
    args: BatchArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
    ctx: &Context,
) -> CliResult {
    require_file("--prompts", &args.prompts)?;
    let prompts: Vec<PromptRecord> = read_jsonl(BufReader::new(
        File::open(&args.prompts).map_err(CliError::runtime)?,
    ))
    .map_err(|e| CliError::Runtime(format!("{}: {e}", args.prompts.display())))?;
    let (prepared, _store) = prepare(&args.common, &args.out, ctx)?;
    let ledger = File::create(args.out.join("ledger.jsonl")).map_err(CliError::runtime)?;
    let (results, interrupted) = execute(
        &prompts,
        &prepared,
        BufWriter::new(ledger),
        args.parallel as usize,
        ctx,
    )?;

    let mut outcomes =
        BufWriter::new(File::create(args.out.join("outcomes.jsonl")).map_err(CliError::runtime)?);
    for r in &results {
        let v = result_json(r);
        emit(&mut outcomes, &v)?;
        emit(out, &v)?;
    }
    outcomes.flush().map_err(CliError::runtime)?;
    Ok(exit_code(&results, interrupted, err))
}
