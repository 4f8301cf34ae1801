//! `rank`, `attn` and `simulate`.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::Path;

use npc_core::attention::{
    compare_runs, logits_to_probs, read_dump, salient_attention_score, AttentionDump, DumpKind,
};
use npc_core::embedding::{EmbeddingBackend, MockEmbeddingBackend, RemoteEmbeddingBackend};
use npc_core::saliency::{extract_salient_tokens, rank_candidates, SalientTokenSet};
use npc_core::simulate::{simulate_ordering, EffectivenessModel, SimulationSpec};
use npc_core::{
    validate_candidate, CandidateKind, Execution, NegativeCandidate, OrderingMode, Violation,
};
use serde_json::json;

use crate::pipeline::require_file;
use crate::{
    emit, AttnCommand, CliError, CliResult, Context, EmbedBackendArg, RankArgs, SimulateArgs,
    EXIT_OK,
};

fn parse_ordering(s: &str, seed: u64) -> Result<OrderingMode, CliError> {
    match s.trim() {
        "salient" | "salient_desc" => Ok(OrderingMode::SalientDesc),
        "proposer" | "proposer_order" => Ok(OrderingMode::ProposerOrder),
        "random" => Ok(OrderingMode::Random(seed)),
        other => Err(CliError::Usage(format!(
            "--ordering: unknown ordering `{other}` (expected salient, proposer or random)"
        ))),
    }
}

fn violation_codes(vs: &[Violation]) -> Vec<&'static str> {
    vs.iter().map(|v| v.code()).collect()
}

pub(crate) fn rank(args: RankArgs, out: &mut dyn Write, ctx: &Context) -> CliResult {
    let raw: Vec<String> = if Path::new(&args.candidates).is_file() {
        fs::read_to_string(&args.candidates)
            .map_err(CliError::runtime)?
            .lines()
            .map(str::to_string)
            .collect()
    } else {
        args.candidates.split(',').map(str::to_string).collect()
    };
    let mode = parse_ordering(&args.ordering, args.seed)?;
    let mut candidates = Vec::new();
    for text in raw.iter().filter(|t| !t.trim().is_empty()) {
        match validate_candidate(text) {
            Ok(normalized) => {
                let rank = candidates.len() as u32;
                candidates.push(NegativeCandidate::new(
                    normalized,
                    CandidateKind::Unknown,
                    rank,
                ));
            }
            Err(vs) => emit(
                out,
                &json!({"text": text, "rejected": violation_codes(&vs)}),
            )?,
        }
    }
    let salient = match &args.salient {
        Some(list) => {
            SalientTokenSet::manual(list.split(',').map(str::trim).filter(|t| !t.is_empty()))
        }
        None => extract_salient_tokens(&args.prompt),
    };
    let backend: Box<dyn EmbeddingBackend> = match args.backend {
        EmbedBackendArg::Mock => Box::new(MockEmbeddingBackend::new(args.seed)),
        EmbedBackendArg::Remote => Box::new(RemoteEmbeddingBackend::new(
            &args.url,
            ctx.transport.clone(),
        )),
    };
    let ranked = rank_candidates(&args.prompt, &candidates, &salient, backend.as_ref(), mode)
        .map_err(CliError::runtime)?;
    for (position, s) in ranked.iter().enumerate() {
        emit(
            out,
            &json!({
                "position": position + 1,
                "text": s.candidate.text,
                "salient_score": s.score,
                "proposer_rank": s.candidate.proposer_rank,
                "per_token": s.per_token,
            }),
        )?;
    }
    Ok(EXIT_OK)
}

fn parse_indices(flag: &str, s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{flag}: `{p}` is not a token index")))
        })
        .collect()
}

fn load_dump(flag: &str, path: &Path) -> Result<AttentionDump, CliError> {
    require_file(flag, path)?;
    let file = File::open(path).map_err(CliError::runtime)?;
    let dump = read_dump(BufReader::new(file))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    match dump.kind() {
        DumpKind::Probabilities => Ok(dump),
        DumpKind::Logits => logits_to_probs(&dump).map_err(CliError::runtime),
    }
}

fn salient_for(arg: &Option<String>, dump: &AttentionDump) -> Result<Vec<usize>, CliError> {
    match arg {
        Some(s) => parse_indices("--salient", s),
        None => dump
            .salient_indices()
            .map(<[usize]>::to_vec)
            .ok_or_else(|| {
                CliError::Usage(
                    "--salient: required because the dump header names no salient tokens".into(),
                )
            }),
    }
}

pub(crate) fn attn(cmd: AttnCommand, out: &mut dyn Write) -> CliResult {
    match cmd {
        AttnCommand::Score { dump, salient } => {
            let d = load_dump("--dump", &dump)?;
            let idx = salient_for(&salient, &d)?;
            let rho = salient_attention_score(&d, &idx).map_err(CliError::runtime)?;
            emit(
                out,
                &json!({"rho_sal": rho, "salient": idx, "dims": d.dims()}),
            )?;
        }
        AttnCommand::Compare {
            base,
            variant,
            salient,
        } => {
            let b = load_dump("--base", &base)?;
            let v = load_dump("--variant", &variant)?;
            let idx = salient_for(&salient, &b)?;
            let c = compare_runs(&b, &v, &idx).map_err(CliError::runtime)?;
            emit(
                out,
                &json!({
                    "rho_base": c.rho_base,
                    "rho_variant": c.rho_variant,
                    "abs_delta": c.abs_delta,
                    "rel_delta": c.rel_delta,
                    "rel_delta_percent": c.rel_delta_percent(),
                    "salient": idx,
                }),
            )?;
        }
    }
    Ok(EXIT_OK)
}

fn parse_model(s: &str) -> Result<EffectivenessModel, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "--model: expected top, uniform:P or power:E, got `{s}`"
        ))
    };
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a.parse::<f64>().map_err(|_| bad())?)),
        None => (s, None),
    };
    match (name, arg) {
        ("top" | "top_always_succeeds", None) => Ok(EffectivenessModel::TopAlwaysSucceeds),
        ("uniform", Some(p)) => Ok(EffectivenessModel::Uniform(p)),
        ("power", e) => Ok(EffectivenessModel::Power(e.unwrap_or(3.0))),
        _ => Err(bad()),
    }
}

pub(crate) fn simulate(args: SimulateArgs, out: &mut dyn Write) -> CliResult {
    let orderings = args
        .ordering
        .split(',')
        .map(|o| parse_ordering(o, args.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = SimulationSpec {
        trials: args.trials,
        k: args.k,
        model: parse_model(&args.model)?,
        orderings,
        seed: args.seed,
    };
    let exec = if args.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let report = simulate_ordering(&spec, exec).map_err(|e| CliError::Usage(e.to_string()))?;
    for r in &report.results {
        emit(
            out,
            &json!({
                "ordering": r.ordering,
                "mean_attempts": r.mean_attempts,
                "std_error": r.std_error,
                "success_rate": r.success_rate,
                "trials": report.trials,
                "k": report.k,
                "seed": report.seed,
                "model": report.model,
            }),
        )?;
    }
    Ok(EXIT_OK)
}
