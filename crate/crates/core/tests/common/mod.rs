//! Shared fixtures: the scripted six-prompt set and offline clients.
#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use npc_core::agents::{SceneVerifier, ScriptedVerdict, ScriptedVerifier};
use npc_core::config::NpcConfig;
use npc_core::generation::ArtifactStore;
use npc_core::jsonl::read_jsonl;
use npc_core::ledger::{normalize_timestamps, Clock, OrderedLedgerWriter, SystemClock};
use npc_core::orchestrator::{run_batch, Clients, RunEnv, RunResult};
use npc_core::{Execution, PromptRecord};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn fixture_prompts() -> Vec<PromptRecord> {
    read_jsonl(
        fs::read(fixture("pipeline/prompts.jsonl"))
            .unwrap()
            .as_slice(),
    )
    .unwrap()
}

pub fn fixture_config() -> NpcConfig {
    NpcConfig::load(&fixture("pipeline/config.toml")).unwrap()
}

pub fn fixture_script() -> Vec<ScriptedVerdict> {
    read_jsonl(
        fs::read(fixture("pipeline/verdicts.jsonl"))
            .unwrap()
            .as_slice(),
    )
    .unwrap()
}

/// Offline clients with the scripted verifier in front of the scene verifier.
pub fn scripted_clients(cfg: &NpcConfig, store: &ArtifactStore) -> Clients {
    let mut clients = cfg.mock_clients(store.clone());
    clients.verifier = Arc::new(
        ScriptedVerifier::new(store.clone(), Box::new(SceneVerifier::new(store.clone())))
            .with_script(fixture_script()),
    );
    clients
}

pub struct BatchRun {
    pub results: Vec<RunResult>,
    pub ledger: String,
}

impl BatchRun {
    pub fn normalized_ledger(&self) -> String {
        normalize_timestamps(&self.ledger).unwrap()
    }
}

pub fn run_with(
    prompts: &[PromptRecord],
    cfg: &NpcConfig,
    clients: &Clients,
    parallelism: usize,
    exec: Execution,
    clock: &dyn Clock,
) -> BatchRun {
    let writer = OrderedLedgerWriter::new(Vec::new());
    let cancel = AtomicBool::new(false);
    let env = RunEnv {
        ledger: &writer,
        clock,
        cancel: &cancel,
    };
    let results = run_batch(prompts, &cfg.pipeline, clients, &env, parallelism, exec).unwrap();
    BatchRun {
        results,
        ledger: String::from_utf8(writer.into_inner()).unwrap(),
    }
}

/// The six-prompt fixture in a fresh artifact directory.
pub fn run_fixture(parallelism: usize, exec: Execution) -> BatchRun {
    let dir = tempfile::tempdir().unwrap();
    let store = ArtifactStore::open(dir.path()).unwrap();
    let cfg = fixture_config();
    let clients = scripted_clients(&cfg, &store);
    run_with(
        &fixture_prompts(),
        &cfg,
        &clients,
        parallelism,
        exec,
        &SystemClock,
    )
}
