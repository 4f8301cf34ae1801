//! Acceptance checks: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed; the process
//! exits non-zero if any criterion fails. Tolerances are pinned below.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use npc_cli::{run, Context, EXIT_OK};
use npc_core::agents::{sanitize, AgentError, ProposerRequest};
use npc_core::attention::{
    compare_runs, read_dump, salient_attention_score_with, write_dump, AttentionDump, Dims,
    DumpFormatError, DumpKind,
};
use npc_core::embedding::{EmbedError, EmbeddingBackend, MockEmbeddingBackend, TokenEmbeddings};
use npc_core::eval::{
    geneval_accuracy, imagine_final_score, ImagineScores, ScoreRecord, GENEVAL_TASKS,
};
use npc_core::guidance::{apply_cfg, GuidanceInputs};
use npc_core::http::stub::FailingTransport;
use npc_core::ledger::{normalize_timestamps, read_ledger};
use npc_core::saliency::{rank_candidates, SalientScorer, SalientTokenSet};
use npc_core::simulate::{simulate_ordering, EffectivenessModel, SimulationSpec};
use npc_core::{
    validate_candidate, CandidateKind, Execution, NegativeCandidate, OrderingMode, Violation,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Attention share.
const RHO_ORACLE_TOL: f64 = 1e-6;
const RHO_UNIFORM_TOL: f64 = 1e-9;
const RHO_DUMPS: usize = 50;
const RHO_RUNTIME_LIMIT: Duration = Duration::from_secs(5);

// Published attention-share example.
const RHO_BASE: f64 = 0.069;
const RHO_TARGETED: f64 = 0.096;
const RHO_UNTARGETED: f64 = 0.075;
const DELTA_TARGETED_PCT: f64 = 39.13;
const DELTA_UNTARGETED_PCT: f64 = 8.70;
const DELTA_TOL_PP: f64 = 0.01;

// Guidance kernel.
const CFG_CASES: u32 = 1000;
const CFG_TOL: f64 = 1e-12;

// Salient score.
const SALIENT_CASES: u32 = 1000;
const SALIENT_ORACLE_TOL: f64 = 1e-9;

// Ordering simulation.
const SIM_TRIALS: usize = 10_000;
const SIM_K: usize = 5;
const SIM_MIN_GAP: f64 = 0.5;
const SIM_TOP_TOL: f64 = 0.05;
const SIM_POWER_EXPONENT: f64 = 3.0;

// Proposer sanitization.
const SANITIZE_CASES: u32 = 200;

// Metrics.
const GENEVAL_NPC_ROW: [f64; 7] = [0.550, 0.675, 0.350, 0.525, 0.550, 0.725, 0.625];
const GENEVAL_NPC_OVERALL: f64 = 0.571;
const GENEVAL_ROUNDING_TOL: f64 = 0.0005;
const GENEVAL_PROMPTS_PER_TASK: usize = 40;

type Check = fn() -> Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- attention

fn random_prob_dump(rng: &mut ChaCha8Rng) -> (AttentionDump, Vec<usize>) {
    let dims = Dims::new(
        rng.random_range(1..=4),
        rng.random_range(1..=2),
        rng.random_range(1..=2),
        rng.random_range(1..=8),
        rng.random_range(1..=12),
    );
    let mut values = Vec::with_capacity(dims.numel());
    for _ in 0..dims.numel() / dims.l {
        let raw: Vec<f64> = (0..dims.l).map(|_| rng.random_range(0.001..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        values.extend(raw.iter().map(|v| (v / sum) as f32));
    }
    let mut salient: Vec<usize> = (0..dims.l).filter(|_| rng.random_bool(0.4)).collect();
    if salient.is_empty() {
        salient.push(rng.random_range(0..dims.l));
    }
    (
        AttentionDump::new(dims, DumpKind::Probabilities, values).unwrap(),
        salient,
    )
}

/// Nested-loop reference over the flat t, b, h, q, k layout.
fn rho_oracle(d: &AttentionDump, salient: &[usize]) -> f64 {
    let Dims {
        t: nt,
        b: nb,
        h: nh,
        q: nq,
        l: nl,
    } = d.dims();
    let v = d.values();
    let mut total = 0.0;
    for t in 0..nt {
        let (mut s, mut u) = (0.0f64, 0.0f64);
        for b in 0..nb {
            for h in 0..nh {
                for q in 0..nq {
                    for k in 0..nl {
                        let p = v[(((t * nb + b) * nh + h) * nq + q) * nl + k] as f64;
                        if salient.contains(&k) {
                            s += p;
                        } else {
                            u += p;
                        }
                    }
                }
            }
        }
        total += s / (s + u);
    }
    total / nt as f64
}

fn uniform_dump(dims: Dims) -> AttentionDump {
    AttentionDump::new(
        dims,
        DumpKind::Probabilities,
        vec![1.0 / dims.l as f32; dims.numel()],
    )
    .unwrap()
}

fn check_rho_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a1);
    let mut worst = 0.0f64;
    for i in 0..RHO_DUMPS {
        let (d, salient) = random_prob_dump(&mut rng);
        let want = rho_oracle(&d, &salient);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let got =
                salient_attention_score_with(&d, &salient, exec).map_err(|e| e.to_string())?;
            let err = (got - want).abs();
            worst = worst.max(err);
            ensure(err <= RHO_ORACLE_TOL, || {
                format!("dump {i} ({exec:?}): {got} vs oracle {want}")
            })?;
        }
    }
    for (dims, salient) in [
        (Dims::new(3, 2, 2, 8, 10), vec![2, 5, 7]),
        (Dims::new(1, 1, 1, 1, 7), vec![0, 6]),
        (Dims::new(4, 2, 2, 8, 12), (0..12).collect()),
    ] {
        let want = salient.len() as f64 / dims.l as f64;
        let got = salient_attention_score_with(&uniform_dump(dims), &salient, Execution::default())
            .unwrap();
        ensure((got - want).abs() <= RHO_UNIFORM_TOL, || {
            format!("uniform {dims:?}: {got} vs {want}")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < RHO_RUNTIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{RHO_DUMPS} dumps, max error {worst:.1e}, uniform |sal|/L exact, {elapsed:.2?}"
    ))
}

/// One salient token holding `rho` of every slice's mass.
fn dump_with_share(rho: f64) -> AttentionDump {
    let dims = Dims::new(3, 1, 2, 4, 16);
    let rest = ((1.0 - rho) / (dims.l - 1) as f64) as f32;
    let mut slice = vec![rest; dims.l];
    slice[0] = rho as f32;
    let values = slice.iter().copied().cycle().take(dims.numel()).collect();
    AttentionDump::new(dims, DumpKind::Probabilities, values).unwrap()
}

fn check_share_arithmetic() -> Result<String, String> {
    let base = dump_with_share(RHO_BASE);
    let targeted =
        compare_runs(&base, &dump_with_share(RHO_TARGETED), &[0]).map_err(|e| e.to_string())?;
    let untargeted =
        compare_runs(&base, &dump_with_share(RHO_UNTARGETED), &[0]).map_err(|e| e.to_string())?;
    let (t, u) = (targeted.rel_delta_percent(), untargeted.rel_delta_percent());
    ensure((t - DELTA_TARGETED_PCT).abs() <= DELTA_TOL_PP, || {
        format!("targeted {t:.4}%")
    })?;
    ensure((u - DELTA_UNTARGETED_PCT).abs() <= DELTA_TOL_PP, || {
        format!("untargeted {u:.4}%")
    })?;
    Ok(format!(
        "+{t:.2}% and +{u:.2}% (rho {:.3} -> {:.3} / {:.3})",
        targeted.rho_base, targeted.rho_variant, untargeted.rho_variant
    ))
}

// ----------------------------------------------------------------- guidance

/// f_pos, f_neg, f_null, an alternate field, scale, step, active steps.
type CfgCase = (
    Vec<f64>,
    Vec<f64>,
    Vec<f64>,
    Vec<f64>,
    f64,
    u32,
    BTreeSet<u32>,
);

fn cfg_strategy() -> impl Strategy<Value = CfgCase> {
    (1usize..64).prop_flat_map(|n| {
        let v = || prop::collection::vec(-1e3f64..1e3, n);
        (
            v(),
            v(),
            v(),
            v(),
            -5.0f64..10.0,
            1u32..=50,
            prop::collection::btree_set(1u32..=50, 0..10),
        )
    })
}

fn check_cfg_kernel() -> Result<String, String> {
    runner(CFG_CASES)
        .run(
            &cfg_strategy(),
            |(pos, neg, null, other, scale, step, active)| {
                fn inputs<'a>(
                    f_pos: &'a [f64],
                    f_neg: &'a [f64],
                    scale: f64,
                    step: u32,
                    active: &'a BTreeSet<u32>,
                ) -> GuidanceInputs<'a> {
                    GuidanceInputs {
                        f_pos,
                        f_neg,
                        scale,
                        step_index: step,
                        active_steps: active,
                    }
                }
                let g = |f_neg, scale| inputs(&pos, f_neg, scale, step, &active);
                let base = if active.contains(&step) { &neg } else { &null };

                let one = apply_cfg(&g(&neg, 1.0), &null).unwrap();
                for (o, p) in one.iter().zip(&pos) {
                    prop_assert!((o - p).abs() <= CFG_TOL, "scale 1: {o} vs {p}");
                }
                let zero = apply_cfg(&g(&neg, 0.0), &null).unwrap();
                for (o, b) in zero.iter().zip(base) {
                    prop_assert!((o - b).abs() <= CFG_TOL, "scale 0: {o} vs {b}");
                }

                let out = apply_cfg(&g(&neg, scale), &null).unwrap();
                if active.contains(&step) {
                    let alt = apply_cfg(&g(&neg, scale), &other).unwrap();
                    prop_assert!(
                        out.iter()
                            .zip(&alt)
                            .all(|(a, b)| a.to_bits() == b.to_bits()),
                        "active step read f_null"
                    );
                } else {
                    let alt = apply_cfg(&g(&other, scale), &null).unwrap();
                    prop_assert!(
                        out.iter()
                            .zip(&alt)
                            .all(|(a, b)| a.to_bits() == b.to_bits()),
                        "inactive step read f_neg"
                    );
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{CFG_CASES} random cases: scale 1 and 0 within {CFG_TOL:e}, gate bitwise"
    ))
}

// ----------------------------------------------------------------- saliency

struct Scaled {
    inner: MockEmbeddingBackend,
    factor: f64,
}

impl EmbeddingBackend for Scaled {
    fn identity(&self) -> String {
        format!("{}*{}", self.inner.identity(), self.factor)
    }

    fn embed(&self, text: &str) -> Result<TokenEmbeddings, EmbedError> {
        Ok(self.inner.embed(text)?.scaled(self.factor))
    }
}

const VOCAB: &[&str] = &[
    "red", "green", "blue", "dog", "cat", "cup", "car", "tree", "two", "three", "a", "sofa",
    "beach", "lamp", "wooden", "shiny", "bird", "clock", "striped", "glass",
];

fn phrase(words: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(VOCAB), words).prop_map(|w| w.join(" "))
}

fn pooled(e: &TokenEmbeddings) -> Vec<f64> {
    let mut out = vec![0.0; e.dim()];
    for row in e.rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter().map(|v| v / e.len() as f64).collect()
}

fn cosine_oracle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn salient_oracle(
    backend: &dyn EmbeddingBackend,
    prompt: &str,
    negative: &str,
    salient: &[String],
) -> f64 {
    if salient.is_empty() {
        return 0.0;
    }
    let p = pooled(&backend.embed(prompt).unwrap());
    let n = pooled(&backend.embed(negative).unwrap());
    let d: Vec<f64> = p.iter().zip(&n).map(|(a, b)| a - b).collect();
    salient
        .iter()
        .map(|t| cosine_oracle(&d, &pooled(&backend.embed(t).unwrap())))
        .sum::<f64>()
        / salient.len() as f64
}

fn check_salient_score() -> Result<String, String> {
    let strategy = (
        phrase(3..=8),
        prop::collection::vec(phrase(1..=3), 2..=6),
        prop::collection::vec(prop::sample::select(VOCAB), 1..=3),
        -3.0f64..3.0,
        any::<u64>(),
    );
    runner(SALIENT_CASES)
        .run(&strategy, |(prompt, texts, salient, log_scale, seed)| {
            let salient = SalientTokenSet::manual(salient);
            let candidates: Vec<NegativeCandidate> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| NegativeCandidate::new(t.clone(), CandidateKind::Unknown, i as u32))
                .collect();
            let plain = MockEmbeddingBackend::new(seed).with_dim(32);
            let scaled = Scaled {
                inner: MockEmbeddingBackend::new(seed).with_dim(32),
                factor: 10f64.powf(log_scale),
            };
            let order = |b: &dyn EmbeddingBackend| -> Vec<u32> {
                rank_candidates(&prompt, &candidates, &salient, b, OrderingMode::SalientDesc)
                    .unwrap()
                    .iter()
                    .map(|s| s.candidate.proposer_rank)
                    .collect()
            };
            prop_assert_eq!(order(&plain), order(&scaled));

            let scorer = SalientScorer::new(&prompt, &salient, &plain).unwrap();
            prop_assert_eq!(scorer.score_text(&prompt).unwrap().0, 0.0);
            for t in &texts {
                let got = scorer.score_text(t).unwrap().0;
                let want = salient_oracle(&plain, &prompt, t, salient.tokens());
                prop_assert!(
                    (got - want).abs() <= SALIENT_ORACLE_TOL,
                    "{t}: {got} vs {want}"
                );
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{SALIENT_CASES} cases: ranks scale-invariant, n = p scores 0, oracle within {SALIENT_ORACLE_TOL:e}"
    ))
}

// --------------------------------------------------------------- simulation

fn simulate(model: EffectivenessModel, seed: u64) -> Result<(f64, f64), String> {
    let spec = SimulationSpec {
        trials: SIM_TRIALS,
        k: SIM_K,
        model,
        orderings: vec![OrderingMode::SalientDesc, OrderingMode::Random(seed + 1)],
        seed,
    };
    let r = simulate_ordering(&spec, Execution::default()).map_err(|e| e.to_string())?;
    Ok((r.results[0].mean_attempts, r.results[1].mean_attempts))
}

fn check_ordering_simulation() -> Result<String, String> {
    let (sal, rnd) = simulate(EffectivenessModel::Power(SIM_POWER_EXPONENT), 7)?;
    ensure(rnd - sal >= SIM_MIN_GAP, || {
        format!("monotone model: salient {sal:.3}, random {rnd:.3}")
    })?;
    let (top_sal, top_rnd) = simulate(EffectivenessModel::TopAlwaysSucceeds, 11)?;
    ensure((top_sal - 1.0).abs() <= SIM_TOP_TOL, || {
        format!("top model salient {top_sal}")
    })?;
    ensure((top_rnd - 3.0).abs() <= SIM_TOP_TOL, || {
        format!("top model random {top_rnd}")
    })?;
    Ok(format!(
        "score^{SIM_POWER_EXPONENT}: salient {sal:.3} vs random {rnd:.3}; top: {top_sal:.3} vs {top_rnd:.3}"
    ))
}

// --------------------------------------------------------------- end to end

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/pipeline")
        .join(name)
        .display()
        .to_string()
}

fn cli_batch(out: &Path, parallel: &str) -> Result<(String, usize), String> {
    let transport = Arc::new(FailingTransport::new());
    let ctx = Context {
        transport: transport.clone(),
        cancel: Arc::new(AtomicBool::new(false)),
    };
    let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
    let (prompts, config, script) = (
        fixture("prompts.jsonl"),
        fixture("config.toml"),
        fixture("verdicts.jsonl"),
    );
    let args = [
        "npc",
        "batch",
        "--prompts",
        &prompts,
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--mock",
        "--script",
        &script,
        "--parallel",
        parallel,
    ];
    let code = run(args, &mut stdout, &mut stderr, &ctx);
    ensure(code == EXIT_OK, || {
        format!("exit {code}: {}", String::from_utf8_lossy(&stderr))
    })?;
    Ok((String::from_utf8(stdout).unwrap(), transport.calls()))
}

fn check_end_to_end() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (out_a, calls_a) = cli_batch(&a, "1")?;
    let (out_b, calls_b) = cli_batch(&b, "4")?;
    ensure(calls_a + calls_b == 0, || {
        format!("{} network calls", calls_a + calls_b)
    })?;

    let outcomes: Vec<serde_json::Value> = out_a
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    ensure(outcomes.len() == 6, || {
        format!("{} outcomes", outcomes.len())
    })?;
    let get = |id: &str| {
        outcomes
            .iter()
            .find(|o| o["prompt_id"] == id)
            .cloned()
            .unwrap_or_default()
    };
    let path = |id: &str| {
        (
            get(id)["terminal_reason"]
                .as_str()
                .unwrap_or("")
                .to_string(),
            get(id)["attempts_used"].as_u64(),
        )
    };
    ensure(
        path("dogs-beach") == ("precheck_pass".into(), Some(1)),
        || format!("dogs-beach {:?}", path("dogs-beach")),
    )?;
    ensure(path("apple-cup") == ("early_stop".into(), Some(3)), || {
        format!("apple-cup {:?}", path("apple-cup"))
    })?;
    ensure(
        path("cats-sofa") == ("fallback_best_score".into(), Some(6)),
        || format!("cats-sofa {:?}", path("cats-sofa")),
    )?;

    let ledger =
        |dir: &Path| fs::read_to_string(dir.join("ledger.jsonl")).map_err(|e| e.to_string());
    let (la, lb) = (ledger(&a)?, ledger(&b)?);
    let entries = read_ledger(la.as_bytes()).map_err(|e| e.to_string())?;
    let cats_terminal: Vec<(u32, f64)> = entries
        .iter()
        .filter(|e| e.prompt_id == "cats-sofa" && e.terminal)
        .map(|e| (e.attempt_index, e.verdict.score))
        .collect();
    ensure(cats_terminal == [(2, 0.7)], || {
        format!("tie resolved to {cats_terminal:?}")
    })?;
    let (na, nb) = (
        normalize_timestamps(&la).unwrap(),
        normalize_timestamps(&lb).unwrap(),
    );
    ensure(na == nb && out_a == out_b, || "replay differs".into())?;
    Ok(format!(
        "3 terminal paths, tie to earliest, {} ledger lines replay identically, 0 network calls",
        entries.len()
    ))
}

// ---------------------------------------------------------------- proposer

fn raw_candidate() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => phrase(1..=6),
        1 => (prop::sample::select(&["no", "without", "not", "No"][..]), phrase(1..=3)).prop_map(|(n, p)| format!("{n} {p}")),
        1 => phrase(7..=10),
        1 => phrase(1..=3).prop_map(|p| format!("\"{p}\"")),
        1 => phrase(1..=3).prop_map(|p| format!("{p}.")),
        1 => phrase(1..=3).prop_map(|p| p.to_uppercase()),
        1 => Just("   ".to_string()),
        1 => Just("two dogs on a beach".to_string()),
    ]
}

fn check_sanitization() -> Result<String, String> {
    let strategy = (
        prop::collection::vec(raw_candidate(), 0..=12),
        prop::collection::vec(raw_candidate(), 0..=5),
        1u32..=8,
        prop::option::of(phrase(2..=6)),
    );
    runner(SANITIZE_CASES)
        .run(&strategy, |(raw, fallbacks, k, reason)| {
            let req = ProposerRequest {
                positive_prompt: "two dogs on a beach".into(),
                reason: reason.clone(),
                caption: reason.map(|_| "The image shows two dogs.".to_string()),
                fallbacks,
                k,
            };
            match sanitize(&req, &raw) {
                Ok(out) => {
                    prop_assert!(
                        !out.is_empty() && out.len() <= k as usize,
                        "{} outputs for k = {k}",
                        out.len()
                    );
                    let texts: HashSet<&str> = out.iter().map(|c| c.text.as_str()).collect();
                    prop_assert_eq!(texts.len(), out.len(), "duplicates in {:?}", out);
                    for c in &out {
                        prop_assert_eq!(validate_candidate(&c.text), Ok(c.text.clone()));
                    }
                }
                Err(AgentError::NoCandidates) => {}
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    for neg in ["no", "without", "not"] {
        let text = format!("{neg} red car");
        let v = validate_candidate(&text).err().unwrap_or_default();
        ensure(v.contains(&Violation::NegationWord), || {
            format!("`{text}` accepted")
        })?;
        let req = ProposerRequest {
            positive_prompt: "a blue car".into(),
            reason: None,
            caption: None,
            fallbacks: Vec::new(),
            k: 3,
        };
        ensure(
            matches!(
                sanitize(&req, std::slice::from_ref(&text)),
                Err(AgentError::NoCandidates)
            ),
            || format!("`{text}` survived sanitization"),
        )?;
    }
    let six = "one two three four five six";
    ensure(validate_candidate(six).is_ok(), || {
        "six words rejected".into()
    })?;
    ensure(
        validate_candidate(&format!("{six} seven")) == Err(vec![Violation::TooLong]),
        || "seven words accepted".into(),
    )?;
    ensure(
        validate_candidate("") == Err(vec![Violation::Empty]),
        || "empty accepted".into(),
    )?;
    Ok(format!(
        "{SANITIZE_CASES} property cases; negation words, 7 words and empty rejected"
    ))
}

// ------------------------------------------------------------------ metrics

fn check_metrics() -> Result<String, String> {
    let f = |a, b, c| imagine_final_score(&ImagineScores::new(a, b, c)).map_err(|e| e.to_string());
    for (input, want) in [
        ((10.0, 10.0, 10.0), 10.0),
        ((5.0, 7.0, 8.0), 5.6),
        ((0.0, 10.0, 10.0), 2.0),
    ] {
        let got = f(input.0, input.1, input.2)?;
        ensure(got == want, || {
            format!("imagine {input:?} = {got}, want {want}")
        })?;
    }
    let records: Vec<ScoreRecord> = GENEVAL_TASKS
        .iter()
        .zip(GENEVAL_NPC_ROW)
        .flat_map(|(task, acc)| {
            let correct = (acc * GENEVAL_PROMPTS_PER_TASK as f64).round() as usize;
            (0..GENEVAL_PROMPTS_PER_TASK).map(move |i| ScoreRecord {
                prompt_id: format!("{task}-{i}"),
                task_type: Some(task.to_string()),
                correct: Some(i < correct),
                imagine_scores: None,
                evaluator_id: None,
            })
        })
        .collect();
    let r = geneval_accuracy(&records).map_err(|e| e.to_string())?;
    for (t, want) in r.per_task.iter().zip(GENEVAL_NPC_ROW) {
        ensure(t.accuracy.accuracy == Some(want), || {
            format!("{}: {:?}", t.task, t.accuracy.accuracy)
        })?;
    }
    let overall = r.overall.accuracy.unwrap_or(f64::NAN);
    ensure(
        (overall - GENEVAL_NPC_OVERALL).abs() <= GENEVAL_ROUNDING_TOL,
        || format!("overall {overall}"),
    )?;
    Ok(format!(
        "imagine table exact; GenEval row overall {overall:.4}"
    ))
}

// ------------------------------------------------------------------ NPCATTN1

fn random_dump(rng: &mut ChaCha8Rng) -> AttentionDump {
    if rng.random_bool(0.5) {
        let (d, salient) = random_prob_dump(rng);
        return d
            .with_salient_indices(salient)
            .unwrap()
            .with_producer("acceptance");
    }
    let dims = Dims::new(
        rng.random_range(1..=3),
        1,
        rng.random_range(1..=2),
        rng.random_range(1..=4),
        rng.random_range(1..=9),
    );
    let values = (0..dims.numel())
        .map(|_| rng.random_range(-20.0f32..20.0))
        .collect();
    AttentionDump::new(dims, DumpKind::Logits, values)
        .unwrap()
        .with_head_dim(64.0)
}

fn encode(d: &AttentionDump) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dump(d, &mut buf).unwrap();
    buf
}

fn check_npcattn_roundtrip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa77);
    let mut bytes_checked = 0;
    for i in 0..50 {
        let d = random_dump(&mut rng);
        let first = encode(&d);
        let back = read_dump(first.as_slice()).map_err(|e| format!("dump {i}: {e}"))?;
        ensure(back == d, || format!("dump {i} changed on read"))?;
        let second = encode(&back);
        ensure(first == second, || format!("dump {i} bytes differ"))?;
        bytes_checked += first.len();
    }
    let good = encode(&uniform_dump(Dims::new(2, 1, 1, 2, 5)));
    let mut bad_magic = good.clone();
    bad_magic[..8].copy_from_slice(b"NPCATTN2");
    let magic_err = read_dump(bad_magic.as_slice()).err();
    ensure(
        matches!(magic_err, Some(DumpFormatError::BadMagic { .. })),
        || format!("bad magic gave {magic_err:?}"),
    )?;
    let truncated = read_dump(&good[..good.len() - 3]).err();
    ensure(
        matches!(
            truncated,
            Some(DumpFormatError::Truncated {
                section: "payload",
                ..
            })
        ),
        || format!("truncated payload gave {truncated:?}"),
    )?;
    Ok(format!("50 dumps ({bytes_checked} bytes) round-trip byte-identically; BadMagic and Truncated(payload) distinct"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        (
            "salient-attention share matches nested-loop oracle",
            check_rho_oracle,
        ),
        (
            "attention-share deltas +39.13% / +8.70%",
            check_share_arithmetic,
        ),
        ("guidance kernel identities and step gate", check_cfg_kernel),
        (
            "salient score scale invariance, zero self-score, oracle",
            check_salient_score,
        ),
        (
            "salient ordering beats random in simulation",
            check_ordering_simulation,
        ),
        ("end-to-end mock loop and ledger replay", check_end_to_end),
        (
            "proposer sanitization properties and rejections",
            check_sanitization,
        ),
        ("metric formulas", check_metrics),
        (
            "NPCATTN1 round trip and corruption errors",
            check_npcattn_roundtrip,
        ),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
