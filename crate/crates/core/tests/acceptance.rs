//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the output.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use chrono::{TimeZone, Utc};
use common::oracles::{retrieval_mismatch, score_mismatch};
use common::{random_case, reference_dfs, run_case};
use infradiag::agents::{Agents, Prompts};
use infradiag::builder::{build_taxonomy, read_tsgs};
use infradiag::corpus::{read_jsonl, HashingEmbedder, IncidentStore};
use infradiag::engine::{DiagnosisSession, Engine, EngineConfig, NoFeedback, NullObserver, Resources};
use infradiag::evalkit::{ttm_stats, TruthFate};
use infradiag::experiment::{ablate_unseen, Experiment};
use infradiag::gateway::{reported_cost, ChatBackend, LlmSession, ModelRates, ReplayBackend};
use infradiag::kb::{bundled_library, KnowledgeBase};
use infradiag::sim::SimulatedExpert;
use infradiag::taxonomy::Taxonomy;
use infradiag::verify::{CommandTable, Executor, Scenario, ScriptRegistry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn dfs_oracle() -> Outcome {
    let t = Instant::now();
    for seed in 0..500 {
        let case = random_case(seed, 40);
        let (entered, r) = reference_dfs(&case.taxonomy, &case.plan);
        let run = run_case(&case);
        ensure(run.entered == entered, || format!("seed {seed}: entered order differs"))?;
        ensure(run.r == r, || format!("seed {seed}: root causes {:?}, reference {:?}", run.r, r))?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("500 taxonomies agree with the reference walk in {secs:.1} s"))
}

fn memory_discipline() -> Outcome {
    let mut events = 0;
    for seed in 0..500 {
        let run = run_case(&random_case(seed, 40));
        ensure(run.violations.is_empty(), || format!("seed {seed}: {}", run.violations[0]))?;
        ensure(run.final_depth == 0, || format!("seed {seed}: final stack depth {}", run.final_depth))?;
        events += run.trace.len();
    }
    Ok(format!("0 violations over {events} events, every final stack empty"))
}

fn golden_session(example: &str) -> Result<(DiagnosisSession, f64), String> {
    let dir = data("golden").join(example);
    let taxonomy = Taxonomy::bundled();
    let registry = ScriptRegistry::bundled();
    let embedder = HashingEmbedder::default();
    let mut corpus = IncidentStore::new();
    for r in read_jsonl(&data("golden/corpus.jsonl")).map_err(|e| e.to_string())? {
        corpus.ingest(r, &embedder).map_err(|e| e.to_string())?;
    }
    let kb = KnowledgeBase::bundled(&embedder);
    let prompts = Prompts::bundled();
    let res = Resources {
        taxonomy: &taxonomy,
        registry: &registry,
        corpus: &corpus,
        embedder: &embedder,
        kb: &kb,
        library: bundled_library(),
        prompts: &prompts,
    };
    let incident = serde_json::from_str(&std::fs::read_to_string(dir.join("incident.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let backend: Arc<dyn ChatBackend> = Arc::new(ReplayBackend::from_file(&dir.join("replay.jsonl")).map_err(|e| e.to_string())?);
    let llm = LlmSession::new(backend, "gpt-4o").with_budget(64);
    let mut exec = Executor::simulated(Scenario::load(&dir.join("scenario.json")).map_err(|e| e.to_string())?);
    let t = Instant::now();
    let s = Engine::new(res, EngineConfig::default()).diagnose(example, &incident, &mut exec, &llm, &mut NoFeedback, &mut NullObserver);
    Ok((s, t.elapsed().as_secs_f64()))
}

fn golden_fixtures() -> Outcome {
    let mut lines = Vec::new();
    for (example, want) in [("example1", vec!["NCCL_Error", "NVLink_Failure"]), ("example2", vec!["ECC Error", "Page Retirement", "Xid 48"])] {
        let (s, secs) = golden_session(example)?;
        let mut got: Vec<String> = s.outcome.root_causes().iter().map(|p| p.label().to_string()).collect();
        got.sort();
        ensure(s.outcome.resolving_pipeline == Some(2), || format!("{example}: {}", s.outcome.label()))?;
        ensure(got == want, || format!("{example}: {got:?}"))?;
        ensure(secs < 5.0, || format!("{example}: {secs:.2} s"))?;
        lines.push(format!("{example} {{{}}} in {secs:.2} s", got.join(", ")));
    }
    Ok(lines.join("; "))
}

/// Half-up rounding to three decimals, written out for the check.
fn round3(x: f64) -> f64 {
    (x * 1000.0 + 0.5).floor() / 1000.0
}

fn cost_model() -> Outcome {
    let mid = ModelRates { input_usd_per_million: 2.50, output_usd_per_million: 10.00 };
    let high = ModelRates { input_usd_per_million: 15.00, output_usd_per_million: 60.00 };
    let rows: [(&str, ModelRates, f64, f64, f64); 5] = [
        ("AidAI", mid, 31801.2, 2224.9, 0.102),
        ("TGD", mid, 82070.0, 4735.5, 0.253),
        ("RCACopilot", mid, 817.1, 109.6, 0.003),
        ("DID-o1", high, 2877.6, 136.9, 0.051),
        ("CVD", mid, 8037.2, 160.5, 0.022),
    ];
    let mut shown = Vec::new();
    for (name, rates, input, output, want) in rows {
        let got = reported_cost(rates.price(input, output));
        let oracle = round3(input * rates.input_usd_per_million / 1e6 + output * rates.output_usd_per_million / 1e6);
        ensure((got - want).abs() <= 0.001 + 1e-12, || format!("{name}: {got} vs {want}"))?;
        ensure((got - oracle).abs() < 1e-12, || format!("{name}: {got} vs independent {oracle}"))?;
        shown.push(format!("{name} ${got:.3}"));
    }
    Ok(shown.join(", "))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c0e);
    for i in 0..1000 {
        let classes = rng.random_range(1..=8);
        let n = rng.random_range(1..=200);
        let samples: Vec<(usize, Option<usize>)> = (0..n)
            .map(|_| (rng.random_range(0..classes), rng.random_bool(0.85).then(|| rng.random_range(0..classes))))
            .collect();
        if let Some(m) = score_mismatch(classes, &samples) {
            return Err(format!("instance {i}: {m}"));
        }
    }
    let hours: Vec<f64> = (1..=10).map(f64::from).collect();
    let t = ttm_stats(&hours).map_err(|e| e.to_string())?;
    ensure(t.median == 5.5 && t.trimmed_mean == 5.5, || format!("ttm on 1..10: {t:?}"))?;
    Ok(format!("1000 instances match the confusion count, ttm median {} trimmed {}", t.median, t.trimmed_mean))
}

fn synthetic_suite() -> Outcome {
    let t = Instant::now();
    let clean = Experiment::from_file(&data("synthetic/clean.json")).map_err(|e| e.to_string())?.run().map_err(|e| e.to_string())?;
    let r = &clean.report;
    ensure(r.incidents == 60, || format!("{} incidents", r.incidents))?;
    ensure(r.metrics.micro_f1 == 1.0, || format!("clean micro F1 {}", r.metrics.micro_f1))?;
    let pct: Vec<f64> = r.breakdown.iter().map(|b| b.cumulative_pct).collect();
    ensure(pct.windows(2).all(|w| w[0] <= w[1]), || format!("breakdown {pct:?}"))?;

    let exp = Experiment::from_file(&data("synthetic/corrupted.json")).map_err(|e| e.to_string())?;
    let level = exp.config.level;
    let bad = exp.run().map_err(|e| e.to_string())?;
    let c = &bad.report;
    ensure(!c.corruptions.is_empty(), || "no labels were corrupted".into())?;
    ensure(c.metrics.micro_f1 < r.metrics.micro_f1, || format!("corrupted micro F1 {}", c.metrics.micro_f1))?;
    let wrong = c.predictions.iter().filter(|p| !p.is_correct(level)).count();
    ensure(c.misses.len() == wrong, || format!("{} misses attributed, {wrong} wrong predictions", c.misses.len()))?;
    ensure(c.unexplained_misses == 0, || format!("{} unexplained misses", c.unexplained_misses))?;
    let untraced = c.misses.iter().filter(|m| m.truth_fate != TruthFate::NotInTaxonomy && m.event_seq.is_none()).count();
    ensure(untraced == 0, || format!("{untraced} misses without a trace event"))?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 180.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "clean micro F1 {:.3}, breakdown {:?}; corrupted micro F1 {:.3} with {} misses all attributed; {secs:.1} s",
        r.metrics.micro_f1, pct, c.metrics.micro_f1, c.misses.len()
    ))
}

fn ablation() -> Outcome {
    let exp = Experiment::from_file(&data("ablation/ablation.json")).map_err(|e| e.to_string())?;
    let labels = ["GPU.MEMORY.infoROM_Corruption".parse().unwrap(), "System Software.CUDA.Host_VM_Version_Mismatch".parse().unwrap()];
    let rows = ablate_unseen(&exp, &labels).map_err(|e| e.to_string())?;
    for r in &rows {
        ensure(r.predictions_of_removed == 0, || format!("{}: {} predictions", r.removed, r.predictions_of_removed))?;
    }
    ensure(rows[0].accuracy_after > 0.0, || format!("recoverable fixture accuracy {}", rows[0].accuracy_after))?;
    ensure(rows[1].accuracy_after == 0.0, || format!("no-alternative fixture accuracy {}", rows[1].accuracy_after))?;
    Ok(format!(
        "recoverable {:.2} -> {:.2}, no alternative {:.2} -> {:.2}, 0 predictions of removed leaves",
        rows[0].accuracy_before, rows[0].accuracy_after, rows[1].accuracy_before, rows[1].accuracy_after
    ))
}

fn builder_idempotence() -> Outcome {
    let incidents = read_jsonl(&data("synthetic/incidents.jsonl")).map_err(|e| e.to_string())?;
    let tsgs = read_tsgs(&data("builder/tsgs.json"))?;
    let expert = SimulatedExpert::new(BTreeMap::new(), &Taxonomy::bundled(), &ScriptRegistry::bundled(), &CommandTable::bundled());
    let session = LlmSession::new(expert.shared(), "gpt-4o").with_budget(100_000);
    let prompts = Prompts::bundled();
    let agents = Agents::new(&session, &prompts);
    let mut t = Taxonomy::bootstrap(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap());
    let first = build_taxonomy(&mut t, &incidents, &tsgs, &agents).map_err(|e| e.to_string())?;
    let second = build_taxonomy(&mut t, &incidents, &tsgs, &agents).map_err(|e| e.to_string())?;
    ensure(!first.added.is_empty(), || "first build added nothing".into())?;
    ensure(second.added.is_empty(), || format!("second build added {:?}", second.added))?;
    Ok(format!("first run added {}, second run added 0", first.added.len()))
}

fn retrieval_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let mut records = 0;
    for i in 0..1000 {
        let (seed, n, k) = (rng.random::<u64>(), rng.random_range(0..=1000), rng.random_range(1..=10));
        records += n;
        if let Some(m) = retrieval_mismatch(seed, n, k) {
            return Err(format!("corpus {i} ({n} records, k={k}): {m}"));
        }
    }
    Ok(format!("1000 corpora ({records} records) match the exhaustive scan"))
}

fn replay_determinism() -> Outcome {
    let path = data("synthetic/corrupted.json");
    let once = || -> Result<String, String> {
        Ok(Experiment::from_file(&path).map_err(|e| e.to_string())?.run().map_err(|e| e.to_string())?.report.to_json())
    };
    let (a, b) = (once()?, once()?);
    ensure(a == b, || "report JSON differs between runs".into())?;
    Ok(format!("two runs give the same {} bytes", a.len()))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("search matches the reference walk", dfs_oracle),
        ("memory discipline", memory_discipline),
        ("golden fixtures", golden_fixtures),
        ("cost model", cost_model),
        ("metric oracle", metric_oracle),
        ("synthetic suite", synthetic_suite),
        ("unseen-label ablation", ablation),
        ("builder idempotence", builder_idempotence),
        ("retrieval equals exhaustive scan", retrieval_equivalence),
        ("replay determinism", replay_determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
