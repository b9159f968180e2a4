//! Subcommand bodies.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use infradiag::agents::{Agents, Prompts};
use infradiag::builder::{build_taxonomy, extract_instructions, read_tsgs};
use infradiag::corpus::{read_jsonl, HashingEmbedder, IncidentRecord, IncidentStore};
use infradiag::engine::{
    write_trace, DiagnosisSession, Engine, EngineConfig, FeedbackProvider, NoFeedback, ScriptedFeedback, SessionObserver,
};
use infradiag::evalkit::{breakdown_table, metrics_table, predictions_csv};
use infradiag::experiment::{ablate_unseen, without, Experiment, ExperimentConfig};
use infradiag::gateway::{write_replay, ChatBackend, LlmSession};
use infradiag::taxonomy::{Taxonomy, TaxonomyPath};
use infradiag::verify::{Allowlist, Environment, Executor, ScriptRegistry};

use crate::specs::{FeedbackChoice, Published, PromptFeedback, ResourceArgs, STORE_RECORDS, STORE_VECTORS};
use crate::{BuildArgs, Cli, Command, DiagnoseArgs, EvaluateArgs, ExtractArgs, GenerateArgs, IngestArgs};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::BuildTaxonomy(a) => build(&a),
        Command::ExtractChecks(a) => extract(&a),
        Command::Diagnose(a) => diagnose(&a),
        Command::Evaluate(a) => evaluate(&a, cli.seed),
        Command::GenerateSuite(a) => generate(&a, cli.seed),
        Command::Serve(a) => crate::server::serve_blocking(&a),
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_incident(path: &Path) -> anyhow::Result<IncidentRecord> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let r: IncidentRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    r.validate().with_context(|| format!("invalid incident in {}", path.display()))?;
    Ok(r)
}

fn labels(raw: &[String]) -> anyhow::Result<Vec<TaxonomyPath>> {
    raw.iter().map(|l| l.parse().map_err(|e| anyhow::anyhow!("label `{l}`: {e}"))).collect()
}

fn ingest(a: &IngestArgs) -> anyhow::Result<()> {
    let embedder = HashingEmbedder::default();
    let mut store = IncidentStore::new();
    for r in read_jsonl(&a.input).with_context(|| format!("reading {}", a.input.display()))? {
        store.ingest(r, &embedder)?;
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    store.save(&a.out.join(STORE_RECORDS), &a.out.join(STORE_VECTORS))?;
    println!("ingested {} records into {}", store.len(), a.out.display());
    Ok(())
}

fn offline_session(a: &crate::specs::LlmChoice, budget: usize) -> anyhow::Result<LlmSession> {
    // Offline agents need no fault knowledge; the expert reads labels from
    // the discussions.
    let published = Published::load(&ResourceArgs::default())?;
    let (backend, model) = a.backend(BTreeMap::new(), &published)?;
    Ok(LlmSession::new(backend, model).with_budget(budget))
}

fn build(a: &BuildArgs) -> anyhow::Result<()> {
    let incidents = read_jsonl(&a.incidents).with_context(|| format!("reading {}", a.incidents.display()))?;
    let tsgs = match &a.tsgs {
        Some(p) => read_tsgs(p).map_err(anyhow::Error::msg)?,
        None => Vec::new(),
    };
    let mut taxonomy = match &a.taxonomy {
        Some(p) => Taxonomy::load(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => {
            let Some(first) = incidents.iter().map(|r| r.created_at).min() else { bail!("{} has no incidents", a.incidents.display()) };
            Taxonomy::bootstrap(first)
        }
    };
    let llm = offline_session(&a.llm, a.budget)?;
    let prompts = Prompts::bundled();
    let agents = Agents::new(&llm, &prompts);
    let report = build_taxonomy(&mut taxonomy, &incidents, &tsgs, &agents)?;
    write(&a.out, &taxonomy.save())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!("added {} labels, refined {}, skipped {}", report.added.len(), report.refined.len(), report.skipped.len());
    Ok(())
}

fn extract(a: &ExtractArgs) -> anyhow::Result<()> {
    let records = read_jsonl(&a.incidents).with_context(|| format!("reading {}", a.incidents.display()))?;
    let llm = offline_session(&a.llm, a.budget)?;
    let prompts = Prompts::bundled();
    let agents = Agents::new(&llm, &prompts);
    let report = extract_instructions(&records, &agents, &Allowlist::default())?;
    for (label, reason) in &report.skipped {
        eprintln!("skipped {label}: {reason}");
    }
    let count = report.drafts.len();
    let registry = ScriptRegistry::new(report.drafts)?;
    write(&a.out, &registry.to_json())?;
    println!("wrote {count} draft scripts to {}", a.out.display());
    Ok(())
}

/// Runs one session; shared by `diagnose` and the service.
#[allow(clippy::too_many_arguments)]
pub fn run_session(
    published: &Published,
    config: &EngineConfig,
    session_id: &str,
    incident: &IncidentRecord,
    env: Box<dyn Environment>,
    backend: Arc<dyn ChatBackend>,
    model: &str,
    feedback: &mut dyn FeedbackProvider,
    observer: &mut dyn SessionObserver,
) -> DiagnosisSession {
    let engine = Engine::new(published.resources(), config.clone());
    let llm = LlmSession::new(backend, model).with_budget(config.llm_budget);
    let mut exec = Executor::new(env, Allowlist::default());
    engine.diagnose(session_id, incident, &mut exec, &llm, feedback, observer)
}

fn diagnose(a: &DiagnoseArgs) -> anyhow::Result<()> {
    let incident = read_incident(&a.incident)?;
    let published = Published::load(&a.resources)?;
    let scenario = a.env.scenario()?;
    let faults = BTreeMap::from([(incident.id.clone(), scenario.faults.clone())]);
    let (backend, model) = a.llm.backend(faults, &published)?;
    let env = a.env.environment(&published.table)?;
    let mut feedback: Box<dyn FeedbackProvider> = match &a.feedback {
        FeedbackChoice::None => Box::new(NoFeedback),
        FeedbackChoice::Scripted(p) => Box::new(ScriptedFeedback::load(p).with_context(|| format!("loading {}", p.display()))?),
        FeedbackChoice::Interactive => Box::new(PromptFeedback::new(BufReader::new(io::stdin()), io::stderr(), 3)),
    };
    let session = run_session(
        &published,
        &a.engine.config(),
        &incident.id,
        &incident,
        env,
        backend,
        &model,
        feedback.as_mut(),
        &mut infradiag::engine::NullObserver,
    );
    write_trace(&a.trace, &session.trace).with_context(|| format!("writing {}", a.trace.display()))?;
    if let (Some(path), Some(ticket)) = (&a.ticket, session.outcome.ticket()) {
        write(path, &(serde_json::to_string_pretty(ticket)? + "\n"))?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&session.outcome)?);
    } else {
        println!("{}", session.report.trim_end());
    }
    eprintln!(
        "{}: {} after {} model calls; trace in {}",
        incident.id,
        session.outcome.label(),
        session.usage.len(),
        a.trace.display()
    );
    Ok(())
}

fn experiment(path: &Path, seed: Option<u64>) -> anyhow::Result<Experiment> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(Experiment::load(cfg)?)
}

fn evaluate(a: &EvaluateArgs, seed: Option<u64>) -> anyhow::Result<()> {
    let exp = experiment(&a.config, seed)?;
    let run = exp.run()?;
    let report = &run.report;
    match &a.out {
        Some(p) => write(p, &report.to_json())?,
        None => print!("{}", report.to_json()),
    }
    if let Some(p) = &a.predictions {
        write(p, &predictions_csv(&report.predictions))?;
    }
    eprintln!("{}", metrics_table(&report.metrics));
    eprintln!("{}", breakdown_table(&report.breakdown));
    if !a.ablate.is_empty() {
        let rows = ablate_unseen(&exp, &labels(&a.ablate)?)?;
        match &a.ablation_out {
            Some(p) => write(p, &(serde_json::to_string_pretty(&rows)? + "\n"))?,
            None => {
                for r in &rows {
                    eprintln!(
                        "{}: {} incidents, accuracy {:.3} -> {:.3}, {} predictions of the removed label",
                        r.removed, r.incidents, r.accuracy_before, r.accuracy_after, r.predictions_of_removed
                    );
                }
            }
        }
    }
    Ok(())
}

fn generate(a: &GenerateArgs, seed: Option<u64>) -> anyhow::Result<()> {
    let exp = experiment(&a.config, seed)?;
    let pruned: Vec<Taxonomy> = labels(&a.ablate)?.iter().map(|l| without(&exp.taxonomy, l)).collect::<Result<_, _>>()?;
    let mut taxonomies = vec![&exp.taxonomy];
    taxonomies.extend(pruned.iter());
    let entries = exp.record(&taxonomies);
    write_replay(&a.out, &entries)?;
    println!("recorded {} replay entries to {}", entries.len(), a.out.display());
    Ok(())
}
