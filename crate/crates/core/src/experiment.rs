//! Batch evaluation: loads an experiment config, diagnoses every labelled
//! incident of the corpus, and emits a deterministic report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::Prompts;
use crate::corpus::{read_jsonl, HashingEmbedder, IncidentRecord, IncidentStore};
use crate::engine::{DiagnosisSession, Engine, EngineConfig, NoFeedback, NullObserver, Resources};
use crate::evalkit::{
    attribute, overhead, pipeline_breakdown, score, ttm_stats, Attribution, BreakdownRow, EvalError, LabeledPrediction,
    Level, MetricReport, OverheadReport, TruthFate, TtmStats,
};
use crate::gateway::{ChatBackend, LlmSession, PricingConfig, RecordingBackend, ReplayBackend, ReplayEntry, DEFAULT_MODEL};
use crate::kb::{bundled_library, load_library, KnowledgeBase};
use crate::sim::SimulatedExpert;
use crate::taxonomy::{Taxonomy, TaxonomyPath};
use crate::verify::{CommandTable, Executor, Scenario, ScriptRegistry, SimulatedEnvironment, Allowlist};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn config_err(what: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(what.to_string())
}

/// Where model answers come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LlmSpec {
    /// A recorded replay file, matched by request digest.
    Replay { path: PathBuf },
    /// The rule-based expert driven by each incident's scenario faults.
    Simulated,
}

fn default_model() -> String {
    DEFAULT_MODEL.to_string()
}

fn default_repetitions() -> usize {
    1
}

/// Paths are relative to the config file. Absent optional paths select the
/// bundled assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub corpus: PathBuf,
    /// JSON object mapping incident ids to scenarios.
    pub scenarios: PathBuf,
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub scripts: Option<PathBuf>,
    #[serde(default)]
    pub command_table: Option<PathBuf>,
    #[serde(default)]
    pub kb: Option<PathBuf>,
    #[serde(default)]
    pub library: Option<PathBuf>,
    #[serde(default)]
    pub pricing: Option<PathBuf>,
    pub llm: LlmSpec,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub level: Level,
    /// Share of labelled records whose label is replaced by a leaf from a
    /// different main category.
    #[serde(default)]
    pub corrupt_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ExperimentError> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(config_err)?;
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut cfg.corpus);
        abs(&mut cfg.scenarios);
        for p in [&mut cfg.taxonomy, &mut cfg.scripts, &mut cfg.command_table, &mut cfg.kb, &mut cfg.library, &mut cfg.pricing]
            .into_iter()
            .flatten()
        {
            abs(p);
        }
        if let LlmSpec::Replay { path } = &mut cfg.llm {
            abs(path);
        }
        if !(0.0..=1.0).contains(&cfg.corrupt_fraction) {
            return Err(config_err("corrupt_fraction must lie in [0, 1]"));
        }
        if cfg.repetitions == 0 {
            return Err(config_err("repetitions must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        ExperimentConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub incident_id: String,
    pub original: TaxonomyPath,
    pub corrupted: TaxonomyPath,
}

/// Replaces the label of `round(fraction * n)` labelled records, chosen by
/// `seed`, with a random leaf of another main category.
pub fn corrupt_labels(records: &mut [IncidentRecord], taxonomy: &Taxonomy, fraction: f64, seed: u64) -> Vec<Corruption> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labelled: Vec<usize> = (0..records.len()).filter(|&i| records[i].root_cause.is_some()).collect();
    let n = (fraction * labelled.len() as f64).round() as usize;
    labelled.shuffle(&mut rng);
    let mut chosen = labelled[..n].to_vec();
    chosen.sort_unstable();
    let leaves = taxonomy.leaves();
    let mut out = Vec::new();
    for i in chosen {
        let original = records[i].root_cause.clone().expect("labelled");
        let others: Vec<&TaxonomyPath> = leaves.iter().filter(|l| l.main_category() != original.main_category()).collect();
        if others.is_empty() {
            continue;
        }
        let corrupted = others[rng.random_range(0..others.len())].clone();
        records[i].root_cause = Some(corrupted.clone());
        out.push(Corruption { incident_id: records[i].id.clone(), original, corrupted });
    }
    out
}

/// Everything an experiment needs, loaded once.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub taxonomy: Taxonomy,
    pub registry: ScriptRegistry,
    pub table: CommandTable,
    /// Corpus records after corruption, oldest first.
    pub records: Vec<IncidentRecord>,
    pub corruptions: Vec<Corruption>,
    pub scenarios: BTreeMap<String, Scenario>,
    pub kb: KnowledgeBase,
    pub library: String,
    pub pricing: PricingConfig,
    pub embedder: HashingEmbedder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub name: String,
    pub seed: u64,
    pub repetitions: usize,
    pub incidents: usize,
    pub corruptions: Vec<Corruption>,
    pub metrics: MetricReport,
    pub leaf_metrics: MetricReport,
    pub breakdown: Vec<BreakdownRow>,
    pub overhead: OverheadReport,
    /// Historical time to mitigate over resolved corpus records.
    pub ttm: Option<TtmStats>,
    pub misses: Vec<Attribution>,
    pub unexplained_misses: usize,
    pub degradations: usize,
    pub predictions: Vec<LabeledPrediction>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub struct EvaluationRun {
    pub report: EvaluationReport,
    /// Sessions of the last repetition, in corpus order.
    pub sessions: Vec<DiagnosisSession>,
}

fn read_scenarios(path: &Path) -> Result<BTreeMap<String, Scenario>, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

impl Experiment {
    pub fn load(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())));
        let taxonomy = match &config.taxonomy {
            Some(p) => Taxonomy::load(&read(p)?).map_err(config_err)?,
            None => Taxonomy::bundled(),
        };
        let registry = match &config.scripts {
            Some(p) => ScriptRegistry::load(p).map_err(config_err)?,
            None => ScriptRegistry::bundled(),
        };
        let table = match &config.command_table {
            Some(p) => CommandTable::load(p).map_err(config_err)?,
            None => CommandTable::bundled(),
        };
        let embedder = HashingEmbedder::default();
        let kb = match &config.kb {
            Some(p) => KnowledgeBase::load(p, &embedder).map_err(config_err)?,
            None => KnowledgeBase::bundled(&embedder),
        };
        let library = match &config.library {
            Some(p) => load_library(p).map_err(config_err)?,
            None => bundled_library().to_string(),
        };
        let pricing = match &config.pricing {
            Some(p) => PricingConfig::load(p).map_err(config_err)?,
            None => PricingConfig::default(),
        };
        pricing.rates(&config.model).map_err(config_err)?;
        let mut records = read_jsonl(&config.corpus).map_err(config_err)?;
        records.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        let corruptions = corrupt_labels(&mut records, &taxonomy, config.corrupt_fraction, config.seed);
        let scenarios = read_scenarios(&config.scenarios)?;
        Ok(Experiment { config, taxonomy, registry, table, records, corruptions, scenarios, kb, library, pricing, embedder })
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        Experiment::load(ExperimentConfig::load(path)?)
    }

    /// Injected faults per incident, as the simulated expert sees them.
    pub fn faults(&self) -> BTreeMap<String, Vec<String>> {
        self.scenarios.iter().map(|(id, s)| (id.clone(), s.faults.clone())).collect()
    }

    pub fn backend(&self, taxonomy: &Taxonomy) -> Result<Arc<dyn ChatBackend>, ExperimentError> {
        Ok(match &self.config.llm {
            LlmSpec::Replay { path } => Arc::new(ReplayBackend::from_file(path).map_err(config_err)?),
            LlmSpec::Simulated => SimulatedExpert::new(self.faults(), taxonomy, &self.registry, &self.table).shared(),
        })
    }

    fn store(&self) -> IncidentStore {
        let mut store = IncidentStore::new();
        for r in &self.records {
            store.ingest(r.clone(), &self.embedder).expect("corpus records validated on read");
        }
        store
    }

    /// Diagnoses every labelled record against `taxonomy` with `backend`.
    pub fn sessions(
        &self,
        taxonomy: &Taxonomy,
        backend: Arc<dyn ChatBackend>,
        repetition: usize,
    ) -> Vec<(DiagnosisSession, TaxonomyPath)> {
        let store = self.store();
        let prompts = Prompts::bundled();
        let resources = Resources {
            taxonomy,
            registry: &self.registry,
            corpus: &store,
            embedder: &self.embedder,
            kb: &self.kb,
            library: &self.library,
            prompts: &prompts,
        };
        let engine = Engine::new(resources, self.config.engine.clone());
        let mut out = Vec::new();
        for r in &self.records {
            let Some(truth) = r.root_cause.clone() else { continue };
            let mut incident = r.clone();
            incident.root_cause = None;
            incident.oce_discussion = None;
            incident.resolved_at = None;
            let scenario = self.scenarios.get(&r.id).cloned().unwrap_or_default();
            let env = SimulatedEnvironment::new(self.table.clone(), scenario);
            let mut exec = Executor::new(Box::new(env), Allowlist::default());
            let llm = LlmSession::new(backend.clone(), &self.config.model).with_budget(self.config.engine.llm_budget);
            let id = format!("{}-r{}-{}", self.config.name, repetition, r.id);
            let session = engine.diagnose(&id, &incident, &mut exec, &llm, &mut NoFeedback, &mut NullObserver);
            out.push((session, truth));
        }
        out
    }

    pub fn run(&self) -> Result<EvaluationRun, ExperimentError> {
        let backend = self.backend(&self.taxonomy)?;
        let mut all = Vec::new();
        let mut runs = Vec::new();
        let mut last = Vec::new();
        let mut misses = Vec::new();
        let mut degradations = 0;
        for rep in 0..self.config.repetitions {
            let sessions = self.sessions(&self.taxonomy, backend.clone(), rep);
            runs.push(sessions.iter().map(|(s, _)| s.outcome.resolving_pipeline).collect::<Vec<_>>());
            for (s, truth) in &sessions {
                let p = LabeledPrediction::from_session(s, truth.clone());
                degradations += s.degradations.len();
                if rep == 0 && !p.is_correct(self.config.level) {
                    misses.push(attribute(s, truth, &self.taxonomy));
                }
                all.push(p);
            }
            last = sessions.into_iter().map(|(s, _)| s).collect();
        }
        let rates = self.pricing.rates(&self.config.model).map_err(config_err)?;
        let ttm: Vec<f64> = self.records.iter().filter_map(IncidentRecord::ttm_hours).collect();
        let report = EvaluationReport {
            name: self.config.name.clone(),
            seed: self.config.seed,
            repetitions: self.config.repetitions,
            incidents: all.len() / self.config.repetitions,
            corruptions: self.corruptions.clone(),
            metrics: score(&all, self.config.level)?,
            leaf_metrics: score(&all, Level::Leaf)?,
            breakdown: pipeline_breakdown(&runs),
            overhead: overhead(&all, &self.config.model, rates),
            ttm: if ttm.is_empty() { None } else { Some(ttm_stats(&ttm)?) },
            unexplained_misses: misses.iter().filter(|m| m.truth_fate == TruthFate::Unexplained).count(),
            misses,
            degradations,
            predictions: all,
        };
        Ok(EvaluationRun { report, sessions: last })
    }

    /// Runs once with the simulated expert behind a recorder and returns the
    /// digest-keyed exchanges, for use as a replay file.
    pub fn record(&self, taxonomies: &[&Taxonomy]) -> Vec<ReplayEntry> {
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for t in taxonomies {
            let expert = SimulatedExpert::new(self.faults(), t, &self.registry, &self.table);
            let recorder = Arc::new(RecordingBackend::new(expert));
            self.sessions(t, recorder.clone(), 0);
            entries.extend(recorder.entries().into_iter().filter(|e| seen.insert(e.digest.clone())));
        }
        entries
    }
}

// ---------------------------------------------------------------------------
// Unseen-label ablation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub removed: TaxonomyPath,
    /// Incidents whose truth is the removed label.
    pub incidents: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    /// Sessions predicting the removed label after removal; zero by
    /// construction.
    pub predictions_of_removed: usize,
}

/// Taxonomy without `label`.
pub fn without(taxonomy: &Taxonomy, label: &TaxonomyPath) -> Result<Taxonomy, EvalError> {
    let mut pruned = taxonomy.clone();
    pruned.remove(label).map_err(|_| EvalError::UnknownLabel(label.to_string()))?;
    Ok(pruned)
}

/// Accuracy, at the experiment's level, of incidents labelled with each
/// removed label, against the full and the pruned taxonomy.
pub fn ablate_unseen(experiment: &Experiment, labels: &[TaxonomyPath]) -> Result<Vec<AblationRow>, ExperimentError> {
    for l in labels {
        if !experiment.taxonomy.contains(l) {
            return Err(EvalError::UnknownLabel(l.to_string()).into());
        }
    }
    let level = experiment.config.level;
    let accuracy = |sessions: &[(DiagnosisSession, TaxonomyPath)], label: &TaxonomyPath| -> (usize, f64) {
        let hits: Vec<bool> = sessions
            .iter()
            .filter(|(_, t)| t == label)
            .map(|(s, t)| LabeledPrediction::from_session(s, t.clone()).is_correct(level))
            .collect();
        let n = hits.len();
        (n, if n == 0 { 0.0 } else { hits.iter().filter(|h| **h).count() as f64 / n as f64 })
    };
    let full = experiment.sessions(&experiment.taxonomy, experiment.backend(&experiment.taxonomy)?, 0);
    let mut rows = Vec::new();
    for label in labels {
        let pruned = without(&experiment.taxonomy, label)?;
        let after = experiment.sessions(&pruned, experiment.backend(&pruned)?, 0);
        let (incidents, accuracy_before) = accuracy(&full, label);
        let (_, accuracy_after) = accuracy(&after, label);
        let predictions_of_removed = after.iter().filter(|(s, _)| s.outcome.root_causes().contains(label)).count();
        rows.push(AblationRow { removed: label.clone(), incidents, accuracy_before, accuracy_after, predictions_of_removed });
    }
    Ok(rows)
}
