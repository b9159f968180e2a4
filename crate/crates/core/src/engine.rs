//! Online diagnosis: retrieval of similar incidents, the recursive taxonomy
//! search, knowledge-base exploration with user feedback, and escalation.
//!
//! [`Engine::diagnose`] runs one incident to completion and returns the
//! whole [`DiagnosisSession`]. Every step is appended to the session trace
//! as a [`TraceEvent`]; a [`SessionObserver`] sees each event together with
//! the agent memory at that moment.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write as _};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::agents::{
    AgentConfig, AgentMemory, Agents, ConcludeInput, Decision, EvidenceEntry, ExploreInput, Prompts,
};
use crate::corpus::{EmbeddingProvider, IncidentRecord, IncidentStore};
use crate::gateway::{AgentRole, Degradation, GatewayError, LedgerEntry, LlmSession, Stage, TokenUsage};
use crate::kb::KnowledgeBase;
use crate::taxonomy::{Taxonomy, TaxonomyPath};
use crate::util::short_digest;
use crate::verify::{Executor, NodeStatus, Outcome, ScriptRegistry, TimeEntry};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    /// Retrieval, then taxonomy search, then exploration.
    #[default]
    Full,
    /// Taxonomy search only; failures escalate directly.
    TaxonomyOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: EngineMode,
    /// Records fetched before reranking.
    pub retrieval_pool: usize,
    /// Hypotheses taken from retrieval.
    pub retrieval_k: usize,
    /// Hits below this similarity are ignored.
    pub min_similarity: f64,
    pub rerank: bool,
    /// Skip the incident's own record during retrieval.
    pub exclude_self: bool,
    /// Stop the taxonomy search at the first confirmed leaf. Off by default;
    /// the search normally explores every surviving branch.
    pub early_exit: bool,
    pub kb_top_k: usize,
    pub llm_budget: usize,
    pub repair_retries: usize,
    pub summary_max_chars: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let agents = AgentConfig::default();
        EngineConfig {
            mode: EngineMode::Full,
            retrieval_pool: 5,
            retrieval_k: 2,
            min_similarity: 0.30,
            rerank: true,
            exclude_self: false,
            early_exit: false,
            kb_top_k: 3,
            llm_budget: crate::gateway::DEFAULT_CALL_BUDGET,
            repair_retries: agents.repair_retries,
            summary_max_chars: agents.summary_max_chars,
        }
    }
}

impl EngineConfig {
    fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            repair_retries: self.repair_retries,
            summary_max_chars: self.summary_max_chars,
            ..AgentConfig::default()
        }
    }
}

/// Read-only inputs shared by all sessions.
pub struct Resources<'a> {
    pub taxonomy: &'a Taxonomy,
    pub registry: &'a ScriptRegistry,
    pub corpus: &'a IncidentStore,
    pub embedder: &'a dyn EmbeddingProvider,
    pub kb: &'a KnowledgeBase,
    pub library: &'a str,
    pub prompts: &'a Prompts,
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub id: String,
    pub script_id: String,
    pub outcome: Outcome,
    pub exit_code: Option<i32>,
    pub digest: String,
    pub duration_secs: f64,
}

impl From<&EvidenceEntry> for EvidenceRef {
    fn from(e: &EvidenceEntry) -> Self {
        EvidenceRef {
            id: e.id.clone(),
            script_id: e.result.script_id.clone(),
            outcome: e.result.outcome,
            exit_code: e.result.exit_code,
            digest: e.digest.clone(),
            duration_secs: e.result.duration_secs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitView {
    pub id: String,
    pub similarity: f64,
    pub root_cause: Option<TaxonomyPath>,
    pub rerank_position: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackResponse {
    /// The user applied suggestion `index` (0-based) and it worked.
    Accept { index: usize },
    /// Free-text feedback; the next round regenerates suggestions.
    Feedback { text: String },
    Decline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SessionStarted { incident_id: String, mode: EngineMode },
    Summarized { text: String, passthrough: bool, degraded: bool },
    PipelineStarted { pipeline: u8 },
    RetrievalCompleted { hits: Vec<HitView>, accepted: Vec<String> },
    HypothesisProposed { pipeline: u8, path: TaxonomyPath, source: String, known: bool },
    NodeEntered { path: Option<TaxonomyPath>, depth: usize },
    HypothesesRanked { node: Option<TaxonomyPath>, ordered: Vec<TaxonomyPath>, pruned: Vec<TaxonomyPath>, note: Option<String> },
    BranchPruned { node: Option<TaxonomyPath>, path: TaxonomyPath },
    EarlyStop { node: Option<TaxonomyPath>, note: Option<String> },
    EvidenceCollected { pipeline: u8, path: TaxonomyPath, status: NodeStatus, evidence: Vec<EvidenceRef> },
    VerdictReached { pipeline: u8, path: TaxonomyPath, decision: Decision, rationale: String, cited: Vec<String>, note: Option<String> },
    Backtrack { path: TaxonomyPath, to: Option<TaxonomyPath> },
    BudgetExceeded { pipeline: u8, budget: usize },
    Degraded { role: AgentRole, stage: Stage, reason: String },
    PipelineFinished { pipeline: u8, resolved: bool, root_causes: Vec<TaxonomyPath> },
    KbRetrieved { snippets: Vec<(String, f64)> },
    SuggestionsOffered { round: usize, hypotheses: Vec<String>, suggestions: Vec<String> },
    FeedbackReceived { round: usize, response: FeedbackResponse },
    Concluded { status: String, resolving_pipeline: Option<u8>, root_causes: Vec<TaxonomyPath>, report: String },
    SessionFinished { status: String, llm_calls: usize, verification_secs: f64 },
}

mod ts_millis {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s).map(|t| t.with_timezone(&Utc)).map_err(serde::de::Error::custom)
    }
}

/// One trace line. `ts` is a logical clock: the incident's creation time
/// plus the simulated verification time spent so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: usize,
    #[serde(with = "ts_millis")]
    pub ts: DateTime<Utc>,
    pub event: Event,
}

impl TraceEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace events serialize")
    }
}

pub fn write_trace(path: &Path, trace: &[TraceEvent]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for e in trace {
        writeln!(f, "{}", e.to_json_line())?;
    }
    f.flush()
}

pub fn read_trace(path: &Path) -> std::io::Result<Vec<TraceEvent>> {
    let f = std::io::BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

/// Sees every event as it is appended.
pub trait SessionObserver {
    fn on_event(&mut self, event: &TraceEvent, memory: &AgentMemory);
}

impl<F: FnMut(&TraceEvent, &AgentMemory)> SessionObserver for F {
    fn on_event(&mut self, event: &TraceEvent, memory: &AgentMemory) {
        self(event, memory)
    }
}

pub struct NullObserver;

impl SessionObserver for NullObserver {
    fn on_event(&mut self, _: &TraceEvent, _: &AgentMemory) {}
}

// ---------------------------------------------------------------------------
// Feedback
// ---------------------------------------------------------------------------

/// Where exploration suggestions go and answers come from.
pub trait FeedbackProvider {
    fn max_rounds(&self) -> usize;
    fn next_feedback(&mut self, round: usize, suggestions: &[String]) -> FeedbackResponse;
}

/// Declines immediately.
pub struct NoFeedback;

impl FeedbackProvider for NoFeedback {
    fn max_rounds(&self) -> usize {
        1
    }
    fn next_feedback(&mut self, _: usize, _: &[String]) -> FeedbackResponse {
        FeedbackResponse::Decline
    }
}

/// Answers from a fixed list; declines once the list runs out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedFeedback {
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    pub responses: VecDeque<FeedbackResponse>,
}

fn default_rounds() -> usize {
    3
}

impl ScriptedFeedback {
    pub fn new(max_rounds: usize, responses: impl IntoIterator<Item = FeedbackResponse>) -> Self {
        ScriptedFeedback { max_rounds, responses: responses.into_iter().collect() }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

impl FeedbackProvider for ScriptedFeedback {
    fn max_rounds(&self) -> usize {
        self.max_rounds
    }
    fn next_feedback(&mut self, _: usize, _: &[String]) -> FeedbackResponse {
        self.responses.pop_front().unwrap_or(FeedbackResponse::Decline)
    }
}

// ---------------------------------------------------------------------------
// Outcome and ticket
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestedHypothesis {
    pub pipeline: u8,
    pub path: TaxonomyPath,
    pub decision: Decision,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub cited: Vec<String>,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraversalStats {
    pub nodes_entered: usize,
    pub pruned: usize,
    pub early_stops: usize,
    pub backtracks: usize,
    pub llm_calls: usize,
    pub verification_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionRound {
    pub round: usize,
    pub hypotheses: Vec<String>,
    pub suggestions: Vec<String>,
}

/// Handed to the support team when diagnosis fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ticket {
    pub incident_id: String,
    pub incident_digest: String,
    pub summary: String,
    pub status: String,
    pub tested_hypotheses: Vec<TestedHypothesis>,
    pub traversal: TraversalStats,
    pub suggestion_rounds: Vec<SuggestionRound>,
    pub feedback: Vec<String>,
    #[serde(with = "ts_millis")]
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OutcomeStatus {
    Resolved { root_causes: Vec<TaxonomyPath> },
    Advised { suggestions: Vec<String>, accepted: String },
    Escalated { ticket: Box<Ticket> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisOutcome {
    #[serde(flatten)]
    pub status: OutcomeStatus,
    pub resolving_pipeline: Option<u8>,
}

impl DiagnosisOutcome {
    pub fn label(&self) -> &'static str {
        match self.status {
            OutcomeStatus::Resolved { .. } => "resolved",
            OutcomeStatus::Advised { .. } => "advised",
            OutcomeStatus::Escalated { .. } => "escalated",
        }
    }

    pub fn root_causes(&self) -> &[TaxonomyPath] {
        match &self.status {
            OutcomeStatus::Resolved { root_causes } => root_causes,
            _ => &[],
        }
    }

    /// The prediction scored during evaluation: the first validated cause.
    pub fn prediction(&self) -> Option<&TaxonomyPath> {
        self.root_causes().first()
    }

    pub fn ticket(&self) -> Option<&Ticket> {
        match &self.status {
            OutcomeStatus::Escalated { ticket } => Some(ticket),
            _ => None,
        }
    }
}

/// Everything produced by one diagnosis.
#[derive(Debug, Clone)]
pub struct DiagnosisSession {
    pub session_id: String,
    pub incident: IncidentRecord,
    pub summary: String,
    pub memory: AgentMemory,
    pub trace: Vec<TraceEvent>,
    pub tested: Vec<TestedHypothesis>,
    pub outcome: DiagnosisOutcome,
    pub report: String,
    pub stats: TraversalStats,
    pub usage: Vec<LedgerEntry>,
    pub degradations: Vec<Degradation>,
    pub verification_time: Vec<TimeEntry>,
}

impl DiagnosisSession {
    pub fn usage_totals(&self) -> TokenUsage {
        self.usage.iter().fold(TokenUsage::default(), |acc, e| acc + e.usage)
    }

    pub fn verification_secs(&self) -> f64 {
        self.verification_time.iter().map(|e| e.duration_secs).sum()
    }

    pub fn trace_jsonl(&self) -> String {
        self.trace.iter().map(|e| e.to_json_line() + "\n").collect()
    }
}

pub fn incident_digest(incident: &IncidentRecord) -> String {
    short_digest(format!("{}\n{}", incident.id, incident.description))
}

/// Escalation ticket for a session that ended without a resolution.
pub fn create_ticket(
    incident: &IncidentRecord,
    summary: &str,
    tested: &[TestedHypothesis],
    stats: &TraversalStats,
    rounds: &[SuggestionRound],
    feedback: &[String],
    created_at: DateTime<Utc>,
) -> Ticket {
    Ticket {
        incident_id: incident.id.clone(),
        incident_digest: incident_digest(incident),
        summary: summary.to_string(),
        status: "UNRESOLVED".into(),
        tested_hypotheses: tested.to_vec(),
        traversal: stats.clone(),
        suggestion_rounds: rounds.to_vec(),
        feedback: feedback.to_vec(),
        created_at,
    }
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

pub struct Engine<'a> {
    pub resources: Resources<'a>,
    pub config: EngineConfig,
}

enum Halt {
    Budget,
    Gateway { role: AgentRole, reason: String },
    EarlyExit,
}

fn halt(role: AgentRole, e: GatewayError) -> Halt {
    match e {
        GatewayError::BudgetExceeded(_) => Halt::Budget,
        other => Halt::Gateway { role, reason: other.to_string() },
    }
}

enum P3 {
    Advised { suggestions: Vec<String>, accepted: String },
    Escalate,
}

struct Run<'e, 'a> {
    res: &'e Resources<'a>,
    cfg: &'e EngineConfig,
    agents: Agents<'e>,
    llm: &'e LlmSession,
    exec: &'e mut Executor,
    observer: &'e mut dyn SessionObserver,
    incident: &'e IncidentRecord,
    memory: AgentMemory,
    trace: Vec<TraceEvent>,
    tested: Vec<TestedHypothesis>,
    stats: TraversalStats,
    rounds: Vec<SuggestionRound>,
    feedback_texts: Vec<String>,
    exec_base: usize,
    seen_degradations: usize,
}

impl<'a> Engine<'a> {
    pub fn new(resources: Resources<'a>, config: EngineConfig) -> Self {
        Engine { resources, config }
    }

    pub fn diagnose(
        &self,
        session_id: &str,
        incident: &IncidentRecord,
        exec: &mut Executor,
        llm: &LlmSession,
        feedback: &mut dyn FeedbackProvider,
        observer: &mut dyn SessionObserver,
    ) -> DiagnosisSession {
        let mut agents = Agents::new(llm, self.resources.prompts);
        agents.config = self.config.agent_config();
        let run = Run {
            res: &self.resources,
            cfg: &self.config,
            agents,
            llm,
            exec_base: exec.time_ledger().len(),
            exec,
            observer,
            incident,
            memory: AgentMemory::new(incident),
            trace: Vec::new(),
            tested: Vec::new(),
            stats: TraversalStats::default(),
            rounds: Vec::new(),
            feedback_texts: Vec::new(),
            seen_degradations: llm.ledger.degradations().len(),
        };
        run.execute(session_id, feedback)
    }
}

impl Run<'_, '_> {
    fn elapsed_secs(&self) -> f64 {
        self.exec.time_ledger()[self.exec_base..].iter().map(|e| e.duration_secs).sum()
    }

    fn clock(&self) -> DateTime<Utc> {
        self.incident.created_at + Duration::milliseconds((self.elapsed_secs() * 1000.0).round() as i64)
    }

    fn push(&mut self, event: Event) {
        let ev = TraceEvent { seq: self.trace.len(), ts: self.clock(), event };
        self.observer.on_event(&ev, &self.memory);
        self.trace.push(ev);
    }

    fn emit(&mut self, event: Event) {
        self.sync_degradations();
        self.push(event);
    }

    fn sync_degradations(&mut self) {
        let all = self.llm.ledger.degradations();
        for d in all.into_iter().skip(self.seen_degradations) {
            self.seen_degradations += 1;
            self.push(Event::Degraded { role: d.role, stage: d.stage, reason: d.reason });
        }
    }

    fn execute(mut self, session_id: &str, feedback: &mut dyn FeedbackProvider) -> DiagnosisSession {
        self.emit(Event::SessionStarted { incident_id: self.incident.id.clone(), mode: self.cfg.mode });

        self.llm.set_stage(Stage::Intake);
        let summary = match self.agents.summarize(self.incident) {
            Ok(s) => s,
            Err(e) => {
                self.llm.degrade(AgentRole::Summarization, e.to_string());
                let text: String = self.incident.description.trim().chars().take(self.cfg.summary_max_chars).collect();
                crate::agents::Summary { text, degraded: true, passthrough: false }
            }
        };
        self.memory.summary = Some(summary.text.clone());
        self.emit(Event::Summarized { text: summary.text.clone(), passthrough: summary.passthrough, degraded: summary.degraded });

        let mut outcome = None;
        if self.cfg.mode == EngineMode::Full {
            if let Some(r) = self.pipeline1() {
                outcome = Some(DiagnosisOutcome { status: OutcomeStatus::Resolved { root_causes: r }, resolving_pipeline: Some(1) });
            }
        }
        if outcome.is_none() {
            if let Some(r) = self.pipeline2() {
                outcome = Some(DiagnosisOutcome { status: OutcomeStatus::Resolved { root_causes: r }, resolving_pipeline: Some(2) });
            }
        }
        let outcome = match outcome {
            Some(o) => o,
            None => {
                let p3 = if self.cfg.mode == EngineMode::Full { self.pipeline3(feedback) } else { P3::Escalate };
                match p3 {
                    P3::Advised { suggestions, accepted } => {
                        DiagnosisOutcome { status: OutcomeStatus::Advised { suggestions, accepted }, resolving_pipeline: Some(3) }
                    }
                    P3::Escalate => {
                        self.stats.llm_calls = self.llm.ledger.calls();
                        self.stats.verification_secs = self.elapsed_secs();
                        let ticket = create_ticket(
                            self.incident,
                            &summary.text,
                            &self.tested,
                            &self.stats,
                            &self.rounds,
                            &self.feedback_texts,
                            self.clock(),
                        );
                        DiagnosisOutcome { status: OutcomeStatus::Escalated { ticket: Box::new(ticket) }, resolving_pipeline: None }
                    }
                }
            }
        };

        let report = self.conclude(&outcome);
        self.emit(Event::Concluded {
            status: outcome.label().into(),
            resolving_pipeline: outcome.resolving_pipeline,
            root_causes: outcome.root_causes().to_vec(),
            report: report.clone(),
        });
        self.stats.llm_calls = self.llm.ledger.calls();
        self.stats.verification_secs = self.elapsed_secs();
        self.emit(Event::SessionFinished {
            status: outcome.label().into(),
            llm_calls: self.stats.llm_calls,
            verification_secs: self.stats.verification_secs,
        });

        DiagnosisSession {
            session_id: session_id.to_string(),
            incident: self.incident.clone(),
            summary: summary.text,
            memory: self.memory,
            trace: self.trace,
            tested: self.tested,
            outcome,
            report,
            stats: self.stats,
            usage: self.llm.ledger.entries(),
            degradations: self.llm.ledger.degradations(),
            verification_time: self.exec.time_ledger()[self.exec_base..].to_vec(),
        }
    }

    fn check(&mut self, pipeline: u8, path: &TaxonomyPath) -> Vec<EvidenceEntry> {
        let check = self.exec.verify_node(path, self.res.taxonomy, self.res.registry);
        let entries = self.memory.record(path, check.results);
        self.emit(Event::EvidenceCollected {
            pipeline,
            path: path.clone(),
            status: check.overall,
            evidence: entries.iter().map(EvidenceRef::from).collect(),
        });
        entries
    }

    fn judge(
        &mut self,
        pipeline: u8,
        path: &TaxonomyPath,
        own: &[EvidenceEntry],
        context: &[EvidenceEntry],
    ) -> Result<Decision, Halt> {
        let description = self.res.taxonomy.lookup(path).map(|n| n.description.clone()).unwrap_or_default();
        let verdict = self
            .agents
            .reflect(path, &description, own, context, &self.memory)
            .map_err(|e| halt(AgentRole::Reflection, e))?;
        self.emit(Event::VerdictReached {
            pipeline,
            path: path.clone(),
            decision: verdict.decision,
            rationale: verdict.rationale.clone(),
            cited: verdict.cited_evidence.clone(),
            note: verdict.note.clone(),
        });
        if verdict.decision == Decision::Confirmed {
            let cited: Vec<EvidenceEntry> = own
                .iter()
                .chain(context)
                .filter(|e| verdict.cited_evidence.contains(&e.id))
                .cloned()
                .collect();
            self.memory.retain(cited);
        }
        self.tested.push(TestedHypothesis {
            pipeline,
            path: path.clone(),
            decision: verdict.decision,
            rationale: verdict.rationale,
            note: verdict.note,
            cited: verdict.cited_evidence,
            evidence: own.iter().map(EvidenceRef::from).collect(),
        });
        Ok(verdict.decision)
    }

    fn record_halt(&mut self, pipeline: u8, h: Halt) {
        match h {
            Halt::Budget => self.emit(Event::BudgetExceeded { pipeline, budget: self.llm.budget() }),
            Halt::Gateway { role, reason } => {
                self.llm.degrade(role, reason);
                self.sync_degradations();
            }
            Halt::EarlyExit => {}
        }
    }

    fn pipeline1(&mut self) -> Option<Vec<TaxonomyPath>> {
        self.llm.set_stage(Stage::Pipeline1);
        self.emit(Event::PipelineStarted { pipeline: 1 });
        let query = self.memory.context().to_string();
        let own_id = self.incident.id.clone();
        let exclude_self = self.cfg.exclude_self;
        let hits = self.res.corpus.retrieve_similar_where(&query, self.cfg.retrieval_pool.max(1), self.res.embedder, |r| {
            r.root_cause.is_some() && !(exclude_self && r.id == own_id)
        });
        let min = self.cfg.min_similarity;
        let (mut relevant, below): (Vec<_>, Vec<_>) = hits.into_iter().partition(|h| h.similarity >= min);
        if self.cfg.rerank && relevant.len() > 1 {
            relevant = self.agents.rerank(&query, relevant);
        }
        let accepted: Vec<_> = relevant.iter().take(self.cfg.retrieval_k).cloned().collect();
        let hits: Vec<_> = relevant.into_iter().chain(below).collect();
        self.emit(Event::RetrievalCompleted {
            hits: hits
                .iter()
                .map(|h| HitView {
                    id: h.record.id.clone(),
                    similarity: h.similarity,
                    root_cause: h.record.root_cause.clone(),
                    rerank_position: h.rerank_position,
                })
                .collect(),
            accepted: accepted.iter().map(|h| h.record.id.clone()).collect(),
        });

        let mut confirmed: Vec<TaxonomyPath> = Vec::new();
        let mut seen: Vec<TaxonomyPath> = Vec::new();
        for hit in accepted {
            let Some(label) = hit.record.root_cause.clone() else { continue };
            if seen.contains(&label) {
                continue;
            }
            seen.push(label.clone());
            let known = self.res.taxonomy.contains(&label);
            self.emit(Event::HypothesisProposed { pipeline: 1, path: label.clone(), source: hit.record.id.clone(), known });
            if !known {
                continue;
            }
            let own = self.check(1, &label);
            match self.judge(1, &label, &own, &[]) {
                Ok(Decision::Confirmed) => confirmed.push(label),
                Ok(_) => {}
                Err(h) => {
                    self.record_halt(1, h);
                    confirmed.clear();
                    break;
                }
            }
        }
        let resolved = !confirmed.is_empty();
        self.emit(Event::PipelineFinished { pipeline: 1, resolved, root_causes: confirmed.clone() });
        resolved.then_some(confirmed)
    }

    fn pipeline2(&mut self) -> Option<Vec<TaxonomyPath>> {
        self.llm.set_stage(Stage::Pipeline2);
        self.emit(Event::PipelineStarted { pipeline: 2 });
        self.stats.nodes_entered += 1;
        self.emit(Event::NodeEntered { path: None, depth: 0 });
        let mut found = Vec::new();
        let outcome = self.descend(None, &mut found);
        let resolved = match outcome {
            Ok(()) | Err(Halt::EarlyExit) => !found.is_empty(),
            Err(h) => {
                self.record_halt(2, h);
                false
            }
        };
        let root_causes = if resolved { found } else { Vec::new() };
        self.emit(Event::PipelineFinished { pipeline: 2, resolved, root_causes: root_causes.clone() });
        resolved.then_some(root_causes)
    }

    fn descend(&mut self, node: Option<&TaxonomyPath>, found: &mut Vec<TaxonomyPath>) -> Result<(), Halt> {
        let ranked = self
            .agents
            .rank_children(node, self.res.taxonomy, &self.memory)
            .map_err(|e| halt(AgentRole::Planning, e))?;
        self.emit(Event::HypothesesRanked {
            node: node.cloned(),
            ordered: ranked.ordered.clone(),
            pruned: ranked.pruned.clone(),
            note: ranked.note.clone(),
        });
        for p in &ranked.pruned {
            self.stats.pruned += 1;
            self.emit(Event::BranchPruned { node: node.cloned(), path: p.clone() });
        }
        if ranked.early_stop {
            self.stats.early_stops += 1;
            self.emit(Event::EarlyStop { node: node.cloned(), note: ranked.note });
            return Ok(());
        }
        for child in &ranked.ordered {
            let own = self.check(2, child);
            self.memory.push(child.clone(), own.clone());
            self.stats.nodes_entered += 1;
            self.emit(Event::NodeEntered { path: Some(child.clone()), depth: child.depth() });
            let result = if self.res.taxonomy.children(Some(child)).is_empty() {
                let context: Vec<EvidenceEntry> = self.memory.in_scope().into_iter().filter(|e| !own.iter().any(|o| o.id == e.id)).collect();
                match self.judge(2, child, &own, &context) {
                    Ok(Decision::Confirmed) => {
                        if !found.contains(child) {
                            found.push(child.clone());
                        }
                        if self.cfg.early_exit {
                            Err(Halt::EarlyExit)
                        } else {
                            Ok(())
                        }
                    }
                    Ok(_) => Ok(()),
                    Err(h) => Err(h),
                }
            } else {
                self.descend(Some(child), found)
            };
            self.memory.pop();
            self.stats.backtracks += 1;
            self.emit(Event::Backtrack { path: child.clone(), to: node.cloned() });
            result?;
        }
        Ok(())
    }

    fn tested_lines(&self) -> Vec<String> {
        self.tested
            .iter()
            .map(|t| {
                let digests: Vec<&str> = t.evidence.iter().map(|e| e.digest.as_str()).collect();
                format!("- {} (pipeline {}): {:?} [{}]", t.path, t.pipeline, t.decision, digests.join(", "))
            })
            .collect()
    }

    fn pipeline3(&mut self, feedback: &mut dyn FeedbackProvider) -> P3 {
        self.llm.set_stage(Stage::Pipeline3);
        self.emit(Event::PipelineStarted { pipeline: 3 });
        let query = self.memory.context().to_string();
        let hits = self.res.kb.retrieve(&query, self.cfg.kb_top_k, self.res.embedder);
        self.emit(Event::KbRetrieved { snippets: hits.iter().map(|h| (h.snippet.id.clone(), h.similarity)).collect() });
        let snippets: Vec<_> = hits.into_iter().map(|h| h.snippet).collect();
        let tested = self.tested_lines();
        let mut previous: Vec<String> = Vec::new();
        let mut result = P3::Escalate;
        for round in 1..=feedback.max_rounds() {
            let input = ExploreInput {
                memory: &self.memory,
                tested: &tested,
                kb: &snippets,
                library: self.res.library,
                previous: &previous,
                feedback: &self.feedback_texts,
            };
            let exploration = match self.agents.explore(&input) {
                Ok(e) => e,
                Err(e) => {
                    self.record_halt(3, halt(AgentRole::Exploration, e));
                    break;
                }
            };
            if exploration.degraded {
                self.sync_degradations();
                break;
            }
            self.rounds.push(SuggestionRound {
                round,
                hypotheses: exploration.hypotheses.clone(),
                suggestions: exploration.suggestions.clone(),
            });
            self.emit(Event::SuggestionsOffered {
                round,
                hypotheses: exploration.hypotheses,
                suggestions: exploration.suggestions.clone(),
            });
            let response = feedback.next_feedback(round, &exploration.suggestions);
            self.emit(Event::FeedbackReceived { round, response: response.clone() });
            match response {
                FeedbackResponse::Accept { index } if index < exploration.suggestions.len() => {
                    result = P3::Advised {
                        accepted: exploration.suggestions[index].clone(),
                        suggestions: exploration.suggestions,
                    };
                    break;
                }
                FeedbackResponse::Accept { .. } | FeedbackResponse::Decline => break,
                FeedbackResponse::Feedback { text } => {
                    self.feedback_texts.push(text);
                    previous = exploration.suggestions;
                }
            }
        }
        self.emit(Event::PipelineFinished { pipeline: 3, resolved: matches!(result, P3::Advised { .. }), root_causes: Vec::new() });
        result
    }

    fn conclude(&mut self, outcome: &DiagnosisOutcome) -> String {
        self.llm.set_stage(Stage::Conclusion);
        let digests_for = |path: &TaxonomyPath| -> Vec<String> {
            self.tested
                .iter()
                .filter(|t| &t.path == path && t.decision == Decision::Confirmed)
                .flat_map(|t| {
                    t.evidence.iter().filter(|e| t.cited.contains(&e.id) || e.outcome == Outcome::Fail).map(|e| e.digest.clone())
                })
                .collect()
        };
        let mut confirmed = String::new();
        for (i, p) in outcome.root_causes().iter().enumerate() {
            let _ = writeln!(confirmed, "{}. {} [evidence {}]", i + 1, p, digests_for(p).join(", "));
        }
        let headline = match (&outcome.status, outcome.resolving_pipeline) {
            (OutcomeStatus::Resolved { .. }, Some(p)) => format!("RESOLVED by pipeline {p}"),
            (OutcomeStatus::Advised { accepted, .. }, _) => format!("ADVISED: user applied \"{accepted}\""),
            _ => "UNRESOLVED: escalated to the support team".to_string(),
        };
        let tested = self.tested_lines().join("\n");
        let traversal = format!(
            "nodes entered {}, pruned {}, early stops {}, backtracks {}",
            self.stats.nodes_entered, self.stats.pruned, self.stats.early_stops, self.stats.backtracks
        );

        let mut report = String::new();
        let _ = writeln!(report, "Incident {}: {}", self.incident.id, headline);
        if !confirmed.is_empty() {
            let _ = writeln!(report, "\nRoot causes:\n{}", confirmed.trim_end());
        }
        if let OutcomeStatus::Advised { suggestions, .. } = &outcome.status {
            let _ = writeln!(report, "\nSuggestions:");
            for (i, s) in suggestions.iter().enumerate() {
                let _ = writeln!(report, "{}. {s}", i + 1);
            }
        }
        let _ = writeln!(report, "\nTested hypotheses:\n{}", if tested.is_empty() { "(none)" } else { &tested });
        let _ = writeln!(report, "\nTraversal: {traversal}");

        let input = ConcludeInput {
            memory: &self.memory,
            outcome: &headline,
            confirmed: if confirmed.is_empty() { "(none)" } else { confirmed.trim_end() },
            tested: if tested.is_empty() { "(none)" } else { &tested },
            traversal: &traversal,
        };
        match self.agents.conclude(&input) {
            Ok(Some(text)) => {
                let _ = writeln!(report, "\n{text}");
            }
            Ok(None) => self.llm.degrade(AgentRole::Conclusion, "empty conclusion, report has no narrative"),
            Err(e) => self.llm.degrade(AgentRole::Conclusion, e.to_string()),
        }
        self.sync_degradations();
        report.trim_end().to_string() + "\n"
    }
}
