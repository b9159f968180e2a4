//! Shared fixtures for engine tests: random taxonomies, a scripted model and
//! an environment whose checks fail on demand.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub mod oracles;

use infradiag::agents::{AgentMemory, Decision, Prompts};
use infradiag::corpus::{HashingEmbedder, IncidentRecord, IncidentStore};
use infradiag::engine::{Engine, EngineConfig, EngineMode, Event, NoFeedback, Resources, TraceEvent};
use infradiag::gateway::{BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayError, LlmSession, TokenUsage};
use infradiag::kb::KnowledgeBase;
use infradiag::taxonomy::{Origin, Taxonomy, TaxonomyPath};
use infradiag::verify::{
    Allowlist, Environment, Executor, RawRun, ScriptLevel, ScriptRegistry, ScriptStatus, SuccessRule, VerificationScript,
};

pub fn p(s: &str) -> TaxonomyPath {
    s.parse().unwrap()
}

pub fn key(node: Option<&TaxonomyPath>) -> String {
    node.map(|p| p.to_string()).unwrap_or_default()
}

/// What the scripted model answers at each node.
#[derive(Debug, Clone, Default)]
pub struct Plan {
    /// Ranking per internal node ("" is the root). Missing nodes get a
    /// malformed reply.
    pub rankings: BTreeMap<String, Vec<TaxonomyPath>>,
    pub verdicts: BTreeMap<TaxonomyPath, Decision>,
}

pub struct RandomCase {
    pub taxonomy: Taxonomy,
    pub registry: ScriptRegistry,
    pub plan: Plan,
}

/// A taxonomy of at most `max_nodes` nodes and three levels, every node
/// carrying one check, with random rankings, prunings and verdicts.
pub fn random_case(seed: u64, max_nodes: usize) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut t = Taxonomy::empty();
    let target = rng.random_range(1..=max_nodes);
    let mut paths: Vec<TaxonomyPath> = Vec::new();
    let mut n = 0;
    while paths.len() < target {
        n += 1;
        let parents: Vec<&TaxonomyPath> = paths.iter().filter(|q| q.depth() < 3).collect();
        let path = if parents.is_empty() || rng.random_bool(0.25) {
            TaxonomyPath::new([format!("c{n}")]).unwrap()
        } else {
            parents[rng.random_range(0..parents.len())].child(&format!("n{n}")).unwrap()
        };
        t.upsert_label(&path, &format!("node {n}"), Origin::Manual, at).unwrap();
        paths.push(path);
    }
    let mut scripts = Vec::new();
    let mut plan = Plan::default();
    for (i, path) in paths.iter().enumerate() {
        let id = format!("chk{i}");
        scripts.push(VerificationScript {
            id: id.clone(),
            bound_path: path.clone(),
            level: if path.depth() == 3 { ScriptLevel::Leaf } else { ScriptLevel::Internal },
            command: vec!["probe".into(), path.to_string()],
            timeout_secs: 5.0,
            success_rule: SuccessRule::ExitZero,
            status: ScriptStatus::Active,
        });
        t.bind_script(path, &id).unwrap();
    }
    let mut internal: Vec<Option<TaxonomyPath>> = vec![None];
    internal.extend(paths.iter().filter(|q| !t.children(Some(q)).is_empty()).cloned().map(Some));
    for node in internal {
        if rng.random_bool(0.05) {
            continue;
        }
        let mut kids = t.child_paths(node.as_ref());
        kids.shuffle(&mut rng);
        let keep = rng.random_range(0..=kids.len());
        kids.truncate(if rng.random_bool(0.8) { keep.max(1) } else { keep });
        plan.rankings.insert(key(node.as_ref()), kids);
    }
    for leaf in t.walk().into_iter().filter(|(_, n)| n.is_leaf()).map(|(q, _)| q) {
        let d = match rng.random_range(0..10) {
            0..=3 => Decision::Confirmed,
            4..=7 => Decision::Rejected,
            _ => Decision::Inconclusive,
        };
        plan.verdicts.insert(leaf, d);
    }
    RandomCase { taxonomy: t, registry: ScriptRegistry::new(scripts).unwrap(), plan }
}

/// The search as a plain recursive walk over the plan.
pub fn reference_dfs(t: &Taxonomy, plan: &Plan) -> (Vec<Option<TaxonomyPath>>, Vec<TaxonomyPath>) {
    fn go(t: &Taxonomy, plan: &Plan, node: Option<&TaxonomyPath>, entered: &mut Vec<Option<TaxonomyPath>>, r: &mut Vec<TaxonomyPath>) {
        for child in plan.rankings.get(&key(node)).cloned().unwrap_or_default() {
            entered.push(Some(child.clone()));
            if t.children(Some(&child)).is_empty() {
                if plan.verdicts.get(&child) == Some(&Decision::Confirmed) && !r.contains(&child) {
                    r.push(child.clone());
                }
            } else {
                go(t, plan, Some(&child), entered, r);
            }
        }
    }
    let mut entered = vec![None];
    let mut r = Vec::new();
    go(t, plan, None, &mut entered, &mut r);
    (entered, r)
}

fn section<'a>(text: &'a str, heading: &str) -> &'a str {
    let marker = format!("## {heading}\n");
    let Some(start) = text.find(&marker) else { return "" };
    let body = &text[start + marker.len()..];
    body.find("\n## ").map(|e| &body[..e]).unwrap_or(body).trim_end()
}

/// Answers ranking and reflection prompts from a [`Plan`].
pub struct ScriptedModel {
    pub plan: Plan,
}

impl ScriptedModel {
    fn answer(&self, req: &ChatRequest) -> String {
        let user = &req.messages.iter().find(|m| m.role == infradiag::gateway::MessageRole::User).unwrap().content;
        match req.response_grammar.as_deref() {
            Some("ranking") => {
                let node = section(user, "Current node").lines().next().unwrap_or("");
                let node = if node.starts_with("(root)") { "" } else { node.split_once(": ").map(|x| x.0).unwrap_or(node) };
                match self.plan.rankings.get(node) {
                    Some(r) => json!(r.iter().map(|q| q.to_string()).collect::<Vec<_>>()).to_string(),
                    None => "I cannot rank these".into(),
                }
            }
            Some("verdict") => {
                let hyp = section(user, "Hypothesis").lines().next().unwrap_or("");
                let hyp = hyp.split_once(": ").map(|x| x.0).unwrap_or(hyp);
                let own: Vec<String> = section(user, "Collected evidence")
                    .lines()
                    .filter_map(|l| l.strip_prefix('['))
                    .filter_map(|l| l.split_once("] "))
                    .filter(|(_, rest)| rest.starts_with(&format!("{hyp} script=")))
                    .map(|(id, _)| id.to_string())
                    .collect();
                let d = self.plan.verdicts.get(&p(hyp)).copied().unwrap_or(Decision::Inconclusive);
                json!({"decision": format!("{d:?}"), "rationale": "scripted", "evidence_ids": own}).to_string()
            }
            Some("conclusion") => "Scripted conclusion.".into(),
            Some("rerank") => "[]".into(),
            Some("exploration") => json!({"hypotheses": ["h"], "suggestions": ["restart the job", "check quotas"]}).to_string(),
            _ => "summary".into(),
        }
    }
}

impl ChatBackend for ScriptedModel {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let text = self.answer(req);
        Ok(ChatResponse { usage: TokenUsage { input_tokens: 10, output_tokens: 5 }, text, backend: BackendKind::Simulated })
    }
}

/// Checks fail exactly for the listed paths.
pub struct FlagEnvironment {
    pub failing: BTreeSet<String>,
}

impl Environment for FlagEnvironment {
    fn execute(&mut self, argv: &[String], _: Duration) -> RawRun {
        let fail = argv.get(1).is_some_and(|a| self.failing.contains(a));
        RawRun {
            exit_code: Some(if fail { 1 } else { 0 }),
            stdout: format!("probe {}", argv.get(1).map(String::as_str).unwrap_or("")),
            stderr: String::new(),
            duration: Duration::from_millis(250),
            timed_out: false,
        }
    }
}

pub fn flag_executor(failing: impl IntoIterator<Item = String>) -> Executor {
    Executor::new(Box::new(FlagEnvironment { failing: failing.into_iter().collect() }), Allowlist::unrestricted())
}

pub fn incident(id: &str, description: &str) -> IncidentRecord {
    IncidentRecord::new(id, description, Utc.with_ymd_and_hms(2024, 6, 1, 8, 0, 0).unwrap())
}

/// One taxonomy-only session over `case`, with a memory-discipline
/// violation list collected by the observer.
pub struct DfsRun {
    pub entered: Vec<Option<TaxonomyPath>>,
    pub r: Vec<TaxonomyPath>,
    pub violations: Vec<String>,
    pub final_depth: usize,
    pub trace: Vec<TraceEvent>,
}

pub fn run_case(case: &RandomCase) -> DfsRun {
    let embedder = HashingEmbedder::default();
    let corpus = IncidentStore::new();
    let kb = KnowledgeBase::new(Vec::new(), &embedder);
    let prompts = Prompts::bundled();
    let res = Resources {
        taxonomy: &case.taxonomy,
        registry: &case.registry,
        corpus: &corpus,
        embedder: &embedder,
        kb: &kb,
        library: "",
        prompts: &prompts,
    };
    let cfg = EngineConfig { mode: EngineMode::TaxonomyOnly, ..EngineConfig::default() };
    let engine = Engine::new(res, cfg);
    let backend: Arc<dyn ChatBackend> = Arc::new(ScriptedModel { plan: case.plan.clone() });
    let llm = LlmSession::new(backend, "gpt-4o").with_budget(10_000);
    let failing = case.plan.verdicts.iter().filter(|(_, d)| **d == Decision::Confirmed).map(|(q, _)| q.to_string());
    let mut exec = flag_executor(failing);

    let mut pos: Vec<TaxonomyPath> = Vec::new();
    let mut violations = Vec::new();
    let mut observer = |ev: &TraceEvent, mem: &AgentMemory| {
        match &ev.event {
            Event::NodeEntered { path: Some(q), .. } => pos.push(q.clone()),
            Event::Backtrack { path, .. } => {
                if pos.pop().as_ref() != Some(path) {
                    violations.push(format!("seq {}: backtrack from {path} out of order", ev.seq));
                }
            }
            _ => {}
        }
        if mem.stack_paths() != pos {
            violations.push(format!("seq {}: stack {:?} != position {:?}", ev.seq, mem.stack_paths(), pos));
        }
        let ancestors: BTreeSet<String> = pos.iter().map(|q| q.to_string()).collect();
        let evidence: BTreeSet<String> = mem.in_scope().iter().map(|e| e.path.to_string()).collect();
        if evidence != ancestors {
            violations.push(format!("seq {}: evidence from {evidence:?}, ancestors {ancestors:?}", ev.seq));
        }
    };
    let session = engine.diagnose("s", &incident("inc-1", "job hangs at startup"), &mut exec, &llm, &mut NoFeedback, &mut observer);
    let entered = session
        .trace
        .iter()
        .filter_map(|e| match &e.event {
            Event::NodeEntered { path, .. } => Some(path.clone()),
            _ => None,
        })
        .collect();
    DfsRun {
        entered,
        r: session.outcome.root_causes().to_vec(),
        violations,
        final_depth: session.memory.depth(),
        trace: session.trace,
    }
}

/// A hand-written case: every path gets one check, `failing` checks fail.
pub fn case_from(paths: &[&str], rankings: &[(&str, &[&str])], verdicts: &[(&str, Decision)]) -> RandomCase {
    let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut t = Taxonomy::empty();
    let mut scripts = Vec::new();
    for (i, s) in paths.iter().enumerate() {
        let path = p(s);
        t.upsert_label(&path, &format!("about {s}"), Origin::Manual, at).unwrap();
        let id = format!("chk{i}");
        scripts.push(VerificationScript {
            id: id.clone(),
            bound_path: path.clone(),
            level: if path.depth() == 3 { ScriptLevel::Leaf } else { ScriptLevel::Internal },
            command: vec!["probe".into(), path.to_string()],
            timeout_secs: 5.0,
            success_rule: SuccessRule::ExitZero,
            status: ScriptStatus::Active,
        });
        t.bind_script(&path, &id).unwrap();
    }
    let plan = Plan {
        rankings: rankings.iter().map(|(k, v)| (k.to_string(), v.iter().map(|s| p(s)).collect())).collect(),
        verdicts: verdicts.iter().map(|(k, d)| (p(k), *d)).collect(),
    };
    RandomCase { taxonomy: t, registry: ScriptRegistry::new(scripts).unwrap(), plan }
}

pub struct FullRun<'c> {
    pub case: &'c RandomCase,
    pub corpus: IncidentStore,
    pub config: EngineConfig,
    pub budget: usize,
}

impl<'c> FullRun<'c> {
    pub fn new(case: &'c RandomCase) -> Self {
        FullRun { case, corpus: IncidentStore::new(), config: EngineConfig::default(), budget: 64 }
    }

    pub fn diagnose(
        &self,
        inc: &IncidentRecord,
        feedback: &mut dyn infradiag::engine::FeedbackProvider,
    ) -> (infradiag::engine::DiagnosisSession, LlmSession) {
        let embedder = HashingEmbedder::default();
        let kb = KnowledgeBase::bundled(&embedder);
        let prompts = Prompts::bundled();
        let res = Resources {
            taxonomy: &self.case.taxonomy,
            registry: &self.case.registry,
            corpus: &self.corpus,
            embedder: &embedder,
            kb: &kb,
            library: infradiag::kb::bundled_library(),
            prompts: &prompts,
        };
        let engine = Engine::new(res, self.config.clone());
        let backend: Arc<dyn ChatBackend> = Arc::new(ScriptedModel { plan: self.case.plan.clone() });
        let llm = LlmSession::new(backend, "gpt-4o").with_budget(self.budget);
        let failing = self.case.plan.verdicts.iter().filter(|(_, d)| **d == Decision::Confirmed).map(|(q, _)| q.to_string());
        let mut exec = flag_executor(failing);
        let s = engine.diagnose("s", inc, &mut exec, &llm, feedback, &mut infradiag::engine::NullObserver);
        (s, llm)
    }
}

pub fn labelled(id: &str, description: &str, label: &str) -> IncidentRecord {
    let mut r = incident(id, description);
    r.root_cause = Some(p(label));
    r
}
