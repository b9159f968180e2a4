//! Prompt templates, structured-output parsing and the agent roles.
//!
//! Every role renders a template, sends it through the session's
//! [`LlmSession`] and parses the reply. Replies that do not parse are sent
//! back with the expected grammar up to [`AgentConfig::repair_retries`]
//! times; after that the role degrades to a safe value instead of failing.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{IncidentRecord, RetrievalHit};
use crate::gateway::{AgentRole, GatewayError, LlmSession, Message};
use crate::taxonomy::{Taxonomy, TaxonomyPath};
use crate::util::{short_digest, truncate_utf8};
use crate::verify::{SuccessRule, VerificationResult};


// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../assets/prompts/", $name, ".txt")))),*]
    };
}

const TEMPLATES: &[(&str, &str)] = bundled!(
    "summarize.system", "summarize.user", "rank.system", "rank.user", "reflect.system", "reflect.user",
    "explore.system", "explore.user", "conclude.system", "conclude.user", "rerank.system", "rerank.user",
    "label.system", "label.user", "refine.system", "refine.user", "extract.system", "extract.user",
    "repair.user",
);

macro_rules! schemas {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../assets/prompts/schemas/", $name, ".json")))),*]
    };
}

const GRAMMARS: &[(&str, &str)] =
    schemas!("ranking", "verdict", "exploration", "rerank", "labelling", "refinement", "extraction");

/// Named prompt templates with `{{placeholder}}` slots, and the JSON
/// schemas quoted back to the model on repair.
#[derive(Debug, Clone)]
pub struct Prompts {
    templates: BTreeMap<String, String>,
    grammars: BTreeMap<String, String>,
}

impl Prompts {
    pub fn bundled() -> Self {
        Prompts {
            templates: TEMPLATES.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            grammars: GRAMMARS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Bundled templates, overridden by any `<name>.txt` present in `dir`.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut p = Prompts::bundled();
        for (name, text) in p.templates.iter_mut() {
            let file = dir.join(format!("{name}.txt"));
            if file.exists() {
                *text = fs::read_to_string(file)?;
            }
        }
        Ok(p)
    }

    pub fn template(&self, name: &str) -> &str {
        self.templates.get(name).map(String::as_str).unwrap_or_else(|| panic!("no prompt template `{name}`"))
    }

    pub fn grammar(&self, name: &str) -> &str {
        self.grammars.get(name).map(String::as_str).unwrap_or("plain text")
    }

    /// Substitutes `{{key}}` slots. Unknown slots are left in place.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        let mut out = self.template(name).to_string();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts::bundled()
    }
}

// ---------------------------------------------------------------------------
// Structured output
// ---------------------------------------------------------------------------

/// Pulls a JSON value out of a model reply: the first ```json fence, else
/// the first fence, else the whole reply, else the outermost bracketed span.
pub fn extract_json(text: &str) -> Result<Value, String> {
    let mut candidates: Vec<&str> = Vec::new();
    if let Some(start) = text.find("```json") {
        let body = &text[start + 7..];
        candidates.push(body.split("```").next().unwrap_or(body));
    } else if let Some(start) = text.find("```") {
        let body = &text[start + 3..];
        let body = body.split_once('\n').map(|(_, rest)| rest).unwrap_or(body);
        candidates.push(body.split("```").next().unwrap_or(body));
    }
    candidates.push(text);
    let open = text.find(['[', '{']);
    let close = text.rfind([']', '}']);
    if let (Some(o), Some(c)) = (open, close) {
        if o < c {
            candidates.push(&text[o..=c]);
        }
    }
    let mut last_err = String::from("reply contains no JSON value");
    for c in candidates {
        match serde_json::from_str::<Value>(c.trim()) {
            Ok(v) => return Ok(v),
            Err(e) => last_err = format!("invalid JSON: {e}"),
        }
    }
    Err(last_err)
}

fn string_array(v: &Value, what: &str) -> Result<Vec<String>, String> {
    let items = v.as_array().ok_or_else(|| format!("{what} must be a JSON array"))?;
    items
        .iter()
        .map(|i| i.as_str().map(str::to_string).ok_or_else(|| format!("{what} entries must be strings")))
        .collect()
}

pub fn parse_ranking(text: &str) -> Result<Vec<String>, String> {
    string_array(&extract_json(text)?, "ranking")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Confirmed,
    Rejected,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub rationale: String,
    pub cited_evidence: Vec<String>,
    /// Why the verdict was downgraded, when it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    fn inconclusive(note: impl Into<String>) -> Self {
        Verdict { decision: Decision::Inconclusive, rationale: String::new(), cited_evidence: Vec::new(), note: Some(note.into()) }
    }
}

pub fn parse_verdict(text: &str) -> Result<Verdict, String> {
    let v = extract_json(text)?;
    let obj = v.as_object().ok_or("verdict must be a JSON object")?;
    let decision = match obj.get("decision").and_then(Value::as_str) {
        Some("Confirmed") => Decision::Confirmed,
        Some("Rejected") => Decision::Rejected,
        Some("Inconclusive") => Decision::Inconclusive,
        Some(other) => return Err(format!("unknown decision `{other}`")),
        None => return Err("verdict lacks a `decision` string".into()),
    };
    let rationale = obj.get("rationale").and_then(Value::as_str).unwrap_or("").to_string();
    let cited = match obj.get("evidence_ids") {
        Some(ids) => string_array(ids, "evidence_ids")?,
        None => Vec::new(),
    };
    Ok(Verdict { decision, rationale, cited_evidence: cited, note: None })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub hypotheses: Vec<String>,
    pub suggestions: Vec<String>,
    pub degraded: bool,
}

pub fn parse_exploration(text: &str) -> Result<Exploration, String> {
    let v = extract_json(text)?;
    let field = |k: &str| v.get(k).ok_or(format!("exploration lacks `{k}`")).and_then(|x| string_array(x, k));
    Ok(Exploration { hypotheses: field("hypotheses")?, suggestions: field("suggestions")?, degraded: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProposal {
    pub label: String,
    pub description: String,
}

pub fn parse_label(text: &str) -> Result<LabelProposal, String> {
    let v = extract_json(text)?;
    let label = v.get("label").and_then(Value::as_str).ok_or("labelling lacks a `label` string")?;
    let path: TaxonomyPath = label.parse().map_err(|e| format!("bad label `{label}`: {e}"))?;
    if path.depth() != 3 {
        return Err(format!("label `{label}` must have three segments"));
    }
    let description = v.get("description").and_then(Value::as_str).unwrap_or("").trim().to_string();
    Ok(LabelProposal { label: path.to_string(), description })
}

pub fn parse_refinement(text: &str) -> Result<String, String> {
    let v = extract_json(text)?;
    match v.get("description").and_then(Value::as_str).map(str::trim) {
        Some(d) if !d.is_empty() => Ok(d.to_string()),
        _ => Err("refinement lacks a non-empty `description`".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandDraft {
    pub argv: Vec<String>,
    pub success_rule: SuccessRule,
}

pub fn parse_extraction(text: &str) -> Result<Vec<CommandDraft>, String> {
    let v = extract_json(text)?;
    let cmds = v.get("commands").ok_or("extraction lacks `commands`")?;
    let drafts: Vec<CommandDraft> = serde_json::from_value(cmds.clone()).map_err(|e| format!("bad commands: {e}"))?;
    if drafts.iter().any(|d| d.argv.is_empty()) {
        return Err("every command needs a non-empty argv".into());
    }
    Ok(drafts)
}

/// Result of a structured call after repairs.
#[derive(Debug, Clone, PartialEq)]
pub enum Parsed<T> {
    Ok(T),
    Malformed(String),
}

// ---------------------------------------------------------------------------
// Memory
// ---------------------------------------------------------------------------

/// One verification result as the agents see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEntry {
    pub id: String,
    pub path: TaxonomyPath,
    pub result: VerificationResult,
    pub digest: String,
}

/// Evidence gathered at one node of the current search path.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub path: TaxonomyPath,
    pub evidence: Vec<EvidenceEntry>,
}

/// Per-session agent memory: incident context, the evidence stack of the
/// current search path, and evidence kept from confirmed branches.
#[derive(Debug, Clone)]
pub struct AgentMemory {
    pub incident_id: String,
    pub description: String,
    pub summary: Option<String>,
    stack: Vec<Frame>,
    retained: Vec<EvidenceEntry>,
    next_id: usize,
}

pub fn evidence_digest(r: &VerificationResult) -> String {
    short_digest(format!("{}\n{:?}\n{:?}\n{}", r.script_id, r.outcome, r.exit_code, r.stdout))
}

impl AgentMemory {
    pub fn new(incident: &IncidentRecord) -> Self {
        AgentMemory {
            incident_id: incident.id.clone(),
            description: incident.description.clone(),
            summary: None,
            stack: Vec::new(),
            retained: Vec::new(),
            next_id: 1,
        }
    }

    /// The text agents reason over: the summary once available.
    pub fn context(&self) -> &str {
        self.summary.as_deref().unwrap_or(&self.description)
    }

    /// Assigns evidence ids to fresh results without touching the stack.
    pub fn record(&mut self, path: &TaxonomyPath, results: Vec<VerificationResult>) -> Vec<EvidenceEntry> {
        results
            .into_iter()
            .map(|result| {
                let id = format!("ev-{}", self.next_id);
                self.next_id += 1;
                EvidenceEntry { id, path: path.clone(), digest: evidence_digest(&result), result }
            })
            .collect()
    }

    pub fn push(&mut self, path: TaxonomyPath, evidence: Vec<EvidenceEntry>) {
        self.stack.push(Frame { path, evidence });
    }

    pub fn pop(&mut self) -> Option<Frame> {
        self.stack.pop()
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn stack_paths(&self) -> Vec<TaxonomyPath> {
        self.stack.iter().map(|f| f.path.clone()).collect()
    }

    pub fn top(&self) -> Option<&Frame> {
        self.stack.last()
    }

    /// Evidence of every frame on the stack, outermost first.
    pub fn in_scope(&self) -> Vec<EvidenceEntry> {
        self.stack.iter().flat_map(|f| f.evidence.iter().cloned()).collect()
    }

    pub fn retain(&mut self, entries: impl IntoIterator<Item = EvidenceEntry>) {
        for e in entries {
            if !self.retained.iter().any(|r| r.id == e.id) {
                self.retained.push(e);
            }
        }
    }

    pub fn retained(&self) -> &[EvidenceEntry] {
        &self.retained
    }
}

/// Evidence lines as shown in prompts.
pub fn format_evidence(entries: &[EvidenceEntry]) -> String {
    if entries.is_empty() {
        return "(none)".to_string();
    }
    let mut out = String::new();
    for e in entries {
        let r = &e.result;
        let exit = r.exit_code.map(|c| c.to_string()).unwrap_or_else(|| "none".into());
        let _ = writeln!(
            out,
            "[{}] {} script={} outcome={:?} exit={} digest={}",
            e.id, e.path, r.script_id, r.outcome, exit, e.digest
        );
        for line in r.stdout.lines().filter(|l| !l.trim().is_empty()).take(6) {
            let _ = writeln!(out, "    | {}", truncate_utf8(line.trim_end(), 160));
        }
    }
    out.trim_end().to_string()
}

// ---------------------------------------------------------------------------
// Roles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub repair_retries: usize,
    pub summary_max_chars: usize,
    /// One-line descriptions up to this length are used as their own summary.
    pub passthrough_chars: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { repair_retries: 2, summary_max_chars: 1200, passthrough_chars: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub degraded: bool,
    /// True when the description was used verbatim without a model call.
    pub passthrough: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHypotheses {
    pub ordered: Vec<TaxonomyPath>,
    pub pruned: Vec<TaxonomyPath>,
    pub early_stop: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn truncate_chars(text: &str, max: usize) -> String {
    text.chars().take(max).collect()
}

/// All roles, bound to one session's LLM access.
pub struct Agents<'a> {
    pub llm: &'a LlmSession,
    pub prompts: &'a Prompts,
    pub config: AgentConfig,
}

impl<'a> Agents<'a> {
    pub fn new(llm: &'a LlmSession, prompts: &'a Prompts) -> Self {
        Agents { llm, prompts, config: AgentConfig::default() }
    }

    fn structured<T>(
        &self,
        role: AgentRole,
        prompt: &str,
        vars: &[(&str, &str)],
        grammar: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Parsed<T>, GatewayError> {
        let system = self.prompts.render(&format!("{prompt}.system"), &[]);
        let user = self.prompts.render(&format!("{prompt}.user"), vars);
        let mut req = self.llm.request(system.trim_end(), user.trim_end()).with_grammar(grammar);
        let mut reply = self.llm.complete(role, &req)?.text;
        for attempt in 0..=self.config.repair_retries {
            match parse(&reply) {
                Ok(v) => return Ok(Parsed::Ok(v)),
                Err(e) if attempt == self.config.repair_retries => return Ok(Parsed::Malformed(e)),
                Err(e) => {
                    let repair =
                        self.prompts.render("repair.user", &[("error", &e), ("grammar", self.prompts.grammar(grammar))]);
                    req.messages.push(Message::assistant(reply));
                    req.messages.push(Message::user(repair.trim_end()));
                    reply = self.llm.complete(role, &req)?.text;
                }
            }
        }
        unreachable!("loop returns on its last iteration")
    }

    pub fn summarize(&self, incident: &IncidentRecord) -> Result<Summary, GatewayError> {
        let desc = incident.description.trim();
        if !desc.contains('\n') && desc.chars().count() <= self.config.passthrough_chars {
            return Ok(Summary { text: desc.to_string(), degraded: false, passthrough: true });
        }
        let max = self.config.summary_max_chars.to_string();
        let system = self.prompts.render("summarize.system", &[]);
        let user = self.prompts.render(
            "summarize.user",
            &[("incident_id", &incident.id), ("description", desc), ("max_chars", &max)],
        );
        let req = self.llm.request(system.trim_end(), user.trim_end()).with_grammar("summary");
        let text = self.llm.complete(AgentRole::Summarization, &req)?.text;
        let text = text.trim();
        if text.is_empty() {
            self.llm.degrade(AgentRole::Summarization, "empty summary, using the raw description");
            return Ok(Summary {
                text: truncate_chars(desc, self.config.summary_max_chars),
                degraded: true,
                passthrough: false,
            });
        }
        Ok(Summary { text: truncate_chars(text, self.config.summary_max_chars), degraded: false, passthrough: false })
    }

    /// Ranks the children of `node` (the main categories when `None`).
    pub fn rank_children(
        &self,
        node: Option<&TaxonomyPath>,
        taxonomy: &Taxonomy,
        memory: &AgentMemory,
    ) -> Result<RankedHypotheses, GatewayError> {
        let children = taxonomy.child_paths(node);
        assert!(!children.is_empty(), "rank_children needs a node with children");
        let mut candidates = String::new();
        for (p, n) in children.iter().zip(taxonomy.children(node)) {
            let _ = writeln!(candidates, "- {p}: {}", n.description);
        }
        let node_text = match node {
            None => "(root) all main categories".to_string(),
            Some(p) => format!("{p}: {}", taxonomy.lookup(p).map(|n| n.description.as_str()).unwrap_or("")),
        };
        let evidence = format_evidence(&memory.in_scope());
        let vars = [
            ("incident_id", memory.incident_id.as_str()),
            ("incident", memory.context()),
            ("node", &node_text),
            ("evidence", &evidence),
            ("candidates", candidates.trim_end()),
        ];
        match self.structured(AgentRole::Planning, "rank", &vars, "ranking", parse_ranking)? {
            Parsed::Ok(answer) => Ok(resolve_ranking(&children, &answer)),
            Parsed::Malformed(e) => Ok(RankedHypotheses {
                ordered: Vec::new(),
                pruned: children,
                early_stop: true,
                note: Some(format!("MalformedOutput: {e}")),
            }),
        }
    }

    /// Judges `hypothesis` against its own evidence, with `context` evidence
    /// from enclosing nodes also visible.
    pub fn reflect(
        &self,
        hypothesis: &TaxonomyPath,
        description: &str,
        own: &[EvidenceEntry],
        context: &[EvidenceEntry],
        memory: &AgentMemory,
    ) -> Result<Verdict, GatewayError> {
        if own.is_empty() {
            return Ok(Verdict::inconclusive("no verification evidence for this hypothesis"));
        }
        let mut visible: Vec<EvidenceEntry> = context.to_vec();
        for e in own {
            if !visible.iter().any(|v| v.id == e.id) {
                visible.push(e.clone());
            }
        }
        let evidence = format_evidence(&visible);
        let hyp = hypothesis.to_string();
        let vars = [
            ("incident_id", memory.incident_id.as_str()),
            ("incident", memory.context()),
            ("hypothesis", &hyp),
            ("description", description),
            ("evidence", &evidence),
        ];
        let mut verdict = match self.structured(AgentRole::Reflection, "reflect", &vars, "verdict", parse_verdict)? {
            Parsed::Ok(v) => v,
            Parsed::Malformed(e) => return Ok(Verdict::inconclusive(format!("MalformedOutput: {e}"))),
        };
        let known: HashSet<&str> = visible.iter().map(|e| e.id.as_str()).collect();
        verdict.cited_evidence.retain(|id| known.contains(id.as_str()));
        if verdict.decision != Decision::Inconclusive && verdict.cited_evidence.is_empty() {
            let mut downgraded = Verdict::inconclusive(format!("MalformedOutput: {:?} verdict cites no known evidence", verdict.decision));
            downgraded.rationale = verdict.rationale;
            return Ok(downgraded);
        }
        Ok(verdict)
    }

    pub fn explore(&self, input: &ExploreInput<'_>) -> Result<Exploration, GatewayError> {
        let none = |s: String| if s.is_empty() { "(none)".to_string() } else { s };
        let tested = none(input.tested.join("\n"));
        let kb = none(input.kb.iter().map(|s| format!("- [{}] {}", s.id, s.text)).collect::<Vec<_>>().join("\n"));
        let previous = none(input.previous.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join("\n"));
        let feedback = none(input.feedback.join("\n"));
        let vars = [
            ("incident_id", input.memory.incident_id.as_str()),
            ("incident", input.memory.context()),
            ("tested", &tested),
            ("kb", &kb),
            ("library", input.library.trim_end()),
            ("previous", &previous),
            ("feedback", &feedback),
        ];
        match self.structured(AgentRole::Exploration, "explore", &vars, "exploration", parse_exploration)? {
            Parsed::Ok(e) => Ok(e),
            Parsed::Malformed(e) => {
                self.llm.degrade(AgentRole::Exploration, format!("MalformedOutput: {e}"));
                Ok(Exploration { degraded: true, ..Exploration::default() })
            }
        }
    }

    /// Final report text. Empty replies are returned as `None`.
    pub fn conclude(&self, input: &ConcludeInput<'_>) -> Result<Option<String>, GatewayError> {
        let system = self.prompts.render("conclude.system", &[]);
        let user = self.prompts.render(
            "conclude.user",
            &[
                ("incident_id", input.memory.incident_id.as_str()),
                ("incident", input.memory.context()),
                ("outcome", input.outcome),
                ("confirmed", input.confirmed),
                ("tested", input.tested),
                ("traversal", input.traversal),
            ],
        );
        let req = self.llm.request(system.trim_end(), user.trim_end()).with_grammar("conclusion");
        let text = self.llm.complete(AgentRole::Conclusion, &req)?.text;
        Ok(Some(text.trim().to_string()).filter(|t| !t.is_empty()))
    }

    /// Reorders retrieval hits. Any failure keeps the input order and is
    /// recorded as a degradation.
    pub fn rerank(&self, query: &str, hits: Vec<RetrievalHit>) -> Vec<RetrievalHit> {
        let identity = |mut hits: Vec<RetrievalHit>| {
            for (i, h) in hits.iter_mut().enumerate() {
                h.rerank_position = Some(i + 1);
            }
            hits
        };
        if hits.len() <= 1 {
            return identity(hits);
        }
        let mut candidates = String::new();
        for h in &hits {
            let _ = writeln!(
                candidates,
                "- {} (similarity {:.3}): {}",
                h.record.id,
                h.similarity,
                truncate_utf8(h.record.retrieval_text().lines().next().unwrap_or(""), 200)
            );
        }
        let vars = [("query", query), ("candidates", candidates.trim_end())];
        let answer = match self.structured(AgentRole::Rerank, "rerank", &vars, "rerank", |t| string_array(&extract_json(t)?, "rerank")) {
            Ok(Parsed::Ok(ids)) => ids,
            Ok(Parsed::Malformed(e)) => {
                self.llm.degrade(AgentRole::Rerank, format!("MalformedOutput: {e}"));
                return identity(hits);
            }
            Err(e) => {
                self.llm.degrade(AgentRole::Rerank, e.to_string());
                return identity(hits);
            }
        };
        let mut remaining: Vec<Option<RetrievalHit>> = hits.into_iter().map(Some).collect();
        let mut ordered = Vec::new();
        for id in answer {
            if let Some(slot) = remaining.iter_mut().find(|h| h.as_ref().is_some_and(|h| h.record.id == id)) {
                ordered.push(slot.take().expect("slot checked"));
            }
        }
        ordered.extend(remaining.into_iter().flatten());
        identity(ordered)
    }

    /// Pass 1 labelling of a resolved incident.
    pub fn label(&self, incident: &IncidentRecord, existing: &[TaxonomyPath]) -> Result<Parsed<LabelProposal>, GatewayError> {
        let existing = if existing.is_empty() {
            "(none)".to_string()
        } else {
            existing.iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n")
        };
        let vars = [
            ("incident_id", incident.id.as_str()),
            ("description", incident.description.trim()),
            ("discussion", incident.oce_discussion.as_deref().unwrap_or("(none)").trim()),
            ("existing", &existing),
        ];
        self.structured(AgentRole::Labelling, "label", &vars, "labelling", parse_label)
    }

    /// Pass 2 refinement of an existing label's description.
    pub fn refine(&self, label: &TaxonomyPath, current: &str, incident: &IncidentRecord) -> Result<Parsed<String>, GatewayError> {
        let label = label.to_string();
        let vars = [
            ("label", label.as_str()),
            ("current", current),
            ("incident_id", incident.id.as_str()),
            ("description", incident.description.trim()),
            ("discussion", incident.oce_discussion.as_deref().unwrap_or("(none)").trim()),
        ];
        self.structured(AgentRole::Refinement, "refine", &vars, "refinement", parse_refinement)
    }

    /// Verification commands mentioned in the discussions of one label.
    pub fn extract(&self, label: &TaxonomyPath, discussions: &[(&str, &str)]) -> Result<Parsed<Vec<CommandDraft>>, GatewayError> {
        let label = label.to_string();
        let text = discussions.iter().map(|(id, d)| format!("[{id}] {}", d.trim())).collect::<Vec<_>>().join("\n");
        let vars = [("label", label.as_str()), ("discussions", text.as_str())];
        self.structured(AgentRole::Extraction, "extract", &vars, "extraction", parse_extraction)
    }
}

/// Inputs of the exploration prompt.
pub struct ExploreInput<'m> {
    pub memory: &'m AgentMemory,
    /// One line per tested hypothesis.
    pub tested: &'m [String],
    pub kb: &'m [crate::kb::KbSnippet],
    pub library: &'m str,
    pub previous: &'m [String],
    pub feedback: &'m [String],
}

/// Inputs of the conclusion prompt, pre-rendered as text sections.
pub struct ConcludeInput<'m> {
    pub memory: &'m AgentMemory,
    pub outcome: &'m str,
    pub confirmed: &'m str,
    pub tested: &'m str,
    pub traversal: &'m str,
}

/// Maps a model's ranking onto `children`. Entries may be full paths or bare
/// labels; anything else is dropped, as are repeats.
pub fn resolve_ranking(children: &[TaxonomyPath], answer: &[String]) -> RankedHypotheses {
    let mut ordered: Vec<TaxonomyPath> = Vec::new();
    let mut dropped = Vec::new();
    for a in answer {
        let a = a.trim();
        let hit = children
            .iter()
            .find(|c| c.to_string() == a || c.label() == a)
            .or_else(|| children.iter().find(|c| c.to_string().eq_ignore_ascii_case(a) || c.label().eq_ignore_ascii_case(a)))
            .or_else(|| a.parse::<TaxonomyPath>().ok().and_then(|p| children.iter().find(|c| **c == p)));
        match hit {
            Some(c) if !ordered.contains(c) => ordered.push(c.clone()),
            Some(_) => {}
            None => dropped.push(a.to_string()),
        }
    }
    let pruned: Vec<TaxonomyPath> = children.iter().filter(|c| !ordered.contains(c)).cloned().collect();
    RankedHypotheses {
        early_stop: ordered.is_empty(),
        ordered,
        pruned,
        note: (!dropped.is_empty()).then(|| format!("dropped unknown labels: {}", dropped.join(", "))),
    }
}
