//! A rule-based stand-in for the LLM, used to record replay scripts for the
//! synthetic suite and to drive ablation runs.
//!
//! The expert knows which faults are injected for each incident and which
//! leaves' checks react to which faults. It never looks at an incident's
//! ground-truth label: rankings come from fault signatures, verdicts from
//! the collected evidence.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use regex::Regex;
use serde_json::json;

use crate::gateway::{estimate_tokens, BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayError, TokenUsage};
use crate::taxonomy::{Taxonomy, TaxonomyPath, AUTO_CREATED_DESCRIPTION};
use crate::verify::{classify, CommandTable, Environment, Outcome, Scenario, ScriptRegistry, SimulatedEnvironment, SuccessRule};

/// Which faults a leaf's checks react to.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LeafSignature {
    /// The fault the leaf's own check is built for (first fault entry of
    /// its first script's command).
    pub primary: Option<String>,
    pub detects: BTreeSet<String>,
}

/// Signatures of every leaf, found by running each leaf's scripts in the
/// simulated environment under each single fault.
pub fn leaf_signatures(taxonomy: &Taxonomy, registry: &ScriptRegistry, table: &CommandTable) -> BTreeMap<TaxonomyPath, LeafSignature> {
    let tags = table.fault_tags();
    let mut out = BTreeMap::new();
    for leaf in taxonomy.leaves() {
        let node = taxonomy.lookup(&leaf).expect("leaf exists");
        let scripts: Vec<_> = node.verification.iter().filter_map(|id| registry.get(id)).collect();
        let mut sig = LeafSignature {
            primary: scripts.first().and_then(|s| table.lookup(&s.command)).and_then(|e| e.faults.first()).map(|f| f.tag.clone()),
            ..LeafSignature::default()
        };
        for tag in &tags {
            let mut env = SimulatedEnvironment::new(table.clone(), Scenario::with_faults(&[tag.as_str()]));
            let fails = scripts.iter().any(|s| {
                let raw = env.execute(&s.command, Duration::from_secs_f64(s.timeout_secs));
                classify(&s.success_rule, raw.exit_code, &raw.stdout, raw.timed_out) == Outcome::Fail
            });
            if fails {
                sig.detects.insert(tag.clone());
            }
        }
        out.insert(leaf, sig);
    }
    out
}

fn section<'t>(text: &'t str, heading: &str) -> &'t str {
    let marker = format!("## {heading}\n");
    let Some(start) = text.find(&marker) else { return "" };
    let body = &text[start + marker.len()..];
    match body.find("\n## ") {
        Some(end) => &body[..end],
        None => body,
    }
    .trim_end()
}

fn incident_id(text: &str) -> Option<&str> {
    section(text, "Incident").lines().next().and_then(|l| l.strip_prefix("id: ")).map(str::trim)
}

fn fenced(v: serde_json::Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(&v).expect("json"))
}

/// Rule-based expert backend.
pub struct SimulatedExpert {
    faults: BTreeMap<String, Vec<String>>,
    signatures: BTreeMap<TaxonomyPath, LeafSignature>,
    catalog: BTreeMap<Vec<String>, SuccessRule>,
    root_cause_line: Regex,
    backticks: Regex,
}

impl SimulatedExpert {
    /// `faults` maps incident ids to their injected faults, most important
    /// first.
    pub fn new(
        faults: BTreeMap<String, Vec<String>>,
        taxonomy: &Taxonomy,
        registry: &ScriptRegistry,
        table: &CommandTable,
    ) -> Self {
        SimulatedExpert {
            faults,
            signatures: leaf_signatures(taxonomy, registry, table),
            catalog: registry.scripts().iter().map(|s| (s.command.clone(), s.success_rule.clone())).collect(),
            root_cause_line: Regex::new(r"(?im)^\s*root cause:\s*(.+?)\s*$").expect("static regex"),
            backticks: Regex::new(r"`([^`]+)`").expect("static regex"),
        }
    }

    pub fn shared(self) -> Arc<dyn ChatBackend> {
        Arc::new(self)
    }

    fn rank(&self, user: &str) -> String {
        let present: &[String] = incident_id(user).and_then(|id| self.faults.get(id)).map(Vec::as_slice).unwrap_or(&[]);
        let candidates: Vec<TaxonomyPath> = section(user, "Candidate sub-categories")
            .lines()
            .filter_map(|l| l.strip_prefix("- "))
            .filter_map(|l| l.split_once(": ").map(|(p, _)| p).or(Some(l)))
            .filter_map(|p| p.parse().ok())
            .collect();
        let mut keyed: Vec<((u8, usize), &TaxonomyPath)> = Vec::new();
        let mut irrelevant = Vec::new();
        for c in &candidates {
            let under: Vec<&LeafSignature> = self.signatures.iter().filter(|(l, _)| c.is_prefix_of(l)).map(|(_, s)| s).collect();
            let primary = present.iter().position(|f| under.iter().any(|s| s.primary.as_ref() == Some(f)));
            let secondary = present.iter().position(|f| under.iter().any(|s| s.detects.contains(f)));
            match (primary, secondary) {
                (Some(i), _) => keyed.push(((0, i), c)),
                (None, Some(i)) => keyed.push(((1, i), c)),
                (None, None) => irrelevant.push(c),
            }
        }
        keyed.sort_by_key(|(k, _)| *k);
        let mut ordered: Vec<String> = keyed.into_iter().map(|(_, c)| c.to_string()).collect();
        let level = candidates.first().map(TaxonomyPath::depth).unwrap_or(0);
        if (level == 1 || (level == 3 && !ordered.is_empty())) && !irrelevant.is_empty() {
            ordered.push(irrelevant[0].to_string());
        }
        fenced(json!(ordered))
    }

    fn reflect(&self, user: &str) -> String {
        let hypothesis = section(user, "Hypothesis").lines().next().unwrap_or("");
        let hypothesis = hypothesis.split_once(": ").map(|(p, _)| p).unwrap_or(hypothesis);
        let mut own = Vec::new();
        let mut failing = Vec::new();
        for line in section(user, "Collected evidence").lines() {
            let Some(rest) = line.strip_prefix('[') else { continue };
            let Some((id, rest)) = rest.split_once("] ") else { continue };
            let Some((path, rest)) = rest.split_once(" script=") else { continue };
            if path != hypothesis {
                continue;
            }
            own.push(id.to_string());
            if rest.contains(" outcome=Fail ") {
                failing.push(id.to_string());
            }
        }
        let v = if !failing.is_empty() {
            json!({"decision": "Confirmed", "rationale": format!("checks for {hypothesis} failed"), "evidence_ids": failing})
        } else if !own.is_empty() {
            json!({"decision": "Rejected", "rationale": format!("checks for {hypothesis} passed"), "evidence_ids": own})
        } else {
            json!({"decision": "Inconclusive", "rationale": "no evidence for this hypothesis", "evidence_ids": []})
        };
        fenced(v)
    }

    fn rerank(&self, user: &str) -> String {
        let ids: Vec<&str> = section(user, "Candidates")
            .lines()
            .filter_map(|l| l.strip_prefix("- "))
            .filter_map(|l| l.split_once(" (similarity").map(|(id, _)| id))
            .collect();
        fenced(json!(ids))
    }

    fn explore(&self, user: &str) -> String {
        let kb: Vec<(&str, &str)> = section(user, "Knowledge base")
            .lines()
            .filter_map(|l| l.strip_prefix("- ["))
            .filter_map(|l| l.split_once("] "))
            .collect();
        let library: Vec<&str> = section(user, "Troubleshooting library")
            .lines()
            .filter_map(|l| l.split_once(". ").filter(|(n, _)| n.chars().all(|c| c.is_ascii_digit())).map(|(_, s)| s))
            .collect();
        let with_feedback = !section(user, "User feedback").trim().starts_with("(none)");
        let first_sentence = |t: &str| t.split_inclusive(". ").next().unwrap_or(t).trim().to_string();
        let (hypotheses, suggestions): (Vec<String>, Vec<String>) = if with_feedback {
            let rounds = section(user, "User feedback").lines().count();
            let picks: Vec<&str> = library.iter().skip(2 * (rounds - 1)).take(2).copied().collect();
            (
                picks.iter().map(|s| format!("environment issue not covered by the taxonomy: {}", s.trim_end_matches('.'))).collect(),
                picks.iter().map(|s| s.to_string()).collect(),
            )
        } else {
            (
                kb.iter().map(|(id, _)| format!("fault described in {id}")).collect(),
                kb.iter().map(|(id, t)| format!("[{id}] {}", first_sentence(t))).collect(),
            )
        };
        fenced(json!({"hypotheses": hypotheses, "suggestions": suggestions}))
    }

    fn conclude(&self, user: &str) -> String {
        let confirmed: Vec<&str> = section(user, "Confirmed root causes")
            .lines()
            .filter_map(|l| l.split_once(". ").map(|(_, r)| r))
            .map(|r| r.split(" [").next().unwrap_or(r))
            .collect();
        match confirmed.split_first() {
            None => "No root cause could be confirmed. The incident needs review by the support team.".into(),
            Some((first, [])) => format!("Root cause: {first}."),
            Some((first, rest)) => format!("Primary root cause: {first}. Related findings: {}.", rest.join(", ")),
        }
    }

    fn summarize(&self, user: &str) -> String {
        let body: Vec<&str> = section(user, "Incident").lines().skip(1).collect();
        let text = body.join(" ").split_whitespace().collect::<Vec<_>>().join(" ");
        text.chars().take(600).collect()
    }

    fn label(&self, user: &str) -> String {
        match self.root_cause_line.captures(section(user, "Discussion")) {
            Some(c) => {
                let desc = section(user, "Incident").lines().nth(1).unwrap_or("").trim().to_string();
                fenced(json!({"label": c[1].trim(), "description": desc}))
            }
            None => "The discussion does not name a root cause.".into(),
        }
    }

    fn refine(&self, user: &str) -> String {
        let current = section(user, "Current description").trim();
        let description = if current.is_empty() || current == AUTO_CREATED_DESCRIPTION {
            section(user, "New incident").lines().nth(1).unwrap_or("").trim().to_string()
        } else {
            current.to_string()
        };
        fenced(json!({"description": description}))
    }

    fn extract(&self, user: &str) -> String {
        let mut seen = BTreeSet::new();
        let mut commands = Vec::new();
        for c in self.backticks.captures_iter(section(user, "Discussions")) {
            let argv: Vec<String> = c[1].split_whitespace().map(String::from).collect();
            if argv.is_empty() || !seen.insert(argv.clone()) {
                continue;
            }
            let rule = self.catalog.get(&argv).cloned().unwrap_or(SuccessRule::ExitZero);
            commands.push(json!({"argv": argv, "success_rule": rule}));
        }
        fenced(json!({"commands": commands}))
    }
}

impl ChatBackend for SimulatedExpert {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let user = req.messages.get(1).map(|m| m.content.as_str()).unwrap_or("");
        let text = match req.response_grammar.as_deref() {
            Some("ranking") => self.rank(user),
            Some("verdict") => self.reflect(user),
            Some("rerank") => self.rerank(user),
            Some("exploration") => self.explore(user),
            Some("conclusion") => self.conclude(user),
            Some("summary") => self.summarize(user),
            Some("labelling") => self.label(user),
            Some("refinement") => self.refine(user),
            Some("extraction") => self.extract(user),
            other => return Err(GatewayError::InvalidRequest(format!("simulated expert has no rule for grammar {other:?}"))),
        };
        let usage = TokenUsage { input_tokens: req.estimated_input_tokens(), output_tokens: estimate_tokens(&text) };
        Ok(ChatResponse { text, usage, backend: BackendKind::Simulated })
    }
}
