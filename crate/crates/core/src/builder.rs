//! Offline construction: two-pass taxonomy building from resolved incidents
//! and troubleshooting guides, and extraction of verification-script drafts
//! from on-call discussions.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::agents::{Agents, Parsed};
use crate::corpus::IncidentRecord;
use crate::gateway::{GatewayError, Stage};
use crate::taxonomy::{Origin, Taxonomy, TaxonomyPath, UpsertOutcome};
use crate::verify::{Allowlist, ScriptLevel, ScriptStatus, VerificationScript};

/// A troubleshooting guide that names the fault it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsgDocument {
    pub id: String,
    pub label: TaxonomyPath,
    pub title: String,
    #[serde(default)]
    pub text: String,
    pub created_at: DateTime<Utc>,
}

pub fn read_tsgs(path: &Path) -> Result<Vec<TsgDocument>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    /// Pass-1 label per incident id.
    pub labelled: Vec<(String, TaxonomyPath)>,
    /// Nodes created, including auto-created intermediate nodes.
    pub added: Vec<TaxonomyPath>,
    pub refined: Vec<TaxonomyPath>,
    /// Incidents or guides that produced nothing, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Runs both passes over `incidents` (oldest first) and then folds in `tsgs`.
///
/// Pass 1 asks the labelling agent for a three-level label per incident.
/// Pass 2 looks each label up: an existing node has its description refined
/// with the incident, a missing one is added with the incident's creation
/// time.
pub fn build_taxonomy(
    taxonomy: &mut Taxonomy,
    incidents: &[IncidentRecord],
    tsgs: &[TsgDocument],
    agents: &Agents<'_>,
) -> Result<BuildReport, GatewayError> {
    agents.llm.set_stage(Stage::Offline);
    let mut ordered: Vec<&IncidentRecord> = incidents.iter().collect();
    ordered.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));

    let mut report = BuildReport::default();
    let mut proposals = Vec::new();
    for inc in &ordered {
        let existing = taxonomy.leaves();
        match agents.label(inc, &existing)? {
            Parsed::Ok(p) => {
                let path: TaxonomyPath = p.label.parse().expect("parser validated the label");
                report.labelled.push((inc.id.clone(), path.clone()));
                proposals.push((*inc, path, p.description));
            }
            Parsed::Malformed(e) => report.skipped.push((inc.id.clone(), format!("MalformedOutput: {e}"))),
        }
    }

    for (inc, path, description) in proposals {
        if let Some(node) = taxonomy.lookup(&path) {
            let current = node.description.clone();
            match agents.refine(&path, &current, inc)? {
                Parsed::Ok(text) => {
                    if text != current {
                        taxonomy.upsert_label(&path, &text, Origin::IncidentDerived, inc.created_at).expect("path exists");
                        report.refined.push(path);
                    }
                }
                Parsed::Malformed(e) => report.skipped.push((inc.id.clone(), format!("refinement MalformedOutput: {e}"))),
            }
            continue;
        }
        let description = if description.is_empty() { inc.description.trim().to_string() } else { description };
        match taxonomy.upsert_label(&path, &description, Origin::IncidentDerived, inc.created_at) {
            Ok(UpsertOutcome::Added { auto_created }) => {
                report.added.extend(auto_created);
                report.added.push(path);
            }
            Ok(UpsertOutcome::Refined { .. }) => unreachable!("lookup said absent"),
            Err(e) => report.skipped.push((inc.id.clone(), e.to_string())),
        }
    }

    for tsg in tsgs {
        if taxonomy.contains(&tsg.label) {
            continue;
        }
        let description = format!("{}. {}", tsg.title.trim_end_matches('.'), tsg.text.trim()).trim().to_string();
        match taxonomy.upsert_label(&tsg.label, &description, Origin::TsgDerived, tsg.created_at) {
            Ok(UpsertOutcome::Added { auto_created }) => {
                report.added.extend(auto_created);
                report.added.push(tsg.label.clone());
            }
            Ok(UpsertOutcome::Refined { .. }) => unreachable!("contains said absent"),
            Err(e) => report.skipped.push((tsg.id.clone(), e.to_string())),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub drafts: Vec<VerificationScript>,
    pub skipped: Vec<(TaxonomyPath, String)>,
}

fn slug(path: &TaxonomyPath) -> String {
    let mut s: String = path
        .label()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    s.trim_matches('_').to_string()
}

/// Drafts verification scripts for every labelled group of `records`.
///
/// Drafts start as [`ScriptStatus::Draft`]; drafts whose program is not on
/// `allowlist` are [`ScriptStatus::Quarantined`].
pub fn extract_instructions(
    records: &[IncidentRecord],
    agents: &Agents<'_>,
    allowlist: &Allowlist,
) -> Result<ExtractionReport, GatewayError> {
    agents.llm.set_stage(Stage::Offline);
    let mut groups: BTreeMap<String, (TaxonomyPath, Vec<&IncidentRecord>)> = BTreeMap::new();
    for r in records {
        if let Some(label) = &r.root_cause {
            groups.entry(label.to_string()).or_insert_with(|| (label.clone(), Vec::new())).1.push(r);
        }
    }
    let mut report = ExtractionReport::default();
    for (_, (label, mut group)) in groups {
        group.sort_by(|a, b| a.id.cmp(&b.id));
        let discussions: Vec<(&str, &str)> = group
            .iter()
            .filter_map(|r| r.oce_discussion.as_deref().filter(|d| !d.trim().is_empty()).map(|d| (r.id.as_str(), d)))
            .collect();
        if discussions.is_empty() {
            report.skipped.push((label, "no on-call discussion to extract from".into()));
            continue;
        }
        let drafts = match agents.extract(&label, &discussions)? {
            Parsed::Ok(d) if d.is_empty() => {
                report.skipped.push((label, "no extractable commands".into()));
                continue;
            }
            Parsed::Ok(d) => d,
            Parsed::Malformed(e) => {
                report.skipped.push((label, format!("MalformedOutput: {e}")));
                continue;
            }
        };
        let base = slug(&label);
        for (i, d) in drafts.into_iter().enumerate() {
            let script = VerificationScript {
                id: if i == 0 { format!("{base}_draft") } else { format!("{base}_draft_{}", i + 1) },
                bound_path: label.clone(),
                level: if label.depth() == 3 { ScriptLevel::Leaf } else { ScriptLevel::Internal },
                status: if allowlist.allows(&d.argv) { ScriptStatus::Draft } else { ScriptStatus::Quarantined },
                command: d.argv,
                timeout_secs: 60.0,
                success_rule: d.success_rule,
            };
            match script.validate() {
                Ok(()) => report.drafts.push(script),
                Err(e) => report.skipped.push((label.clone(), e.to_string())),
            }
        }
    }
    Ok(report)
}
