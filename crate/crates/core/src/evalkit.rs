//! Scoring and accounting over completed sessions: precision, recall and
//! F1, time-to-mitigate statistics, the per-pipeline resolution table,
//! overhead, miss attribution and label agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::Decision;
use crate::engine::{DiagnosisSession, Event};
use crate::gateway::{ModelRates, TokenUsage};
use crate::taxonomy::{Taxonomy, TaxonomyPath};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("{0}")]
    Io(String),
}

/// Granularity labels are compared at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    #[default]
    MainCategory,
    Leaf,
}

impl Level {
    pub fn project(self, path: &TaxonomyPath) -> String {
        match self {
            Level::MainCategory => path.main_category().to_string(),
            Level::Leaf => path.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub incident_id: String,
    pub truth: TaxonomyPath,
    /// Absent when the session did not resolve.
    pub predicted: Option<TaxonomyPath>,
    pub resolving_pipeline: Option<u8>,
    pub usage: TokenUsage,
    pub llm_calls: usize,
    pub verification_secs: f64,
}

impl LabeledPrediction {
    pub fn from_session(session: &DiagnosisSession, truth: TaxonomyPath) -> Self {
        LabeledPrediction {
            incident_id: session.incident.id.clone(),
            truth,
            predicted: session.outcome.prediction().cloned(),
            resolving_pipeline: session.outcome.resolving_pipeline,
            usage: session.usage_totals(),
            llm_calls: session.usage.len(),
            verification_secs: session.verification_secs(),
        }
    }

    pub fn is_correct(&self, level: Level) -> bool {
        self.predicted.as_ref().is_some_and(|p| level.project(p) == level.project(&self.truth))
    }
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub level: Level,
    pub samples: usize,
    pub per_class: Vec<ClassScore>,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub unresolved: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One-vs-rest scores per class, micro scores from pooled counts and macro
/// F1 as the plain mean over classes with support. An unresolved sample is
/// a false negative for its truth class and a false positive for nothing.
pub fn score(preds: &[LabeledPrediction], level: Level) -> Result<MetricReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    #[derive(Default)]
    struct Counts {
        tp: usize,
        fp: usize,
        fn_: usize,
        support: usize,
        predicted: usize,
    }
    let mut by_class: BTreeMap<String, Counts> = BTreeMap::new();
    let mut unresolved = 0;
    for p in preds {
        let truth = level.project(&p.truth);
        by_class.entry(truth.clone()).or_default().support += 1;
        match p.predicted.as_ref().map(|q| level.project(q)) {
            Some(pred) if pred == truth => {
                let c = by_class.get_mut(&truth).expect("inserted");
                c.tp += 1;
                c.predicted += 1;
            }
            Some(pred) => {
                by_class.get_mut(&truth).expect("inserted").fn_ += 1;
                let c = by_class.entry(pred).or_default();
                c.fp += 1;
                c.predicted += 1;
            }
            None => {
                unresolved += 1;
                by_class.get_mut(&truth).expect("inserted").fn_ += 1;
            }
        }
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut per_class = Vec::new();
    for (label, c) in &by_class {
        tp += c.tp;
        fp += c.fp;
        fn_ += c.fn_;
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        per_class.push(ClassScore {
            label: label.clone(),
            precision,
            recall,
            f1: f1(precision, recall),
            support: c.support,
            predicted: c.predicted,
        });
    }
    let supported: Vec<f64> = per_class.iter().filter(|c| c.support > 0).map(|c| c.f1).collect();
    let micro_precision = ratio(tp, tp + fp);
    let micro_recall = ratio(tp, tp + fn_);
    Ok(MetricReport {
        level,
        samples: preds.len(),
        micro_precision,
        micro_recall,
        micro_f1: f1(micro_precision, micro_recall),
        macro_f1: supported.iter().sum::<f64>() / supported.len() as f64,
        per_class,
        unresolved,
    })
}

// ---------------------------------------------------------------------------
// Time to mitigate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtmStats {
    pub median: f64,
    /// Mean after dropping `floor(n / 10)` values from each tail.
    pub trimmed_mean: f64,
}

pub fn ttm_stats(hours: &[f64]) -> Result<TtmStats, EvalError> {
    if hours.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if let Some(bad) = hours.iter().find(|h| !(**h >= 0.0) || !h.is_finite()) {
        return Err(EvalError::InvalidInput(format!("duration {bad} is not a finite non-negative number")));
    }
    let mut v = hours.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
    let cut = n / 10;
    let kept = &v[cut..n - cut];
    Ok(TtmStats { median, trimmed_mean: kept.iter().sum::<f64>() / kept.len() as f64 })
}

// ---------------------------------------------------------------------------
// Pipeline breakdown
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    /// Pipelines included, e.g. "1+2".
    pub pipelines: String,
    /// Sessions that ended in one of these pipelines, averaged over runs.
    pub resolved: f64,
    pub cumulative_pct: f64,
}

/// Cumulative resolution counts for pipelines 1, 1+2 and 1+2+3. Each inner
/// slice holds the resolving pipeline of every session of one run.
pub fn pipeline_breakdown(runs: &[Vec<Option<u8>>]) -> Vec<BreakdownRow> {
    let reps = runs.len().max(1) as f64;
    let total: f64 = runs.iter().map(|r| r.len() as f64).sum::<f64>() / reps;
    (1..=3u8)
        .map(|k| {
            let resolved = runs
                .iter()
                .map(|r| r.iter().filter(|p| p.is_some_and(|p| p <= k)).count() as f64)
                .sum::<f64>()
                / reps;
            let pipelines = (1..=k).map(|i| i.to_string()).collect::<Vec<_>>().join("+");
            BreakdownRow { pipelines, resolved, cumulative_pct: if total > 0.0 { 100.0 * resolved / total } else { 0.0 } }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Overhead
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub model: String,
    pub sessions: usize,
    pub mean_llm_calls: f64,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    /// Unrounded USD per incident.
    pub cost_per_incident: f64,
    /// Rounded half-up to three decimals.
    pub reported_cost: f64,
    pub mean_verification_secs: f64,
}

/// Per-incident averages priced at `rates`.
pub fn overhead(preds: &[LabeledPrediction], model: &str, rates: &ModelRates) -> OverheadReport {
    let n = preds.len().max(1) as f64;
    let mean = |f: &dyn Fn(&LabeledPrediction) -> f64| preds.iter().map(f).sum::<f64>() / n;
    let mean_input_tokens = mean(&|p| p.usage.input_tokens as f64);
    let mean_output_tokens = mean(&|p| p.usage.output_tokens as f64);
    let cost_per_incident = rates.price(mean_input_tokens, mean_output_tokens);
    OverheadReport {
        model: model.to_string(),
        sessions: preds.len(),
        mean_llm_calls: mean(&|p| p.llm_calls as f64),
        mean_input_tokens,
        mean_output_tokens,
        cost_per_incident,
        reported_cost: crate::gateway::reported_cost(cost_per_incident),
        mean_verification_secs: mean(&|p| p.verification_secs),
    }
}

// ---------------------------------------------------------------------------
// Miss attribution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissCause {
    /// A different label was confirmed first.
    WrongConfirmed,
    /// Nothing was confirmed.
    Unresolved,
    BudgetExceeded,
    Degraded,
}

/// What the trace says about the true label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthFate {
    NotInTaxonomy,
    /// The truth was tested and not confirmed.
    Rejected,
    /// The truth, or a node above it, was ranked out.
    Pruned,
    /// The search stopped at a node above the truth.
    EarlyStopped,
    /// The truth was confirmed but another cause came first.
    ConfirmedNotFirst,
    /// The session ended before the taxonomy search reached the truth.
    NotExamined,
    Unexplained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub incident_id: String,
    pub truth: TaxonomyPath,
    pub predicted: Option<TaxonomyPath>,
    pub cause: MissCause,
    pub truth_fate: TruthFate,
    /// Trace event that shows the fate, when there is one.
    pub event_seq: Option<usize>,
}

/// Explains a miss from the session trace.
pub fn attribute(session: &DiagnosisSession, truth: &TaxonomyPath, taxonomy: &Taxonomy) -> Attribution {
    let trace = &session.trace;
    let find = |f: &dyn Fn(&Event) -> bool| trace.iter().find(|e| f(&e.event)).map(|e| e.seq);
    let predicted = session.outcome.prediction().cloned();
    let cause = if find(&|e| matches!(e, Event::BudgetExceeded { .. })).is_some() {
        MissCause::BudgetExceeded
    } else if predicted.is_some() {
        MissCause::WrongConfirmed
    } else if find(&|e| matches!(e, Event::Degraded { .. })).is_some() {
        MissCause::Degraded
    } else {
        MissCause::Unresolved
    };
    let above = |node: &Option<TaxonomyPath>| node.as_ref().map_or(true, |n| n.is_prefix_of(truth) && n != truth);
    let (truth_fate, event_seq) = if !taxonomy.contains(truth) {
        (TruthFate::NotInTaxonomy, find(&|e| matches!(e, Event::HypothesisProposed { known: false, .. })))
    } else if let Some(seq) = find(&|e| matches!(e, Event::VerdictReached { path, decision: Decision::Confirmed, .. } if path == truth)) {
        (TruthFate::ConfirmedNotFirst, Some(seq))
    } else if let Some(seq) = find(&|e| matches!(e, Event::VerdictReached { path, .. } if path == truth)) {
        (TruthFate::Rejected, Some(seq))
    } else if let Some(seq) = find(&|e| matches!(e, Event::BranchPruned { path, .. } if path.is_prefix_of(truth))) {
        (TruthFate::Pruned, Some(seq))
    } else if let Some(seq) = find(&|e| matches!(e, Event::EarlyStop { node, .. } if above(node))) {
        (TruthFate::EarlyStopped, Some(seq))
    } else if let Some(seq) = find(&|e| matches!(e, Event::PipelineFinished { pipeline: 1, resolved: true, .. })) {
        (TruthFate::NotExamined, Some(seq))
    } else if let Some(seq) = find(&|e| matches!(e, Event::BudgetExceeded { .. } | Event::Degraded { .. })) {
        (TruthFate::NotExamined, Some(seq))
    } else {
        (TruthFate::Unexplained, None)
    };
    Attribution { incident_id: session.incident.id.clone(), truth: truth.clone(), predicted, cause, truth_fate, event_seq }
}

// ---------------------------------------------------------------------------
// Label agreement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub compared: usize,
    pub agreed: usize,
    pub rate: f64,
    pub only_in_first: Vec<String>,
    pub only_in_second: Vec<String>,
    pub disagreements: Vec<(String, String, String)>,
}

/// Compares two id → label maps at `level`.
pub fn label_agreement(a: &BTreeMap<String, TaxonomyPath>, b: &BTreeMap<String, TaxonomyPath>, level: Level) -> Agreement {
    let mut agreed = 0;
    let mut disagreements = Vec::new();
    for (id, la) in a {
        if let Some(lb) = b.get(id) {
            if level.project(la) == level.project(lb) {
                agreed += 1;
            } else {
                disagreements.push((id.clone(), la.to_string(), lb.to_string()));
            }
        }
    }
    let ka: BTreeSet<&String> = a.keys().collect();
    let kb: BTreeSet<&String> = b.keys().collect();
    let compared = ka.intersection(&kb).count();
    Agreement {
        compared,
        agreed,
        rate: ratio(agreed, compared),
        only_in_first: ka.difference(&kb).map(|s| s.to_string()).collect(),
        only_in_second: kb.difference(&ka).map(|s| s.to_string()).collect(),
        disagreements,
    }
}

/// Reads a two-column `id,label` CSV file with a header row.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, TaxonomyPath>, EvalError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        let (Some(id), Some(label)) = (row.get(0), row.get(1)) else {
            return Err(EvalError::InvalidInput(format!("{}: expected id,label", path.display())));
        };
        let label = label.parse().map_err(|e| EvalError::InvalidInput(format!("{id}: {e}")))?;
        out.insert(id.to_string(), label);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

pub fn predictions_csv(preds: &[LabeledPrediction]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["incident_id", "truth", "predicted", "resolving_pipeline", "llm_calls", "input_tokens", "output_tokens", "verification_secs"])
        .expect("in-memory write");
    for p in preds {
        w.write_record([
            p.incident_id.clone(),
            p.truth.to_string(),
            p.predicted.as_ref().map(|q| q.to_string()).unwrap_or_default(),
            p.resolving_pipeline.map(|x| x.to_string()).unwrap_or_default(),
            p.llm_calls.to_string(),
            p.usage.input_tokens.to_string(),
            p.usage.output_tokens.to_string(),
            format!("{:.3}", p.verification_secs),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn metrics_table(m: &MetricReport) -> String {
    let width = m.per_class.iter().map(|c| c.label.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>9}  {:>6}  {:>6}  {:>7}", "class", "precision", "recall", "f1", "support");
    for c in &m.per_class {
        let _ = writeln!(out, "{:<width$}  {:>9.3}  {:>6.3}  {:>6.3}  {:>7}", c.label, c.precision, c.recall, c.f1, c.support);
    }
    let _ = writeln!(out, "micro F1 {:.3}  macro F1 {:.3}  samples {}  unresolved {}", m.micro_f1, m.macro_f1, m.samples, m.unresolved);
    out
}

pub fn breakdown_table(rows: &[BreakdownRow]) -> String {
    let mut out = String::from("pipelines  resolved  cumulative\n");
    for r in rows {
        let _ = writeln!(out, "{:<9}  {:>8.1}  {:>9.1}%", r.pipelines, r.resolved, r.cumulative_pct);
    }
    out
}
