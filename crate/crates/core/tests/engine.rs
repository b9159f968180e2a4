mod common;

use common::*;
use infradiag::agents::Decision;
use infradiag::corpus::HashingEmbedder;
use infradiag::engine::{
    read_trace, write_trace, EngineMode, Event, FeedbackResponse, NoFeedback, OutcomeStatus, ScriptedFeedback, Ticket,
};

const PATHS: &[&str] = &["A", "A.x", "A.x.1", "A.x.2", "A.y", "B", "B.z", "B.z.1", "C"];

fn small(verdicts: &[(&str, Decision)]) -> RandomCase {
    case_from(
        PATHS,
        &[("", &["B", "A", "C"]), ("A", &["A.x"]), ("A.x", &["A.x.2", "A.x.1"]), ("B", &["B.z"]), ("B.z", &["B.z.1"])],
        verdicts,
    )
}

fn kinds(trace: &[infradiag::engine::TraceEvent]) -> Vec<String> {
    trace
        .iter()
        .map(|e| serde_json::to_value(&e.event).unwrap()["type"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn search_matches_reference_walk() {
    for seed in 0..200 {
        let case = random_case(seed, 40);
        let (entered, r) = reference_dfs(&case.taxonomy, &case.plan);
        let run = run_case(&case);
        assert_eq!(run.entered, entered, "seed {seed}");
        assert_eq!(run.r, r, "seed {seed}");
        assert!(run.violations.is_empty(), "seed {seed}: {:?}", run.violations);
        assert_eq!(run.final_depth, 0);
    }
}

#[test]
fn search_explores_all_branches_and_prunes() {
    let case = small(&[("A.x.1", Decision::Confirmed), ("A.x.2", Decision::Rejected), ("B.z.1", Decision::Confirmed), ("C", Decision::Confirmed)]);
    let (s, _) = FullRun::new(&case).diagnose(&incident("i", "gpu job crashed"), &mut NoFeedback);
    assert_eq!(s.outcome.resolving_pipeline, Some(2));
    let r: Vec<String> = s.outcome.root_causes().iter().map(|p| p.to_string()).collect();
    assert_eq!(r, ["B.z.1", "A.x.1", "C"]);
    assert_eq!(s.outcome.prediction().unwrap().to_string(), "B.z.1");
    // A.y is never ranked at A.
    let pruned: Vec<String> = s
        .trace
        .iter()
        .filter_map(|e| match &e.event {
            Event::BranchPruned { path, .. } => Some(path.to_string()),
            _ => None,
        })
        .collect();
    assert_eq!(pruned, ["A.y"]);
    assert_eq!(s.stats.backtracks + 1, s.stats.nodes_entered);
    assert!(s.report.starts_with("Incident i: RESOLVED by pipeline 2\n"));
    assert!(s.report.contains("Scripted conclusion."));
}

#[test]
fn early_exit_stops_at_first_confirmed_leaf() {
    let case = small(&[("A.x.1", Decision::Confirmed), ("B.z.1", Decision::Confirmed)]);
    let mut run = FullRun::new(&case);
    run.config.early_exit = true;
    let (s, _) = run.diagnose(&incident("i", "gpu job crashed"), &mut NoFeedback);
    let r: Vec<String> = s.outcome.root_causes().iter().map(|p| p.to_string()).collect();
    assert_eq!(r, ["B.z.1"]);
    assert!(!s.trace.iter().any(|e| matches!(&e.event, Event::NodeEntered { path: Some(p), .. } if p.to_string() == "A")));
    assert_eq!(s.memory.depth(), 0);
}

#[test]
fn malformed_ranking_is_an_early_stop() {
    let mut case = small(&[("B.z.1", Decision::Confirmed)]);
    case.plan.rankings.remove("B");
    let (s, _) = FullRun::new(&case).diagnose(&incident("i", "gpu job crashed"), &mut NoFeedback);
    let stop = s.trace.iter().find_map(|e| match &e.event {
        Event::EarlyStop { node, note } => Some((node.clone(), note.clone())),
        _ => None,
    });
    let (node, note) = stop.unwrap();
    assert_eq!(node.unwrap().to_string(), "B");
    let note = note.unwrap();
    assert!(note.starts_with("MalformedOutput"), "{note}");
    assert!(s.outcome.ticket().is_some() || matches!(s.outcome.status, OutcomeStatus::Advised { .. }));
}

#[test]
fn retrieval_resolves_before_taxonomy_search() {
    let case = small(&[("A.x.1", Decision::Confirmed)]);
    let mut run = FullRun::new(&case);
    let e = HashingEmbedder::default();
    run.corpus.ingest(labelled("old-1", "nccl timeout on rank 3 during allreduce", "A.x.1"), &e).unwrap();
    run.corpus.ingest(labelled("old-2", "nccl timeout on rank 5 during allreduce", "A.x.2"), &e).unwrap();
    run.corpus.ingest(labelled("old-3", "disk quota exceeded on home", "C"), &e).unwrap();
    let (s, llm) = run.diagnose(&incident("new", "nccl timeout on rank 3 during allreduce"), &mut NoFeedback);
    assert_eq!(s.outcome.resolving_pipeline, Some(1));
    assert_eq!(s.outcome.root_causes()[0].to_string(), "A.x.1");
    let k = kinds(&s.trace);
    assert!(!k.contains(&"node_entered".to_string()));
    let accepted = s.trace.iter().find_map(|e| match &e.event {
        Event::RetrievalCompleted { accepted, .. } => Some(accepted.clone()),
        _ => None,
    });
    assert_eq!(accepted.unwrap(), ["old-1", "old-2"]);
    // rerank, two reflections, conclusion
    assert_eq!(llm.ledger.calls(), 4);
    assert_eq!(s.memory.depth(), 0);
}

#[test]
fn retrieval_miss_falls_through_without_rerank() {
    let case = small(&[("B.z.1", Decision::Confirmed)]);
    let mut run = FullRun::new(&case);
    let e = HashingEmbedder::default();
    run.corpus.ingest(labelled("old", "disk quota exceeded on home directory", "C"), &e).unwrap();
    run.corpus.ingest(labelled("odd", "nccl timeout", "Z.q.r"), &e).unwrap();
    let (s, llm) = run.diagnose(&incident("new", "disk quota exceeded on home directory"), &mut NoFeedback);
    // C is rejected by its passing check in pipeline 1, then found nowhere else but B.z.1.
    assert_eq!(s.outcome.resolving_pipeline, Some(2));
    assert!(llm.ledger.entries().iter().all(|e| e.role != infradiag::gateway::AgentRole::Rerank));
    let proposed: Vec<(String, bool)> = s
        .trace
        .iter()
        .filter_map(|e| match &e.event {
            Event::HypothesisProposed { path, known, .. } => Some((path.to_string(), *known)),
            _ => None,
        })
        .collect();
    assert_eq!(proposed, [("C".to_string(), true)]);

    let mut strict = FullRun::new(&case);
    strict.corpus.ingest(labelled("odd", "disk quota exceeded on home directory", "Z.q.r"), &e).unwrap();
    let (s, _) = strict.diagnose(&incident("new", "disk quota exceeded on home directory"), &mut NoFeedback);
    assert!(s.trace.iter().any(|e| matches!(&e.event, Event::HypothesisProposed { known: false, .. })));
}

#[test]
fn exclude_self_skips_own_record() {
    let case = small(&[("A.x.1", Decision::Confirmed)]);
    let mut run = FullRun::new(&case);
    run.config.exclude_self = true;
    let e = HashingEmbedder::default();
    let me = labelled("me", "nccl timeout on rank 3 during allreduce", "A.x.1");
    run.corpus.ingest(me.clone(), &e).unwrap();
    let (s, _) = run.diagnose(&me, &mut NoFeedback);
    assert_eq!(s.outcome.resolving_pipeline, Some(2));
}

fn unresolvable() -> RandomCase {
    small(&[("A.x.1", Decision::Rejected), ("B.z.1", Decision::Rejected)])
}

#[test]
fn exploration_accepts_a_suggestion() {
    let case = unresolvable();
    let mut fb = ScriptedFeedback::new(3, [FeedbackResponse::Accept { index: 1 }]);
    let (s, _) = FullRun::new(&case).diagnose(&incident("i", "job stuck"), &mut fb);
    match &s.outcome.status {
        OutcomeStatus::Advised { accepted, suggestions } => {
            assert_eq!(accepted, "check quotas");
            assert_eq!(suggestions.len(), 2);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(s.outcome.resolving_pipeline, Some(3));
    assert!(s.report.starts_with("Incident i: ADVISED"));
}

#[test]
fn feedback_rounds_then_decline_escalate_with_ticket() {
    let case = unresolvable();
    let mut fb = ScriptedFeedback::new(
        5,
        [FeedbackResponse::Feedback { text: "tried restart".into() }, FeedbackResponse::Feedback { text: "quota ok".into() }],
    );
    let (s, _) = FullRun::new(&case).diagnose(&incident("i", "job stuck"), &mut fb);
    let t = s.outcome.ticket().expect("escalated");
    assert_eq!(t.status, "UNRESOLVED");
    assert_eq!(t.suggestion_rounds.len(), 3);
    assert_eq!(t.feedback, ["tried restart", "quota ok"]);
    let tested: Vec<String> = t.tested_hypotheses.iter().map(|h| h.path.to_string()).collect();
    assert_eq!(tested, ["B.z.1", "A.x.2", "A.x.1", "C"]);
    assert!(t.tested_hypotheses.iter().all(|h| !h.evidence.is_empty()));
    let json = serde_json::to_string(t).unwrap();
    let back: Ticket = serde_json::from_str(&json).unwrap();
    assert_eq!(&back, t);
    assert!(s.report.starts_with("Incident i: UNRESOLVED"));
}

#[test]
fn zero_rounds_escalates_without_suggestions() {
    let case = unresolvable();
    let mut fb = ScriptedFeedback::new(0, []);
    let (s, _) = FullRun::new(&case).diagnose(&incident("i", "job stuck"), &mut fb);
    assert!(s.outcome.ticket().unwrap().suggestion_rounds.is_empty());
    assert!(!kinds(&s.trace).contains(&"suggestions_offered".to_string()));
}

#[test]
fn taxonomy_only_escalates_directly() {
    let case = unresolvable();
    let mut run = FullRun::new(&case);
    run.config.mode = EngineMode::TaxonomyOnly;
    let (s, _) = run.diagnose(&incident("i", "job stuck"), &mut ScriptedFeedback::new(3, []));
    assert!(s.outcome.ticket().is_some());
    assert!(!kinds(&s.trace).contains(&"kb_retrieved".to_string()));
}

#[test]
fn budget_exhaustion_is_recorded_and_escalates() {
    let case = small(&[("A.x.1", Decision::Confirmed)]);
    let mut run = FullRun::new(&case);
    run.budget = 2;
    let (s, llm) = run.diagnose(&incident("i", "job stuck"), &mut NoFeedback);
    assert!(s.trace.iter().any(|e| matches!(e.event, Event::BudgetExceeded { pipeline: 2, budget: 2 })));
    assert!(s.outcome.ticket().is_some());
    assert_eq!(llm.ledger.calls(), 2);
    assert_eq!(s.memory.depth(), 0);
}

#[test]
fn trace_is_ordered_and_round_trips() {
    let case = small(&[("A.x.1", Decision::Confirmed)]);
    let (s, _) = FullRun::new(&case).diagnose(&incident("i", "job stuck"), &mut NoFeedback);
    assert!(s.trace.iter().enumerate().all(|(i, e)| e.seq == i));
    assert!(s.trace.windows(2).all(|w| w[0].ts <= w[1].ts));
    let k = kinds(&s.trace);
    assert_eq!(k.first().unwrap(), "session_started");
    assert_eq!(k.last().unwrap(), "session_finished");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    write_trace(&path, &s.trace).unwrap();
    assert_eq!(read_trace(&path).unwrap(), s.trace);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), s.trace_jsonl());
    // 250 ms per check: root children B, A, C plus B.z, B.z.1, A.x, A.x.2, A.x.1
    assert!((s.verification_secs() - 2.0).abs() < 1e-9);
}

#[test]
fn sessions_are_deterministic() {
    let case = small(&[("A.x.1", Decision::Confirmed)]);
    let run = FullRun::new(&case);
    let (a, _) = run.diagnose(&incident("i", "job stuck"), &mut NoFeedback);
    let (b, _) = run.diagnose(&incident("i", "job stuck"), &mut NoFeedback);
    assert_eq!(a.trace_jsonl(), b.trace_jsonl());
    assert_eq!(a.report, b.report);
}
