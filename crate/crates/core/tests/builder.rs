use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{TimeZone, Utc};
use infradiag::agents::{Agents, Prompts};
use infradiag::builder::{build_taxonomy, read_tsgs};
use infradiag::corpus::read_jsonl;
use infradiag::gateway::LlmSession;
use infradiag::sim::SimulatedExpert;
use infradiag::taxonomy::{Origin, Taxonomy};
use infradiag::verify::{CommandTable, ScriptRegistry};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn llm() -> LlmSession {
    let expert = SimulatedExpert::new(BTreeMap::new(), &Taxonomy::bundled(), &ScriptRegistry::bundled(), &CommandTable::bundled());
    LlmSession::new(expert.shared(), "gpt-4o").with_budget(100_000)
}

#[test]
fn second_build_adds_nothing() {
    let incidents = read_jsonl(&data("synthetic/incidents.jsonl")).unwrap();
    let tsgs = read_tsgs(&data("builder/tsgs.json")).unwrap();
    let prompts = Prompts::bundled();
    let session = llm();
    let agents = Agents::new(&session, &prompts);
    let mut t = Taxonomy::bootstrap(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap());

    let first = build_taxonomy(&mut t, &incidents, &tsgs, &agents).unwrap();
    assert!(first.skipped.is_empty(), "{:?}", first.skipped);
    assert_eq!(first.labelled.len(), incidents.len());
    let leaves = t.leaves();
    assert_eq!(leaves.len(), 26);
    let sm = "Interconnect & Networking.InfiniBand.Subnet_Manager_Down".parse().unwrap();
    assert_eq!(t.lookup(&sm).unwrap().origin, Origin::TsgDerived);
    t.validate().unwrap();

    let snapshot = t.clone();
    let second = build_taxonomy(&mut t, &incidents, &tsgs, &agents).unwrap();
    assert!(second.added.is_empty(), "{:?}", second.added);
    assert!(second.refined.is_empty(), "{:?}", second.refined);
    assert_eq!(t, snapshot);
}
