mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::oracles::{at, random_corpus, retrieval_mismatch, score_mismatch, sentence};
use infradiag::agents::{Agents, Prompts};
use infradiag::corpus::{cluster_vectors, EmbeddingProvider, HashingEmbedder, IncidentRecord, IncidentStore, RetrievalHit};
use infradiag::evalkit::{pipeline_breakdown, ttm_stats};
use infradiag::gateway::{ChatBackend, LlmSession, ModelRates, ReplayBackend, ReplayEntry};
use infradiag::taxonomy::{Origin, Taxonomy, TaxonomyPath};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed seed so every run checks the same cases.
fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, rng_seed: RngSeed::Fixed(0x1d1a9), failure_persistence: None, ..ProptestConfig::default() }
}

// ---------------------------------------------------------------------------
// Taxonomy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Op {
    Upsert(Vec<u8>),
    Remove(Vec<u8>),
}

fn op() -> impl Strategy<Value = Op> {
    let segs = prop::collection::vec(0u8..4, 1..=3);
    prop_oneof![3 => segs.clone().prop_map(Op::Upsert), 1 => segs.prop_map(Op::Remove)]
}

fn to_path(segs: &[u8]) -> TaxonomyPath {
    let cats = ["GPU", "System Software", "Other", "Tmp"];
    let mut v = vec![cats[segs[0] as usize].to_string()];
    v.extend(segs[1..].iter().map(|s| format!("n{s}")));
    TaxonomyPath::new(v).unwrap()
}

fn check_invariants(t: &Taxonomy) {
    t.validate().unwrap();
    let walked = t.walk();
    assert_eq!(walked.len(), t.node_count());
    let keys: BTreeSet<&str> = t.index_keys().collect();
    assert_eq!(keys.len(), walked.len());
    for (p, n) in &walked {
        assert!(p.depth() <= 3);
        assert!(keys.contains(p.to_string().as_str()));
        assert_eq!(t.lookup(p).unwrap().label, n.label);
        for prefix in p.prefixes() {
            assert!(t.contains(&prefix));
        }
    }
    let leaves: BTreeSet<String> = t.leaves().iter().map(|p| p.to_string()).collect();
    let childless: BTreeSet<String> = walked.iter().filter(|(_, n)| n.children().is_empty()).map(|(p, _)| p.to_string()).collect();
    assert_eq!(leaves, childless);
    assert_eq!(&Taxonomy::load(&t.save()).unwrap(), t);
}

proptest! {
    #![proptest_config(config(256))]
    #[test]
    fn taxonomy_edits_keep_invariants(ops in prop::collection::vec(op(), 0..40)) {
        let mut t = Taxonomy::bootstrap(at(0));
        for (i, o) in ops.iter().enumerate() {
            match o {
                Op::Upsert(s) => {
                    let p = to_path(s);
                    t.upsert_label(&p, &format!("d{i}"), Origin::IncidentDerived, at(i as u32)).unwrap();
                    prop_assert_eq!(&t.lookup(&p).unwrap().description, &format!("d{i}"));
                }
                Op::Remove(s) => {
                    let p = to_path(s);
                    let had = t.contains(&p);
                    prop_assert_eq!(t.remove(&p).is_ok(), had);
                    prop_assert!(!t.contains(&p));
                }
            }
            check_invariants(&t);
        }
    }

    #[test]
    fn manual_labels_need_a_parent(segs in prop::collection::vec(0u8..4, 3..=3)) {
        let mut t = Taxonomy::bootstrap(at(0));
        let p = to_path(&segs);
        prop_assert!(t.upsert_label(&p, "x", Origin::Manual, at(1)).is_err());
        prop_assert!(!t.contains(&p));
    }
}

// ---------------------------------------------------------------------------
// Retrieval and corpus statistics
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(config(1000))]
    #[test]
    fn retrieval_equals_exhaustive_scan(seed in any::<u64>(), n in 0usize..=1000, k in 1usize..=10) {
        let mismatch = retrieval_mismatch(seed, n, k);
        prop_assert!(mismatch.is_none(), "{:?}", mismatch);
    }
}

proptest! {
    #![proptest_config(config(256))]
    #[test]
    fn recurrence_counts_per_distinct_label(seed in any::<u64>(), n in 1usize..200) {
        let e = HashingEmbedder::default();
        let records = random_corpus(seed, n);
        let mut store = IncidentStore::new();
        for r in &records {
            store.ingest(r.clone(), &e).unwrap();
        }
        let mut doubled = store.clone();
        for r in &records {
            let mut c = r.clone();
            c.id = format!("{}-copy", r.id);
            doubled.ingest(c, &e).unwrap();
        }
        for cat in ["GPU", "System Software", "Other"] {
            let labels: Vec<&TaxonomyPath> = records.iter().filter_map(|r| r.root_cause.as_ref()).filter(|l| l.main_category() == cat).collect();
            match store.recurrence_rate(cat) {
                Ok(rate) => {
                    let distinct: BTreeSet<&TaxonomyPath> = labels.iter().copied().collect();
                    prop_assert!((rate - labels.len() as f64 / distinct.len() as f64).abs() < 1e-12);
                    prop_assert!(rate >= 1.0);
                    prop_assert!((doubled.recurrence_rate(cat).unwrap() - 2.0 * rate).abs() < 1e-12);
                }
                Err(_) => prop_assert!(labels.is_empty()),
            }
        }
    }

    #[test]
    fn clustering_bounds(seed in any::<u64>(), n in 1usize..120) {
        let e = HashingEmbedder::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<Vec<f64>> = (0..n).map(|_| e.embed(&sentence(&mut rng, 5))).collect();
        prop_assert_eq!(cluster_vectors(&vectors, -1.0), 1);
        prop_assert_eq!(cluster_vectors(&vectors, 1.0 + 1e-9), n);
        for step in 0..=20 {
            let c = cluster_vectors(&vectors, -1.0 + step as f64 * 0.1);
            prop_assert!((1..=n).contains(&c));
        }
    }
}

/// Greedy centroid clustering is not monotone in the threshold: a stricter
/// threshold can route an early record to a different cluster, whose moved
/// centroid then absorbs a later record.
#[test]
fn stricter_threshold_can_yield_fewer_clusters() {
    let unit = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin()];
    let vectors: Vec<Vec<f64>> = [120.0, 50.0, 70.0, 160.0].into_iter().map(unit).collect();
    assert_eq!(cluster_vectors(&vectors, 0.5), 3);
    assert_eq!(cluster_vectors(&vectors, 0.7), 2);
}

// ---------------------------------------------------------------------------
// Rerank
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(config(256))]
    #[test]
    fn rerank_returns_a_permutation(n in 2usize..8, answer in prop::collection::vec(0usize..12, 0..12), fenced in any::<bool>()) {
        let e = HashingEmbedder::default();
        let hits: Vec<RetrievalHit> = (0..n)
            .map(|i| {
                let mut r = IncidentRecord::new(format!("h{i}"), format!("desc {i}"), at(i as u32));
                r.embedding = Some(e.embed(&r.description));
                RetrievalHit { record: r, similarity: 1.0 - i as f64 / 10.0, rerank_position: None }
            })
            .collect();
        let ids: Vec<String> = answer.iter().map(|i| format!("h{i}")).collect();
        let body = serde_json::to_string(&ids).unwrap();
        let text = if fenced { format!("```json\n{body}\n```") } else { body };
        let backend: Arc<dyn ChatBackend> = Arc::new(ReplayBackend::new([ReplayEntry::cursor(text)]));
        let llm = LlmSession::new(backend, "gpt-4o");
        let prompts = Prompts::bundled();
        let out = Agents::new(&llm, &prompts).rerank("q", hits.clone());
        let got: Vec<&str> = out.iter().map(|h| h.record.id.as_str()).collect();
        let mut sorted = got.clone();
        sorted.sort();
        let mut want: Vec<&str> = hits.iter().map(|h| h.record.id.as_str()).collect();
        want.sort();
        prop_assert_eq!(sorted, want);
        let positions: Vec<usize> = out.iter().map(|h| h.rerank_position.unwrap()).collect();
        prop_assert_eq!(positions, (1..=n).collect::<Vec<_>>());
        // Named ids lead, in answer order, without repeats or unknowns.
        let mut seen = BTreeSet::new();
        let named: Vec<String> = answer.iter().filter(|i| **i < n && seen.insert(**i)).map(|i| format!("h{i}")).collect();
        let lead: Vec<&str> = named.iter().map(String::as_str).collect();
        prop_assert_eq!(&got[..named.len()], lead.as_slice());
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(config(1000))]
    #[test]
    fn score_matches_brute_force(
        classes in 1usize..=8,
        raw in prop::collection::vec((0usize..8, prop::option::weighted(0.85, 0usize..8)), 1..=200),
    ) {
        let samples: Vec<(usize, Option<usize>)> = raw.iter().map(|(t, p)| (t % classes, p.map(|p| p % classes))).collect();
        let mismatch = score_mismatch(classes, &samples);
        prop_assert!(mismatch.is_none(), "{:?}", mismatch);
    }
}

proptest! {
    #![proptest_config(config(256))]
    #[test]
    fn ttm_is_order_free_and_scales(mut v in prop::collection::vec(0.0f64..1e4, 1..100), c in 0.01f64..100.0, seed in any::<u64>()) {
        let base = ttm_stats(&v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(v.as_mut_slice(), &mut rng);
        let shuffled = ttm_stats(&v).unwrap();
        prop_assert!((shuffled.median - base.median).abs() <= 1e-9 * base.median.max(1.0));
        prop_assert!((shuffled.trimmed_mean - base.trimmed_mean).abs() <= 1e-9 * base.trimmed_mean.max(1.0));
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let s = ttm_stats(&scaled).unwrap();
        prop_assert!((s.median - c * base.median).abs() <= 1e-9 * (c * base.median).max(1.0));
        prop_assert!((s.trimmed_mean - c * base.trimmed_mean).abs() <= 1e-9 * (c * base.trimmed_mean).max(1.0));
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= base.median && base.median <= hi);
        prop_assert!(lo - 1e-9 <= base.trimmed_mean && base.trimmed_mean <= hi + 1e-9);
    }

    #[test]
    fn breakdown_is_cumulative(runs in prop::collection::vec(prop::collection::vec(prop::option::of(1u8..=3), 1..50), 1..5)) {
        let rows = pipeline_breakdown(&runs);
        prop_assert_eq!(rows.len(), 3);
        for w in rows.windows(2) {
            prop_assert!(w[0].cumulative_pct <= w[1].cumulative_pct + 1e-12);
            prop_assert!(w[0].resolved <= w[1].resolved + 1e-12);
        }
        prop_assert!(rows[2].cumulative_pct <= 100.0 + 1e-9);
        let all_resolved = runs.iter().all(|r| r.iter().all(Option::is_some));
        prop_assert_eq!(all_resolved, (rows[2].cumulative_pct - 100.0).abs() < 1e-9);
    }

    #[test]
    fn cost_is_linear(
        rin in 0.0f64..100.0, rout in 0.0f64..100.0,
        a in (0.0f64..1e6, 0.0f64..1e6), b in (0.0f64..1e6, 0.0f64..1e6), c in 0.0f64..50.0,
    ) {
        let r = ModelRates { input_usd_per_million: rin, output_usd_per_million: rout };
        let sum = r.price(a.0 + b.0, a.1 + b.1);
        prop_assert!((sum - (r.price(a.0, a.1) + r.price(b.0, b.1))).abs() <= 1e-9 * sum.max(1.0));
        let scaled = r.price(c * a.0, c * a.1);
        prop_assert!((scaled - c * r.price(a.0, a.1)).abs() <= 1e-9 * scaled.max(1.0));
        prop_assert_eq!(r.price(0.0, 0.0), 0.0);
    }
}
