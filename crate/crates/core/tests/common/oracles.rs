//! Independent reference implementations shared by the property and
//! acceptance tests.

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use infradiag::corpus::{dot, EmbeddingProvider, HashingEmbedder, IncidentRecord, IncidentStore};
use infradiag::evalkit::{score, LabeledPrediction, Level};
use infradiag::gateway::TokenUsage;

use super::p;

pub const VOCAB: &[&str] = &[
    "nccl", "timeout", "ecc", "xid", "gpu", "node", "rank", "cuda", "driver", "mismatch", "link", "down", "oom", "batch",
    "quota", "mount", "scheduler", "checkpoint", "corrupt", "allocator", "kernel", "lockup", "hca", "nvlink", "error",
];

pub fn at(day: u32) -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::days(day as i64)
}

pub fn sentence(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_corpus(seed: u64, n: usize) -> Vec<IncidentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = ["GPU.XID.Xid 48", "GPU.XID.Xid 79", "System Software.KERNEL.Soft_Lockup", "Other.Platform.Scheduler_Failure"];
    (0..n)
        .map(|i| {
            let mut r = IncidentRecord::new(format!("r{:04}", rng.random_range(0..100_000u32) * 1000 + i as u32), sentence(&mut rng, 8), at(i as u32 % 300));
            if rng.random_bool(0.7) {
                r.root_cause = Some(p(labels.choose(&mut rng).unwrap()));
            }
            r
        })
        .collect()
}

/// Exhaustive scan: repeated selection of the best remaining record.
pub fn scan(records: &[IncidentRecord], query: &str, k: usize, e: &HashingEmbedder) -> Vec<(String, f64)> {
    let q = e.embed(query);
    let mut left: Vec<(String, f64)> = records.iter().map(|r| (r.id.clone(), dot(&q, &e.embed(&r.description)))).collect();
    let mut out = Vec::new();
    while out.len() < k && !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (&left[i], &left[best]);
            if a.1 > b.1 || (a.1 == b.1 && a.0 < b.0) {
                best = i;
            }
        }
        out.push(left.swap_remove(best));
    }
    out
}

/// First disagreement between the store and the scan on one random corpus.
pub fn retrieval_mismatch(seed: u64, n: usize, k: usize) -> Option<String> {
    let e = HashingEmbedder::default();
    let records = random_corpus(seed, n);
    let mut store = IncidentStore::new();
    for r in &records {
        store.ingest(r.clone(), &e).unwrap();
    }
    let query = sentence(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37), 6);
    let got = store.retrieve_similar(&query, k, &e);
    let want = scan(&records, &query, k, &e);
    if got.len() != want.len() {
        return Some(format!("{} hits, scan has {}", got.len(), want.len()));
    }
    for (i, (g, (id, sim))) in got.iter().zip(&want).enumerate() {
        if &g.record.id != id || (g.similarity - sim).abs() >= 1e-12 {
            return Some(format!("rank {i}: {} {} vs {id} {sim}", g.record.id, g.similarity));
        }
    }
    None
}

pub fn pred(i: usize, truth: usize, predicted: Option<usize>) -> LabeledPrediction {
    LabeledPrediction {
        incident_id: format!("i{i}"),
        truth: p(&format!("C{truth}")),
        predicted: predicted.map(|q| p(&format!("C{q}"))),
        resolving_pipeline: predicted.map(|_| 2),
        usage: TokenUsage::default(),
        llm_calls: 0,
        verification_secs: 0.0,
    }
}

/// First disagreement between `score` and a confusion count over
/// `(truth, prediction)` class indices below `classes`.
pub fn score_mismatch(classes: usize, samples: &[(usize, Option<usize>)]) -> Option<String> {
    let preds: Vec<LabeledPrediction> = samples.iter().enumerate().map(|(i, (t, q))| pred(i, *t, *q)).collect();
    let report = score(&preds, Level::Leaf).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    let by_label: BTreeMap<&str, _> = report.per_class.iter().map(|c| (c.label.as_str(), c)).collect();
    for c in 0..classes {
        let tp = samples.iter().filter(|(t, q)| *t == c && *q == Some(c)).count();
        let fp = samples.iter().filter(|(t, q)| *t != c && *q == Some(c)).count();
        let fn_ = samples.iter().filter(|(t, q)| *t == c && *q != Some(c)).count();
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        if tp + fn_ > 0 {
            macro_sum += f1;
            macro_n += 1;
        }
        match by_label.get(format!("C{c}").as_str()) {
            Some(s) => {
                if !(close(s.precision, precision) && close(s.recall, recall) && close(s.f1, f1) && s.support == tp + fn_) {
                    return Some(format!("class C{c}: {s:?} vs p={precision} r={recall} f1={f1} support={}", tp + fn_));
                }
            }
            None if tp + fp + fn_ > 0 => return Some(format!("class C{c} missing")),
            None => {}
        }
    }
    let mp = if tp_all + fp_all == 0 { 0.0 } else { tp_all as f64 / (tp_all + fp_all) as f64 };
    let mr = tp_all as f64 / (tp_all + fn_all) as f64;
    let mf = if mp + mr == 0.0 { 0.0 } else { 2.0 * mp * mr / (mp + mr) };
    let checks = [
        ("micro precision", report.micro_precision, mp),
        ("micro recall", report.micro_recall, mr),
        ("micro F1", report.micro_f1, mf),
        ("macro F1", report.macro_f1, macro_sum / macro_n as f64),
    ];
    for (name, got, want) in checks {
        if !close(got, want) {
            return Some(format!("{name}: {got} vs {want}"));
        }
    }
    if report.samples != samples.len() || report.unresolved != samples.iter().filter(|(_, q)| q.is_none()).count() {
        return Some("sample counts differ".into());
    }
    None
}
