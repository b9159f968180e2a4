use std::path::PathBuf;

use infradiag::experiment::{ablate_unseen, Experiment};
use infradiag::taxonomy::TaxonomyPath;

fn experiment() -> Experiment {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ablation/ablation.json");
    Experiment::from_file(&p).unwrap()
}

fn label(s: &str) -> TaxonomyPath {
    s.parse().unwrap()
}

#[test]
fn removed_leaf_recovers_through_sibling_check() {
    let rows = ablate_unseen(&experiment(), &[label("GPU.MEMORY.infoROM_Corruption")]).unwrap();
    let r = &rows[0];
    assert!(r.incidents > 0);
    assert_eq!(r.predictions_of_removed, 0);
    assert_eq!(r.accuracy_before, 1.0);
    assert!(r.accuracy_after > 0.0, "{r:?}");
}

#[test]
fn removed_leaf_without_alternative_is_lost() {
    let rows = ablate_unseen(&experiment(), &[label("System Software.CUDA.Host_VM_Version_Mismatch")]).unwrap();
    let r = &rows[0];
    assert!(r.incidents > 0);
    assert_eq!(r.predictions_of_removed, 0);
    assert_eq!(r.accuracy_before, 1.0);
    assert_eq!(r.accuracy_after, 0.0, "{r:?}");
}

#[test]
fn unknown_label_is_rejected() {
    assert!(ablate_unseen(&experiment(), &[label("GPU.MEMORY.Nope")]).is_err());
}
