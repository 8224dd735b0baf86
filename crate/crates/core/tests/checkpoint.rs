mod common;

use std::fs;

use relemb::manifest::Manifest;
use relemb::model::{CheckpointPaths, EmbeddingModel};

#[test]
fn rlm_round_trip_is_exact() {
    let mut r = common::rng(1);
    let m = common::random_rlm(&mut r, 40, 7, 3.0);
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("rlm");
    let mut extra = Manifest::new();
    extra.set("train.epochs", 3);
    m.save(&prefix, &extra).unwrap();
    let (back, manifest) = EmbeddingModel::load(&prefix).unwrap();
    assert_eq!(back, m);
    assert_eq!(manifest.get("train.epochs"), Some("3"));
    assert_eq!(manifest.get("kind"), Some("rlm"));
}

#[test]
fn rpe_round_trip_keeps_bias() {
    let mut r = common::rng(2);
    let m = common::random_rpe(&mut r, 25, 4, 1.0, true);
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("rpe");
    let paths = m.save(&prefix, &Manifest::new()).unwrap();
    assert!(paths.bias.exists());
    assert!(!paths.tree.exists());
    assert_eq!(EmbeddingModel::load(&prefix).unwrap().0, m);
}

#[test]
fn truncated_vector_file_is_rejected() {
    let mut r = common::rng(3);
    let m = common::random_rpe(&mut r, 10, 3, 1.0, false);
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("m");
    let paths = m.save(&prefix, &Manifest::new()).unwrap();
    let text = fs::read_to_string(&paths.query_vectors).unwrap();
    let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
    fs::write(&paths.query_vectors, cut).unwrap();
    let err = EmbeddingModel::load(&prefix).unwrap_err().to_string();
    assert!(err.contains("query.vec"), "{err}");
}

#[test]
fn dimension_mismatch_is_rejected() {
    let mut r = common::rng(4);
    let m = common::random_rpe(&mut r, 6, 3, 1.0, false);
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("m");
    let paths = CheckpointPaths::new(&prefix);
    m.save(&prefix, &Manifest::new()).unwrap();
    let text = fs::read_to_string(&paths.term_vectors).unwrap();
    let widened: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { "6 4\n".to_string() } else { format!("{l} 0\n") })
        .collect();
    fs::write(&paths.term_vectors, widened).unwrap();
    assert!(EmbeddingModel::load(&prefix).is_err());
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = EmbeddingModel::load(&dir.path().join("absent")).unwrap_err().to_string();
    assert!(err.contains("absent.manifest"), "{err}");
}
