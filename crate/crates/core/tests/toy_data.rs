use std::fs;
use std::path::PathBuf;

use relemb::classify::{read_labeled_queries, Categories};
use relemb::eval::Qrels;
use relemb::index::read_corpus;
use relemb::model::ModelKind;
use relemb::pipeline::{
    filter_queries, generate_training_set, noise_distribution, read_noise_table, read_training_set, write_noise_table,
    write_training_set, PipelineConfig,
};
use relemb::retrieval::read_queries;
use relemb::synthetic::{ToyData, TOY_SEED};
use relemb::train::{train, train_with_noise, TrainConfig};
use relemb::{build_index, IndexOptions, Stopwords};

fn bundled() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

#[test]
fn bundled_files_match_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let names = ToyData::generate(TOY_SEED).unwrap().write(dir.path()).unwrap();
    for name in names {
        let fresh = fs::read(dir.path().join(name)).unwrap();
        let shipped = fs::read(bundled().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(fresh == shipped, "{name} is stale; rerun the make_toy example");
    }
}

#[test]
fn bundled_files_parse() {
    let dir = bundled();
    let toy = ToyData::generate(TOY_SEED).unwrap();
    assert_eq!(read_corpus(&dir.join("corpus.tsv")).unwrap(), toy.collection.docs);
    assert_eq!(read_queries(&dir.join("heldout_queries.tsv")).unwrap(), toy.heldout);
    assert_eq!(Qrels::read(&dir.join("qrels.txt")).unwrap(), toy.qrels);
    let cats = Categories::read(&dir.join("categories.txt")).unwrap();
    assert_eq!(cats, toy.categories);
    assert_eq!(read_labeled_queries(&dir.join("labeled_queries.tsv"), &cats).unwrap(), toy.labeled);
}

#[test]
fn training_files_round_trip_and_train() {
    let toy = ToyData::generate(TOY_SEED).unwrap();
    let stop = Stopwords::inquery();
    let index = build_index(toy.collection.docs.clone(), &stop, &IndexOptions::default()).unwrap();
    let (queries, stats) = filter_queries(&toy.query_log);
    assert!(stats.navigational > 0 && stats.duplicates > 0);
    let queries: Vec<(String, String)> = queries.into_iter().enumerate().map(|(i, q)| ((i + 1).to_string(), q)).collect();
    let set = generate_training_set(&index, &queries, &stop, &PipelineConfig::default()).unwrap();
    assert_eq!(set.len() + set.skipped.no_vocabulary_terms + set.skipped.no_matches, queries.len());

    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.tsv");
    let noise_path = dir.path().join("noise.tsv");
    write_training_set(&train_path, index.vocab(), &set).unwrap();
    let noise = noise_distribution(&set.unigram, 0.75).unwrap();
    write_noise_table(&noise_path, index.vocab(), &noise).unwrap();
    let back = read_training_set(&train_path, &index, &stop).unwrap();
    let noise_back = read_noise_table(&noise_path, index.vocab()).unwrap();
    assert_eq!(back.len(), set.len());
    for (a, b) in noise.iter().zip(&noise_back) {
        assert!((a - b).abs() < 1e-15);
    }

    // training from the files gives the same model as training in memory
    let cfg = TrainConfig {
        kind: ModelKind::Rpe,
        dim: 8,
        epochs: 2,
        learning_rate: 0.5,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let direct = train(&index, &set, &cfg).unwrap();
    let from_files = train_with_noise(&index, &back, Some(&noise_back), &cfg).unwrap();
    assert_eq!(direct.epoch_losses.len(), 2);
    for (a, b) in direct.model.query_vectors.as_slice().iter().zip(from_files.model.query_vectors.as_slice()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn parallel_training_makes_progress() {
    let toy = ToyData::generate(TOY_SEED).unwrap();
    let stop = Stopwords::inquery();
    let index = build_index(toy.collection.docs.clone(), &stop, &IndexOptions::default()).unwrap();
    let (queries, _) = filter_queries(&toy.query_log);
    let queries: Vec<(String, String)> = queries.into_iter().enumerate().map(|(i, q)| ((i + 1).to_string(), q)).collect();
    let set = generate_training_set(&index, &queries, &stop, &PipelineConfig::default()).unwrap();
    for (kind, lr) in [(ModelKind::Rlm, 2.0), (ModelKind::Rpe, 0.5)] {
        let cfg = TrainConfig {
            kind,
            dim: 16,
            epochs: 8,
            learning_rate: lr,
            batch_size: 8,
            workers: 4,
            ..TrainConfig::default()
        };
        let out = train(&index, &set, &cfg).unwrap();
        let first = out.epoch_losses[0];
        let last = *out.epoch_losses.last().unwrap();
        assert!(last < first, "{kind}: loss went from {first} to {last}");
    }
}
