mod common;

use proptest::prelude::*;
use relemb::{build_index, tokenize, IndexOptions, Stopwords};

fn corpus() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::vec(prop::collection::vec("[a-e]{1,3}|The|AND|x-ray|42", 0..25), 1..30).prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(i, words)| (format!("d{i}"), words.join(" ")))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn collection_model_sums_to_one(docs in corpus()) {
        let stop = Stopwords::inquery();
        let index = build_index(docs, &stop, &IndexOptions::default()).unwrap();
        if !index.vocab().is_empty() {
            let total: f64 = index.collection_model().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        for d in 0..index.num_docs() {
            let len = index.doc_len(d);
            if len > 0 {
                let mass: f64 = index.doc_terms(d).iter().map(|&(t, _)| index.mle_prob(t, d).unwrap()).sum();
                prop_assert!((mass - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn partitioning_does_not_change_the_index(docs in corpus(), parts in 1usize..8) {
        let stop = Stopwords::inquery();
        let one = build_index(docs.clone(), &stop, &IndexOptions { partitions: 1, ..IndexOptions::default() }).unwrap();
        let many = build_index(docs, &stop, &IndexOptions { partitions: parts, ..IndexOptions::default() }).unwrap();
        prop_assert_eq!(one, many);
    }

    #[test]
    fn document_length_is_token_count(docs in corpus()) {
        let stop = Stopwords::inquery();
        let index = build_index(docs.clone(), &stop, &IndexOptions::default()).unwrap();
        for (i, (name, text)) in docs.iter().enumerate() {
            prop_assert_eq!(index.doc_id(name), Some(i));
            prop_assert_eq!(index.doc_len(i) as usize, tokenize(text, &stop).len());
        }
    }

    #[test]
    fn postings_agree_with_forward_lists(docs in corpus()) {
        let index = build_index(docs, &Stopwords::empty(), &IndexOptions::default()).unwrap();
        for t in 0..index.vocab().len() {
            let postings = index.postings(t);
            prop_assert_eq!(postings.len() as u64, index.vocab().df(t));
            prop_assert_eq!(postings.iter().map(|p| p.tf as u64).sum::<u64>(), index.vocab().cf(t));
            for p in postings {
                prop_assert_eq!(index.tf(t, p.doc), p.tf);
            }
        }
    }
}

#[test]
fn saved_index_loads_identically() {
    let mut r = common::rng(3);
    let docs = common::random_corpus(&mut r, 40, 30, 20);
    let index = common::index_of(&docs);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.idx");
    index.save(&path).unwrap();
    assert_eq!(relemb::CorpusIndex::load(&path).unwrap(), index);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(relemb::CorpusIndex::load(&path).is_err());
}

#[test]
fn vocabulary_is_lexicographic() {
    let docs = vec![("a".to_string(), "zeta alpha mid alpha".to_string())];
    let index = build_index(docs, &Stopwords::empty(), &IndexOptions::default()).unwrap();
    assert_eq!(index.vocab().terms(), &["alpha", "mid", "zeta"]);
    assert_eq!(index.vocab().lookup(&["zeta", "unknown", "alpha"]), vec![2, 0]);
}
