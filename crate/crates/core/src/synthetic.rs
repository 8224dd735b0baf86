//! Synthetic topic collections for smoke tests and experiments.
//!
//! Every document belongs to one subtopic of one topic. Tokens are drawn from
//! a mixture of the subtopic's vocabulary (Zipf-weighted), the topic's shared
//! vocabulary and a background vocabulary common to all documents. Subtopics
//! double as query categories, and all docs of a subtopic are relevant to
//! queries generated from it.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;

use crate::classify::{write_labeled_queries, Categories, LabelSet, LabeledQuery};
use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::index::CorpusIndex;
use crate::pipeline::{SkipCounts, TrainingExample, TrainingSet};
use crate::relevance::RelevanceDistribution;
use crate::text::{tokenize, Stopwords};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// `n` distinct three-syllable pseudo-words, skipping the first `offset`
/// and any stopword.
pub fn pseudo_words(n: usize, offset: usize, stopwords: &Stopwords) -> Vec<String> {
    let syllables: Vec<String> = CONSONANTS
        .iter()
        .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{}{}", c as char, v as char)))
        .collect();
    let s = syllables.len();
    let mut out = Vec::with_capacity(n);
    let mut i = offset;
    while out.len() < n {
        // spread consecutive indices over the first syllable so neighbours differ visibly
        let w = format!("{}{}{}", syllables[i % s], syllables[(i / s) % s], syllables[(i / (s * s)) % s]);
        if !stopwords.contains(&w) {
            out.push(w);
        }
        i += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicSpec {
    pub topics: usize,
    pub subtopics_per_topic: usize,
    pub subtopic_words: usize,
    pub topic_words: usize,
    pub background_words: usize,
    pub docs: usize,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
    /// Mixture weights of subtopic, topic and background vocabularies.
    pub mixture: [f64; 3],
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for TopicSpec {
    fn default() -> Self {
        TopicSpec {
            topics: 2,
            subtopics_per_topic: 3,
            subtopic_words: 20,
            topic_words: 15,
            background_words: 60,
            docs: 200,
            min_doc_len: 40,
            max_doc_len: 100,
            mixture: [0.55, 0.2, 0.25],
            zipf_exponent: 1.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicCollection {
    pub spec: TopicSpec,
    /// `(doc id, text)` in generation order.
    pub docs: Vec<(String, String)>,
    pub doc_subtopic: Vec<usize>,
    pub subtopic_vocab: Vec<Vec<String>>,
    pub topic_vocab: Vec<Vec<String>>,
    pub background: Vec<String>,
}

fn zipf(n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(s)).collect()
}

fn normalized(w: Vec<f64>) -> Vec<f64> {
    let t: f64 = w.iter().sum();
    w.into_iter().map(|x| x / t).collect()
}

impl TopicCollection {
    pub fn generate(spec: &TopicSpec) -> Result<Self> {
        if spec.topics == 0 || spec.subtopics_per_topic == 0 || spec.subtopic_words == 0 || spec.docs == 0 {
            return Err(Error::InvalidArgument("topic spec needs topics, subtopics, words and docs".into()));
        }
        if spec.min_doc_len == 0 || spec.min_doc_len > spec.max_doc_len {
            return Err(Error::InvalidArgument("document length range is empty".into()));
        }
        let stop = Stopwords::inquery();
        let nsub = spec.topics * spec.subtopics_per_topic;
        let total = nsub * spec.subtopic_words + spec.topics * spec.topic_words + spec.background_words;
        let mut words = pseudo_words(total, 0, &stop).into_iter();
        let subtopic_vocab: Vec<Vec<String>> = (0..nsub).map(|_| words.by_ref().take(spec.subtopic_words).collect()).collect();
        let topic_vocab: Vec<Vec<String>> = (0..spec.topics).map(|_| words.by_ref().take(spec.topic_words).collect()).collect();
        let background: Vec<String> = words.collect();

        let mut c = TopicCollection {
            spec: spec.clone(),
            docs: Vec::with_capacity(spec.docs),
            doc_subtopic: Vec::with_capacity(spec.docs),
            subtopic_vocab,
            topic_vocab,
            background,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let width = spec.docs.to_string().len();
        for i in 0..spec.docs {
            let s = i % nsub;
            let (terms, weights) = c.token_distribution(s);
            let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let len = rng.random_range(spec.min_doc_len..=spec.max_doc_len);
            let text: Vec<&str> = (0..len).map(|_| terms[dist.sample(&mut rng)].as_str()).collect();
            c.docs.push((format!("d{i:0width$}"), text.join(" ")));
            c.doc_subtopic.push(s);
        }
        Ok(c)
    }

    pub fn num_subtopics(&self) -> usize {
        self.subtopic_vocab.len()
    }

    pub fn topic_of(&self, subtopic: usize) -> usize {
        subtopic / self.spec.subtopics_per_topic
    }

    /// The token distribution documents of `subtopic` are drawn from, as
    /// parallel term and probability lists. Terms are distinct.
    pub fn token_distribution(&self, subtopic: usize) -> (Vec<String>, Vec<f64>) {
        let [ws, wt, wb] = self.spec.mixture;
        let mut terms = Vec::new();
        let mut probs = Vec::new();
        let parts: [(&[String], f64); 3] = [
            (&self.subtopic_vocab[subtopic], ws),
            (&self.topic_vocab[self.topic_of(subtopic)], wt),
            (&self.background, wb),
        ];
        for (vocab, w) in parts {
            if vocab.is_empty() || w <= 0.0 {
                continue;
            }
            for (t, p) in vocab.iter().zip(normalized(zipf(vocab.len(), self.spec.zipf_exponent))) {
                terms.push(t.clone());
                probs.push(w * p);
            }
        }
        let probs = normalized(probs);
        (terms, probs)
    }

    /// Docs of `subtopic`.
    pub fn relevant_docs(&self, subtopic: usize) -> impl Iterator<Item = &str> {
        self.docs
            .iter()
            .zip(&self.doc_subtopic)
            .filter(move |(_, &s)| s == subtopic)
            .map(|(d, _)| d.0.as_str())
    }

    /// A query of `len` distinct words from the subtopic vocabulary, drawn
    /// uniformly from the `pool` most frequent ones.
    pub fn sample_query<R: Rng + ?Sized>(&self, rng: &mut R, subtopic: usize, len: usize, pool: usize) -> String {
        let vocab = &self.subtopic_vocab[subtopic];
        let pool = &vocab[..pool.clamp(len, vocab.len())];
        let picked: Vec<&String> = pool.choose_multiple(rng, len).collect();
        picked.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn write_corpus<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (id, text) in &self.docs {
            writeln!(out, "{id}\t{text}")?;
        }
        Ok(())
    }
}

/// A query with a planted relevance distribution over words.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedQuery {
    pub query_id: String,
    pub text: String,
    pub subtopic: usize,
    pub distribution: Vec<(String, f64)>,
}

/// Queries whose relevance distribution is their subtopic's token distribution.
pub fn planted_queries(collection: &TopicCollection, n: usize, seed: u64) -> Vec<PlantedQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len();
    (0..n)
        .map(|i| {
            let s = i % collection.num_subtopics();
            let len = rng.random_range(1..=3);
            let text = collection.sample_query(&mut rng, s, len, collection.spec.subtopic_words);
            let (terms, probs) = collection.token_distribution(s);
            PlantedQuery {
                query_id: format!("p{i:0width$}"),
                text,
                subtopic: s,
                distribution: terms.into_iter().zip(probs).collect(),
            }
        })
        .collect()
}

/// A training set that uses the planted distributions as targets. Words
/// missing from the index are dropped; the unigram table is left empty.
pub fn planted_training_set(index: &CorpusIndex, stopwords: &Stopwords, queries: &[PlantedQuery]) -> Result<TrainingSet> {
    let vocab = index.vocab();
    let mut examples = Vec::with_capacity(queries.len());
    let mut skipped = SkipCounts::default();
    for q in queries {
        let terms = vocab.lookup(&tokenize(&q.text, stopwords));
        if terms.is_empty() {
            skipped.no_vocabulary_terms += 1;
            continue;
        }
        let weights = q.distribution.iter().filter_map(|(w, p)| vocab.id(w).map(|t| (t, *p)));
        examples.push(TrainingExample {
            query_id: q.query_id.clone(),
            text: q.text.clone(),
            terms,
            relevance: RelevanceDistribution::from_weights(q.query_id.clone(), weights, 0)?,
        });
    }
    if examples.is_empty() {
        return Err(Error::NoUsableQueries);
    }
    Ok(TrainingSet {
        examples,
        unigram: Vec::new(),
        skipped,
    })
}

/// The bundled toy data set: a two-topic collection, a raw query log for
/// training, held-out queries with judgments, and labeled queries whose
/// categories are the subtopics.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub collection: TopicCollection,
    pub query_log: Vec<String>,
    pub heldout: Vec<(String, String)>,
    pub qrels: Qrels,
    pub categories: Categories,
    pub labeled: Vec<LabeledQuery>,
}

pub const TOY_TRAINING_QUERIES: usize = 400;
pub const TOY_HELDOUT_QUERIES: usize = 40;
pub const TOY_LABELED_QUERIES: usize = 60;

impl ToyData {
    pub fn generate(seed: u64) -> Result<Self> {
        let collection = TopicCollection::generate(&TopicSpec {
            seed,
            ..TopicSpec::default()
        })?;
        let nsub = collection.num_subtopics();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));

        let mut query_log = Vec::new();
        for i in 0..TOY_TRAINING_QUERIES {
            let len = rng.random_range(1..=3);
            query_log.push(collection.sample_query(&mut rng, i % nsub, len, collection.spec.subtopic_words));
            if i % 25 == 0 {
                // navigational noise and repeats, as found in real logs
                query_log.push(format!("www.{}.com", collection.subtopic_vocab[i % nsub][0]));
                query_log.push(query_log[query_log.len() - 2].to_uppercase());
            }
        }

        let mut heldout = Vec::new();
        let mut qrels = Qrels::default();
        let width = TOY_HELDOUT_QUERIES.to_string().len();
        let mut used = BTreeSet::new();
        for i in 0..TOY_HELDOUT_QUERIES {
            let s = i % nsub;
            let qid = format!("h{:0width$}", i + 1);
            // single-word queries leave most relevant docs unmatched by the query itself
            let mut text = collection.sample_query(&mut rng, s, 1, collection.spec.subtopic_words);
            while !used.insert(text.clone()) {
                text = collection.sample_query(&mut rng, s, 1, collection.spec.subtopic_words);
            }
            for d in collection.relevant_docs(s) {
                qrels.insert(qid.clone(), d, 1);
            }
            heldout.push((qid, text));
        }

        let categories = Categories::new((0..nsub).map(|s| format!("cat{}", s + 1)))?;
        let width = TOY_LABELED_QUERIES.to_string().len();
        let labeled = (0..TOY_LABELED_QUERIES)
            .map(|i| {
                let s = i % nsub;
                let len = rng.random_range(1..=2);
                Ok(LabeledQuery {
                    text: collection.sample_query(&mut rng, s, len, collection.spec.subtopic_words),
                    labels: LabelSet::new(format!("c{:0width$}", i + 1), vec![vec![s], vec![s]])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(ToyData {
            collection,
            query_log,
            heldout,
            qrels,
            categories,
            labeled,
        })
    }

    /// Writes every toy file into `dir`, returning the file names.
    pub fn write(&self, dir: &Path) -> Result<Vec<&'static str>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: Vec<(&'static str, Vec<u8>)> = Vec::new();
        let mut buf = Vec::new();
        self.collection.write_corpus(&mut buf).expect("write to memory");
        files.push(("corpus.tsv", buf));
        files.push(("query_log.txt", self.query_log.iter().map(|q| format!("{q}\n")).collect::<String>().into_bytes()));
        files.push((
            "heldout_queries.tsv",
            self.heldout.iter().map(|(q, t)| format!("{q}\t{t}\n")).collect::<String>().into_bytes(),
        ));
        let mut buf = Vec::new();
        self.qrels.write(&mut buf).expect("write to memory");
        files.push(("qrels.txt", buf));
        let mut buf = Vec::new();
        self.categories.write(&mut buf).expect("write to memory");
        files.push(("categories.txt", buf));
        let mut buf = Vec::new();
        write_labeled_queries(&mut buf, &self.labeled, &self.categories).expect("write to memory");
        files.push(("labeled_queries.tsv", buf));
        let mut names = Vec::new();
        for (name, bytes) in files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            names.push(name);
        }
        Ok(names)
    }
}

pub const TOY_SEED: u64 = 7;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_words_are_distinct_tokens() {
        let stop = Stopwords::inquery();
        let w = pseudo_words(500, 0, &stop);
        assert_eq!(w.iter().collect::<BTreeSet<_>>().len(), 500);
        for x in &w {
            assert_eq!(tokenize(x, &stop), vec![x.clone()]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = ToyData::generate(3).unwrap();
        assert_eq!(a, ToyData::generate(3).unwrap());
        assert_ne!(a.collection.docs, ToyData::generate(4).unwrap().collection.docs);
        assert_eq!(a.collection.docs.len(), 200);
        assert_eq!(a.heldout.len(), TOY_HELDOUT_QUERIES);
        assert_eq!(a.labeled.len(), TOY_LABELED_QUERIES);
    }

    #[test]
    fn token_distribution_sums_to_one() {
        let c = TopicCollection::generate(&TopicSpec::default()).unwrap();
        for s in 0..c.num_subtopics() {
            let (terms, probs) = c.token_distribution(s);
            assert_eq!(terms.len(), probs.len());
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
