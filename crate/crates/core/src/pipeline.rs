//! Offline training-data generation: query-log cleaning, bulk retrieval and
//! relevance-model estimation, and the negative-sampling noise table.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::index::{CorpusIndex, DocId, TermId, Vocabulary};
use crate::manifest::Manifest;
use crate::relevance::{estimate_rm, RelevanceDistribution, DEFAULT_FEEDBACK_DOCS};
use crate::retrieval::{ql_retrieve, DEFAULT_MU};
use crate::text::{tokenize, Stopwords};

/// Substrings marking navigational queries.
pub const URL_MARKERS: [&str; 6] = ["http", "www.", ".com", ".net", ".org", ".edu"];

pub const DEFAULT_NOISE_EXPONENT: f64 = 0.75;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub input: usize,
    pub navigational: usize,
    pub empty: usize,
    pub duplicates: usize,
}

/// Drops navigational queries, replaces non-alphanumerics with spaces,
/// lowercases, and keeps the first occurrence of each cleaned query.
pub fn filter_queries<I, S>(raw: I) -> (Vec<String>, FilterStats)
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut stats = FilterStats::default();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for q in raw {
        stats.input += 1;
        let lower = q.as_ref().to_lowercase();
        if URL_MARKERS.iter().any(|m| lower.contains(m)) {
            stats.navigational += 1;
            continue;
        }
        let cleaned = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if cleaned.is_empty() {
            stats.empty += 1;
        } else if seen.insert(cleaned.clone()) {
            out.push(cleaned);
        } else {
            stats.duplicates += 1;
        }
    }
    (out, stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query_id: String,
    pub text: String,
    /// In-vocabulary query tokens, in query order, duplicates kept.
    pub terms: Vec<TermId>,
    pub relevance: RelevanceDistribution,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipCounts {
    pub no_vocabulary_terms: usize,
    pub no_matches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub examples: Vec<TrainingExample>,
    /// Raw token counts over the concatenated feedback documents of every
    /// query; empty when the set was read back from a training file.
    pub unigram: Vec<u64>,
    pub skipped: SkipCounts,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Σ_i p(w|R_i) per term.
    pub fn relevance_mass(&self, vocab_size: usize) -> Vec<f64> {
        let mut mass = vec![0.0; vocab_size];
        for ex in &self.examples {
            for &(t, p) in ex.relevance.probs() {
                mass[t] += p;
            }
        }
        mass
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub feedback_docs: usize,
    pub mu: f64,
    /// Keep only this many terms per relevance distribution; 0 keeps all.
    pub max_terms: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            feedback_docs: DEFAULT_FEEDBACK_DOCS,
            mu: DEFAULT_MU,
            max_terms: 0,
        }
    }
}

impl PipelineConfig {
    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("retrieval.k", self.feedback_docs)
            .set("retrieval.mu", self.mu)
            .set("rm.max_terms", self.max_terms);
        m
    }
}

enum Outcome {
    Kept(TrainingExample, Vec<DocId>),
    NoTerms,
    NoMatches,
}

/// Retrieves the top documents for every `(qid, text)` query and estimates
/// its relevance model. Queries are processed in parallel; output order
/// follows input order.
pub fn generate_training_set(
    index: &CorpusIndex,
    queries: &[(String, String)],
    stopwords: &Stopwords,
    config: &PipelineConfig,
) -> Result<TrainingSet> {
    if config.feedback_docs == 0 {
        return Err(Error::InvalidArgument("feedback document count must be at least 1".into()));
    }
    let outcomes: Vec<Outcome> = queries
        .par_iter()
        .map(|(qid, text)| -> Result<Outcome> {
            let terms = index.vocab().lookup(&tokenize(text, stopwords));
            if terms.is_empty() {
                return Ok(Outcome::NoTerms);
            }
            let run = ql_retrieve(index, &terms, config.feedback_docs, config.mu)?.with_query_id(qid.clone());
            if run.is_empty() {
                return Ok(Outcome::NoMatches);
            }
            let rm = estimate_rm(index, &terms, &run, config.mu)?.truncate(config.max_terms);
            let example = TrainingExample {
                query_id: qid.clone(),
                text: text.clone(),
                terms,
                relevance: rm,
            };
            Ok(Outcome::Kept(example, run.docs().collect()))
        })
        .collect::<Result<_>>()?;

    let mut set = TrainingSet {
        examples: Vec::new(),
        unigram: vec![0; index.vocab().len()],
        skipped: SkipCounts::default(),
    };
    for outcome in outcomes {
        match outcome {
            Outcome::Kept(ex, feedback) => {
                for doc in feedback {
                    for &(t, tf) in index.doc_terms(doc) {
                        set.unigram[t] += tf as u64;
                    }
                }
                set.examples.push(ex);
            }
            Outcome::NoTerms => set.skipped.no_vocabulary_terms += 1,
            Outcome::NoMatches => set.skipped.no_matches += 1,
        }
    }
    if set.examples.is_empty() {
        return Err(Error::NoUsableQueries);
    }
    Ok(set)
}

/// p_n(w) ∝ U(w)^exponent over the whole vocabulary.
pub fn noise_distribution(unigram: &[u64], exponent: f64) -> Result<Vec<f64>> {
    if !(exponent > 0.0) {
        return Err(Error::InvalidArgument(format!("noise exponent must be positive, got {exponent}")));
    }
    let powered: Vec<f64> = unigram.iter().map(|&u| if u == 0 { 0.0 } else { (u as f64).powf(exponent) }).collect();
    let total: f64 = powered.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateUnigram);
    }
    Ok(powered.into_iter().map(|p| p / total).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// One line per query: `qid<TAB>query text<TAB>term:prob term:prob ...`.
pub fn write_training_set(path: &Path, vocab: &Vocabulary, set: &TrainingSet) -> Result<()> {
    let mut out = create(path)?;
    for ex in &set.examples {
        writeln!(out, "{}\t{}\t{}", ex.query_id, ex.text, ex.relevance.format_terms(vocab))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a training-pair file. Query text is re-tokenized against `index`.
pub fn read_training_set(path: &Path, index: &CorpusIndex, stopwords: &Stopwords) -> Result<TrainingSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (qid, text, dist) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::parse(path, i + 1, "expected `qid<TAB>query<TAB>term:prob ...`")),
        };
        let terms = index.vocab().lookup(&tokenize(text, stopwords));
        if terms.is_empty() {
            return Err(Error::parse(path, i + 1, "query has no in-vocabulary terms"));
        }
        let relevance = RelevanceDistribution::parse_terms(qid, dist, index.vocab())
            .map_err(|m| Error::parse(path, i + 1, m))?;
        examples.push(TrainingExample {
            query_id: qid.to_string(),
            text: text.to_string(),
            terms,
            relevance,
        });
    }
    if examples.is_empty() {
        return Err(Error::NoUsableQueries);
    }
    Ok(TrainingSet {
        examples,
        unigram: Vec::new(),
        skipped: SkipCounts::default(),
    })
}

/// `term<TAB>prob` for every term with non-zero noise probability.
pub fn write_noise_table(path: &Path, vocab: &Vocabulary, noise: &[f64]) -> Result<()> {
    let mut out = create(path)?;
    for (t, &p) in noise.iter().enumerate() {
        if p > 0.0 {
            writeln!(out, "{}\t{}", vocab.term(t), p).map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_noise_table(path: &Path, vocab: &Vocabulary) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut noise = vec![0.0; vocab.len()];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (term, p) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `term<TAB>prob`"))?;
        let id = vocab
            .id(term)
            .ok_or_else(|| Error::parse(path, i + 1, format!("unknown term `{term}`")))?;
        noise[id] = p
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad probability `{p}`")))?;
    }
    Ok(noise)
}

pub fn training_manifest(set: &TrainingSet, config: &PipelineConfig, queries: usize) -> Manifest {
    let mut m = config.manifest();
    m.set("queries.input", queries)
        .set("queries.kept", set.len())
        .set("queries.skipped_no_vocabulary_terms", set.skipped.no_vocabulary_terms)
        .set("queries.skipped_no_matches", set.skipped.no_matches);
    m
}
