//! Query-likelihood and KL-divergence retrieval with Dirichlet smoothing.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::{CorpusIndex, DocId, TermId};

pub const DEFAULT_MU: f64 = 1500.0;

/// Sparse query language model over term ids, sorted by term id.
#[derive(Debug, Clone)]
pub struct QueryLanguageModel {
    probs: Vec<(TermId, f64)>,
    /// Term counts and query length when built by [`QueryLanguageModel::mle`].
    /// KL ranking then sums counts exactly as query likelihood does, so the
    /// two orderings agree even on floating-point ties.
    counts: Option<(Vec<(TermId, f64)>, f64)>,
}

impl PartialEq for QueryLanguageModel {
    fn eq(&self, other: &Self) -> bool {
        self.probs == other.probs
    }
}

impl QueryLanguageModel {
    /// Validates positivity and unit mass (within 1e-6); merges duplicate ids.
    pub fn new(entries: impl IntoIterator<Item = (TermId, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<TermId, f64> = BTreeMap::new();
        for (t, p) in entries {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "query model probability for term {t} must be positive, got {p}"
                )));
            }
            *merged.entry(t).or_insert(0.0) += p;
        }
        if merged.is_empty() {
            return Err(Error::EmptyQueryModel);
        }
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "query model sums to {total}, expected 1"
            )));
        }
        Ok(QueryLanguageModel {
            probs: merged.into_iter().collect(),
            counts: None,
        })
    }

    /// Term-frequency maximum-likelihood model of a query.
    pub fn mle(query: &[TermId]) -> Result<Self> {
        if query.is_empty() {
            return Err(Error::NoVocabularyTerms);
        }
        let len = query.len() as f64;
        let counts: Vec<(TermId, f64)> = term_counts(query).into_iter().map(|(t, c)| (t, c as f64)).collect();
        let probs = counts.iter().map(|&(t, c)| (t, c / len)).collect();
        Ok(QueryLanguageModel {
            probs,
            counts: Some((counts, len)),
        })
    }

    pub fn probs(&self) -> &[(TermId, f64)] {
        &self.probs
    }

    pub fn prob(&self, term: TermId) -> f64 {
        match self.probs.binary_search_by_key(&term, |&(t, _)| t) {
            Ok(i) => self.probs[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Occurrence counts of each distinct term, ordered by term id.
pub fn term_counts(query: &[TermId]) -> Vec<(TermId, u32)> {
    let mut counts: BTreeMap<TermId, u32> = BTreeMap::new();
    for &t in query {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDoc {
    pub doc: DocId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<ScoredDoc>,
}

impl RankedList {
    pub fn with_query_id(mut self, qid: impl Into<String>) -> Self {
        self.query_id = qid.into();
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn docs(&self) -> impl Iterator<Item = DocId> + '_ {
        self.entries.iter().map(|e| e.doc)
    }

    pub fn doc_names<'a>(&'a self, index: &'a CorpusIndex) -> Vec<&'a str> {
        self.entries.iter().map(|e| index.doc_name(e.doc)).collect()
    }
}

/// (c(w,d) + μ·p(w|C)) / (|d| + μ)
pub fn dirichlet_prob(index: &CorpusIndex, term: TermId, doc: DocId, mu: f64) -> Result<f64> {
    index.check_doc(doc)?;
    index.check_term(term)?;
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    Ok(smoothed(index, term, doc, mu))
}

#[inline]
fn smoothed(index: &CorpusIndex, term: TermId, doc: DocId, mu: f64) -> f64 {
    (index.tf(term, doc) as f64 + mu * index.collection_prob(term)) / (index.doc_len(doc) as f64 + mu)
}

/// Log-likelihood of a weighted term set under the smoothed model of `doc`.
/// Terms are visited in the given order, which callers keep sorted by id.
pub(crate) fn weighted_log_likelihood(
    index: &CorpusIndex,
    weights: &[(TermId, f64)],
    doc: DocId,
    mu: f64,
) -> f64 {
    weights
        .iter()
        .map(|&(t, w)| w * smoothed(index, t, doc, mu).ln())
        .sum()
}

/// Ranks by the weighted log-likelihood; reported scores are divided by
/// `divisor` after ranking.
fn rank_candidates(index: &CorpusIndex, weights: &[(TermId, f64)], divisor: f64, k: usize, mu: f64) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    let mut seen = HashSet::new();
    let mut candidates: Vec<DocId> = Vec::new();
    for &(t, _) in weights {
        index.check_term(t)?;
        for p in index.postings(t) {
            if seen.insert(p.doc) {
                candidates.push(p.doc);
            }
        }
    }
    let mut entries: Vec<ScoredDoc> = candidates
        .into_iter()
        .map(|doc| ScoredDoc {
            doc,
            score: weighted_log_likelihood(index, weights, doc, mu),
        })
        .collect();
    sort_ranked(&mut entries);
    entries.truncate(k);
    if divisor != 1.0 {
        entries.iter_mut().for_each(|e| e.score /= divisor);
    }
    Ok(RankedList {
        query_id: String::new(),
        entries,
    })
}

/// Descending score, ascending doc id on ties.
pub fn sort_ranked(entries: &mut [ScoredDoc]) {
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc)));
}

/// Ranks documents sharing at least one term with `query` by
/// Σ c(w,q)·log p_μ(w|d). An empty `query` (every token out of vocabulary)
/// is reported as [`Error::NoVocabularyTerms`]; an `Ok` empty list means no
/// document matched.
pub fn ql_retrieve(index: &CorpusIndex, query: &[TermId], k: usize, mu: f64) -> Result<RankedList> {
    if query.is_empty() {
        return Err(Error::NoVocabularyTerms);
    }
    let weights: Vec<(TermId, f64)> = term_counts(query)
        .into_iter()
        .map(|(t, c)| (t, c as f64))
        .collect();
    rank_candidates(index, &weights, 1.0, k, mu)
}

/// Ranks documents by Σ p(w|θ_q)·log p_μ(w|d) over the model's support.
pub fn kl_retrieve(index: &CorpusIndex, qlm: &QueryLanguageModel, k: usize, mu: f64) -> Result<RankedList> {
    if qlm.is_empty() {
        return Err(Error::EmptyQueryModel);
    }
    if qlm.probs().iter().all(|&(t, _)| t >= index.vocab().len()) {
        return Err(Error::NoVocabularyTerms);
    }
    match &qlm.counts {
        Some((counts, len)) => rank_candidates(index, counts, *len, k, mu),
        None => rank_candidates(index, qlm.probs(), 1.0, k, mu),
    }
}

/// `qid<TAB>query text` per line.
pub fn read_queries(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `qid<TAB>query`"))?;
        out.push((qid.to_string(), text.to_string()));
    }
    Ok(out)
}

/// Writes `qid Q0 docid rank score tag` lines.
pub fn write_trec_run<W: Write>(
    out: &mut W,
    index: &CorpusIndex,
    lists: &[RankedList],
    tag: &str,
) -> std::io::Result<()> {
    for list in lists {
        for (rank, e) in list.entries.iter().enumerate() {
            writeln!(
                out,
                "{} Q0 {} {} {} {}",
                list.query_id,
                index.doc_name(e.doc),
                rank + 1,
                e.score,
                tag
            )?;
        }
    }
    Ok(())
}

/// A TREC run keyed by query id; each ranking holds `(doc name, score)` in
/// rank order.
pub type TrecRun = BTreeMap<String, Vec<(String, f64)>>;

pub fn read_trec_run(path: &Path) -> Result<TrecRun> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(Error::parse(path, i + 1, "expected `qid Q0 docid rank score tag`"));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad rank `{}`", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad score `{}`", fields[4])))?;
        rows.entry(fields[0].to_string())
            .or_default()
            .push((rank, fields[2].to_string(), score));
    }
    Ok(rows
        .into_iter()
        .map(|(q, mut v)| {
            v.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            (q, v.into_iter().map(|(_, d, s)| (d, s)).collect())
        })
        .collect())
}
