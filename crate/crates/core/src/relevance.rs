//! Relevance-model (RM1) estimation from a feedback set.
//!
//! For a query `q` and its top-ranked documents `F`, every term gets the
//! unnormalized weight
//!
//! ```text
//! Σ_{d ∈ F} p_ml(w|d) · Π_{w' ∈ q} p_μ(w'|d)
//! ```
//!
//! which is then normalized over the union of the feedback documents' terms.
//! The generation factor uses the document's maximum-likelihood model and the
//! query-likelihood factor the Dirichlet-smoothed one. The product is taken
//! in log space and shifted by its maximum over `F`; the shift cancels under
//! normalization.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::index::{CorpusIndex, TermId, Vocabulary};
use crate::retrieval::{term_counts, weighted_log_likelihood, RankedList};

pub const DEFAULT_FEEDBACK_DOCS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceDistribution {
    pub query_id: String,
    /// Non-zero probabilities ordered by term id.
    probs: Vec<(TermId, f64)>,
    pub source_docs: usize,
}

impl RelevanceDistribution {
    /// Builds a distribution from raw non-negative weights, dropping zeros and
    /// normalizing to unit mass.
    pub fn from_weights(
        query_id: impl Into<String>,
        weights: impl IntoIterator<Item = (TermId, f64)>,
        source_docs: usize,
    ) -> Result<Self> {
        let mut merged: BTreeMap<TermId, f64> = BTreeMap::new();
        for (t, w) in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!("bad weight {w} for term {t}")));
            }
            if w > 0.0 {
                *merged.entry(t).or_insert(0.0) += w;
            }
        }
        let total: f64 = merged.values().sum();
        if merged.is_empty() || !(total > 0.0) {
            return Err(Error::EmptyTarget);
        }
        Ok(RelevanceDistribution {
            query_id: query_id.into(),
            probs: merged.into_iter().map(|(t, w)| (t, w / total)).collect(),
            source_docs,
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

    pub fn support_len(&self) -> usize {
        self.probs.len()
    }

    /// Entries ordered by descending probability, then ascending term id.
    pub fn ranked(&self) -> Vec<(TermId, f64)> {
        let mut v = self.probs.clone();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    /// Keeps the `max_terms` most probable terms and renormalizes.
    pub fn truncate(&self, max_terms: usize) -> Self {
        if max_terms == 0 || max_terms >= self.probs.len() {
            return self.clone();
        }
        let mut top = self.ranked();
        top.truncate(max_terms);
        let total: f64 = top.iter().map(|&(_, p)| p).sum();
        let mut probs: Vec<(TermId, f64)> = top.into_iter().map(|(t, p)| (t, p / total)).collect();
        probs.sort_unstable_by_key(|&(t, _)| t);
        RelevanceDistribution {
            query_id: self.query_id.clone(),
            probs,
            source_docs: self.source_docs,
        }
    }

    /// `term:prob term:prob ...` in descending probability order.
    pub fn format_terms(&self, vocab: &Vocabulary) -> String {
        let mut s = String::new();
        for (i, (t, p)) in self.ranked().into_iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{}:{}", vocab.term(t), p);
        }
        s
    }

    pub fn parse_terms(query_id: &str, field: &str, vocab: &Vocabulary) -> std::result::Result<Self, String> {
        let mut weights = Vec::new();
        for item in field.split_whitespace() {
            let (term, prob) = item
                .rsplit_once(':')
                .ok_or_else(|| format!("expected `term:prob`, got `{item}`"))?;
            let id = vocab.id(term).ok_or_else(|| format!("unknown term `{term}`"))?;
            let p: f64 = prob.parse().map_err(|_| format!("bad probability `{prob}`"))?;
            weights.push((id, p));
        }
        Self::from_weights(query_id, weights, 0).map_err(|e| e.to_string())
    }
}

/// Estimates p(w|R) for `query` from the documents in `feedback`.
pub fn estimate_rm(
    index: &CorpusIndex,
    query: &[TermId],
    feedback: &RankedList,
    mu: f64,
) -> Result<RelevanceDistribution> {
    if feedback.is_empty() {
        return Err(Error::EmptyFeedback);
    }
    if query.is_empty() {
        return Err(Error::NoVocabularyTerms);
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    for &t in query {
        index.check_term(t)?;
    }
    let counts: Vec<(TermId, f64)> = term_counts(query)
        .into_iter()
        .map(|(t, c)| (t, c as f64))
        .collect();

    let mut log_ql = Vec::with_capacity(feedback.len());
    for doc in feedback.docs() {
        index.check_doc(doc)?;
        log_ql.push(weighted_log_likelihood(index, &counts, doc, mu));
    }
    let shift = log_ql.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut scores: BTreeMap<TermId, f64> = BTreeMap::new();
    for (doc, lq) in feedback.docs().zip(&log_ql) {
        let len = index.doc_len(doc);
        if len == 0 {
            continue;
        }
        let doc_weight = (lq - shift).exp();
        for &(t, tf) in index.doc_terms(doc) {
            *scores.entry(t).or_insert(0.0) += tf as f64 / len as f64 * doc_weight;
        }
    }
    RelevanceDistribution::from_weights(feedback.query_id.clone(), scores, feedback.len())
        .map_err(|_| Error::EmptyFeedback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, IndexOptions};
    use crate::retrieval::{ScoredDoc, DEFAULT_MU};
    use crate::text::Stopwords;

    fn index(docs: &[(&str, &str)]) -> CorpusIndex {
        build_index(
            docs.iter().map(|(a, b)| (a.to_string(), b.to_string())),
            &Stopwords::empty(),
            &IndexOptions::default(),
        )
        .unwrap()
    }

    fn feedback(docs: &[usize]) -> RankedList {
        RankedList {
            query_id: "q".into(),
            entries: docs.iter().map(|&doc| ScoredDoc { doc, score: 0.0 }).collect(),
        }
    }

    #[test]
    fn single_document_feedback() {
        let idx = index(&[("d1", "a b"), ("d2", "c d")]);
        let a = idx.vocab().id("a").unwrap();
        let b = idx.vocab().id("b").unwrap();
        let rm = estimate_rm(&idx, &[a], &feedback(&[0]), DEFAULT_MU).unwrap();
        assert_eq!(rm.probs(), &[(a, 0.5), (b, 0.5)]);
        assert_eq!(rm.prob(idx.vocab().id("c").unwrap()), 0.0);
    }

    #[test]
    fn single_document_equals_mle() {
        let idx = index(&[("d1", "x y y z z z"), ("d2", "x w")]);
        let q = idx.vocab().lookup(&["w", "x"]);
        let rm = estimate_rm(&idx, &q, &feedback(&[0]), 7.0).unwrap();
        for t in 0..idx.vocab().len() {
            assert!((rm.prob(t) - idx.mle_prob(t, 0).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn errors() {
        let idx = index(&[("d1", "a b")]);
        assert!(matches!(
            estimate_rm(&idx, &[0], &feedback(&[]), 10.0),
            Err(Error::EmptyFeedback)
        ));
        assert!(matches!(
            estimate_rm(&idx, &[], &feedback(&[0]), 10.0),
            Err(Error::NoVocabularyTerms)
        ));
    }

    #[test]
    fn truncation_renormalizes() {
        let rm = RelevanceDistribution::from_weights("q", [(0, 5.0), (1, 3.0), (2, 2.0)], 1).unwrap();
        let t = rm.truncate(2);
        assert_eq!(t.support_len(), 2);
        assert!((t.prob(0) - 0.625).abs() < 1e-15);
        assert!((t.prob(1) - 0.375).abs() < 1e-15);
        assert_eq!(t.prob(2), 0.0);
        assert_eq!(rm.truncate(0), rm);
    }

    #[test]
    fn term_line_round_trip() {
        let idx = index(&[("d1", "a b c")]);
        let rm = RelevanceDistribution::from_weights("q", [(0, 1.0), (1, 2.0), (2, 7.0)], 1).unwrap();
        let line = rm.format_terms(idx.vocab());
        assert!(line.starts_with("c:0.7"));
        let back = RelevanceDistribution::parse_terms("q", &line, idx.vocab()).unwrap();
        assert_eq!(back.probs(), rm.probs());
        assert!(RelevanceDistribution::parse_terms("q", "zz:1", idx.vocab()).is_err());
    }
}
