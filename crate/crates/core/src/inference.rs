//! Read-only scoring with a trained model.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::{TermId, Vocabulary};
use crate::manifest::Manifest;
use crate::model::{dot, EmbeddingModel, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSemantics {
    /// Renormalized p(w|q) from the hierarchical softmax.
    Probability,
    /// Renormalized σ(w·q): under a uniform term prior, ranking by the
    /// posterior equals ranking by p(w|q, R=1).
    Posterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermScoreList {
    pub query_id: String,
    /// Descending score, ascending term id on ties; scores sum to 1.
    pub entries: Vec<(TermId, f64)>,
    pub semantics: ScoreSemantics,
}

impl TermScoreList {
    pub fn write<W: Write>(&self, out: &mut W, vocab: &Vocabulary) -> std::io::Result<()> {
        for &(t, s) in &self.entries {
            writeln!(out, "{}\t{}\t{}", self.query_id, vocab.term(t), s)?;
        }
        Ok(())
    }
}

/// Unnormalized per-term scores for every vocabulary term.
pub fn raw_term_scores(model: &EmbeddingModel, query: &[TermId]) -> Result<(Vec<f64>, ScoreSemantics)> {
    let q = model.project_query(query)?;
    match model.kind {
        ModelKind::Rlm => Ok((model.hs_distribution(&q)?, ScoreSemantics::Probability)),
        ModelKind::Rpe => {
            let scores = (0..model.vocab_size())
                .map(|t| model.relevance_posterior(t, &q))
                .collect::<Result<_>>()?;
            Ok((scores, ScoreSemantics::Posterior))
        }
    }
}

/// The `m` best-scoring terms for `query`, renormalized over those `m`.
pub fn term_distribution(model: &EmbeddingModel, query: &[TermId], m: usize) -> Result<TermScoreList> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let (scores, semantics) = raw_term_scores(model, query)?;
    let mut entries: Vec<(TermId, f64)> = scores.into_iter().enumerate().collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.truncate(m);
    let total: f64 = entries.iter().map(|e| e.1).sum();
    if total > 0.0 {
        entries.iter_mut().for_each(|e| e.1 /= total);
    }
    Ok(TermScoreList {
        query_id: String::new(),
        entries,
        semantics,
    })
}

/// Cosine similarity.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("vectors differ in dimension".into()));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Loads a checkpoint and checks that its terms line up with `vocab`.
pub fn load_model(prefix: &Path, vocab: &Vocabulary) -> Result<(EmbeddingModel, Manifest)> {
    let (model, manifest) = EmbeddingModel::load(prefix)?;
    check_vocabulary(&model, vocab)?;
    Ok((model, manifest))
}

pub fn check_vocabulary(model: &EmbeddingModel, vocab: &Vocabulary) -> Result<()> {
    if model.terms.as_slice() != vocab.terms() {
        return Err(Error::InvalidArgument(format!(
            "model vocabulary ({} terms) does not match the index vocabulary ({} terms)",
            model.vocab_size(),
            vocab.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::huffman::HuffmanTree;
    use crate::model::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn terms(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    fn random_rlm(n: usize, d: usize, seed: u64) -> EmbeddingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
        let tree = HuffmanTree::build(&weights).unwrap();
        let mut m = EmbeddingModel::init(ModelKind::Rlm, terms(n), d, Some(tree), false, &mut rng).unwrap();
        for x in m.node_vectors.as_mut_slice() {
            *x = rng.random_range(-1.0..1.0);
        }
        for x in m.query_vectors.as_mut_slice() {
            *x = rng.random_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn full_rlm_distribution_sums_to_one() {
        let m = random_rlm(8, 4, 1);
        let (raw, _) = raw_term_scores(&m, &[1, 3]).unwrap();
        assert!((raw.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let list = term_distribution(&m, &[1, 3], 8).unwrap();
        assert_eq!(list.entries.len(), 8);
        assert_eq!(list.semantics, ScoreSemantics::Probability);
        assert!((list.entries.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_m_matches_enumeration() {
        let m = random_rlm(8, 4, 2);
        let q = m.project_query(&[0, 5]).unwrap();
        let mut brute: Vec<(usize, f64)> = (0..8).map(|t| (t, m.hs_prob(t, &q).unwrap())).collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let list = term_distribution(&m, &[0, 5], 3).unwrap();
        let top: Vec<usize> = list.entries.iter().map(|e| e.0).collect();
        assert_eq!(top, brute.iter().take(3).map(|e| e.0).collect::<Vec<_>>());
        let mass: f64 = brute.iter().take(3).map(|e| e.1).sum();
        for (e, b) in list.entries.iter().zip(&brute) {
            assert!((e.1 - b.1 / mass).abs() < 1e-12);
        }
    }

    #[test]
    fn rpe_equal_rows_tie_break_by_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = EmbeddingModel::init(ModelKind::Rpe, terms(5), 2, None, false, &mut rng).unwrap();
        m.term_vectors = Matrix::from_vec(5, 2, [0.2, 0.1].repeat(5));
        let list = term_distribution(&m, &[0], 3).unwrap();
        assert_eq!(list.entries.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(list.entries.iter().all(|e| (e.1 - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(list.semantics, ScoreSemantics::Posterior);
        assert!(term_distribution(&m, &[0], 0).is_err());
        assert!(term_distribution(&m, &[], 2).is_err());
    }

    #[test]
    fn cosine_values() {
        assert!((similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::ZeroVector)));
    }
}
