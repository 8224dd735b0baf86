//! Generators and brute-force oracles shared by the integration tests.
//!
//! Oracles work from raw token lists and model fields; they never call the
//! scoring or gradient code they are checking.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relemb::huffman::HuffmanTree;
use relemb::model::{EmbeddingModel, ModelKind};
use relemb::{build_index, tokenize, CorpusIndex, IndexOptions, Stopwords};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random documents over words `w0..w{vocab}`, with a skewed word choice so
/// that term frequencies vary.
pub fn random_corpus<R: Rng>(rng: &mut R, docs: usize, vocab: usize, max_len: usize) -> Vec<(String, String)> {
    (0..docs)
        .map(|i| {
            let len = rng.random_range(1..=max_len);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let r: f64 = rng.random();
                    format!("w{}", ((r * r) * vocab as f64) as usize)
                })
                .collect();
            (format!("doc{i}"), words.join(" "))
        })
        .collect()
}

pub fn index_of(docs: &[(String, String)]) -> CorpusIndex {
    build_index(docs.to_vec(), &Stopwords::empty(), &IndexOptions::default()).unwrap()
}

/// Raw tokenized documents and collection statistics.
pub struct RawCorpus {
    pub names: Vec<String>,
    pub tokens: Vec<Vec<String>>,
    pub cf: BTreeMap<String, u64>,
    pub total: u64,
}

impl RawCorpus {
    pub fn new(docs: &[(String, String)]) -> Self {
        let stop = Stopwords::empty();
        let tokens: Vec<Vec<String>> = docs.iter().map(|(_, t)| tokenize(t, &stop)).collect();
        let mut cf = BTreeMap::new();
        for d in &tokens {
            for t in d {
                *cf.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let total = cf.values().sum();
        RawCorpus {
            names: docs.iter().map(|d| d.0.clone()).collect(),
            tokens,
            cf,
            total,
        }
    }

    pub fn tf(&self, term: &str, doc: usize) -> u64 {
        self.tokens[doc].iter().filter(|t| *t == term).count() as u64
    }

    pub fn p_c(&self, term: &str) -> f64 {
        self.cf[term] as f64 / self.total as f64
    }

    pub fn smoothed(&self, term: &str, doc: usize, mu: f64) -> f64 {
        (self.tf(term, doc) as f64 + mu * self.p_c(term)) / (self.tokens[doc].len() as f64 + mu)
    }

    /// Exhaustive ranking by Σ_w weight(w)·log p_μ(w|d) over documents that
    /// contain at least one weighted term. Terms are summed in lexicographic
    /// order. Returns document indices.
    pub fn rank(&self, weights: &BTreeMap<String, f64>, mu: f64) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = (0..self.tokens.len())
            .filter(|&d| weights.keys().any(|w| self.tf(w, d) > 0))
            .map(|d| {
                let s: f64 = weights.iter().map(|(w, c)| c * self.smoothed(w, d, mu).ln()).sum();
                (d, s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
    }

    /// p(w|R) ∝ Σ_{d∈F} p_ml(w|d) · Π_{q∈query} p_μ(q|d), by direct products.
    pub fn relevance_model(&self, query: &[String], feedback: &[usize], mu: f64) -> BTreeMap<String, f64> {
        let mut scores: BTreeMap<String, f64> = BTreeMap::new();
        for w in self.cf.keys() {
            let mut s = 0.0;
            for &d in feedback {
                let len = self.tokens[d].len() as f64;
                let mut ql = 1.0;
                for q in query {
                    ql *= self.smoothed(q, d, mu);
                }
                s += self.tf(w, d) as f64 / len * ql;
            }
            if s > 0.0 {
                scores.insert(w.clone(), s);
            }
        }
        let total: f64 = scores.values().sum();
        scores.values_mut().for_each(|v| *v /= total);
        scores
    }
}

/// Distinct word set of a corpus, as a sorted list.
pub fn words_of(raw: &RawCorpus) -> Vec<String> {
    raw.cf.keys().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn terms(n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (0..n).map(|i| format!("t{i:0width$}")).collect()
}

/// An RLM model with a Huffman tree over random weights and every
/// parameter drawn from U(-scale, scale).
pub fn random_rlm<R: Rng>(rng: &mut R, n: usize, d: usize, scale: f64) -> EmbeddingModel {
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..10.0)).collect();
    let tree = HuffmanTree::build(&weights).unwrap();
    let mut m = EmbeddingModel::init(ModelKind::Rlm, terms(n), d, Some(tree), false, rng).unwrap();
    for x in m.query_vectors.as_mut_slice().iter_mut().chain(m.node_vectors.as_mut_slice()) {
        *x = rng.random_range(-scale..scale);
    }
    m
}

pub fn random_rpe<R: Rng>(rng: &mut R, n: usize, d: usize, scale: f64, bias: bool) -> EmbeddingModel {
    let mut m = EmbeddingModel::init(ModelKind::Rpe, terms(n), d, None, bias, rng).unwrap();
    for x in m.query_vectors.as_mut_slice().iter_mut().chain(m.term_vectors.as_mut_slice()) {
        *x = rng.random_range(-scale..scale);
    }
    if let Some(b) = &mut m.bias {
        b.iter_mut().for_each(|x| *x = rng.random_range(-scale..scale));
    }
    m
}

pub fn mean_query_vector(m: &EmbeddingModel, query: &[usize]) -> Vec<f64> {
    let d = m.dim();
    let mut q = vec![0.0; d];
    for &t in query {
        for (qi, x) in q.iter_mut().zip(m.query_vectors.row(t)) {
            *qi += x;
        }
    }
    q.iter_mut().for_each(|x| *x /= query.len() as f64);
    q
}

fn ln_sigmoid(x: f64) -> f64 {
    -(1.0 + (-x).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Σ_w p(w) Σ_{steps} log σ(sign · node·q), straight from the model fields.
pub fn rlm_objective(m: &EmbeddingModel, query: &[usize], target: &[(usize, f64)]) -> f64 {
    let q = mean_query_vector(m, query);
    let tree = m.tree.as_ref().unwrap();
    target
        .iter()
        .map(|&(t, p)| {
            p * tree
                .path(t)
                .iter()
                .map(|s| ln_sigmoid(s.sign as f64 * dot(m.node_vectors.row(s.node), &q)))
                .sum::<f64>()
        })
        .sum()
}

/// p(w|q) by walking the tree with explicit sigmoid products.
pub fn hs_prob_oracle(m: &EmbeddingModel, term: usize, q: &[f64]) -> f64 {
    m.tree
        .as_ref()
        .unwrap()
        .path(term)
        .iter()
        .map(|s| 1.0 / (1.0 + (-(s.sign as f64) * dot(m.node_vectors.row(s.node), q)).exp()))
        .product()
}

pub fn rpe_objective(m: &EmbeddingModel, query: &[usize], pos: &[usize], neg: &[usize]) -> f64 {
    let q = mean_query_vector(m, query);
    let logit = |t: usize| dot(m.term_vectors.row(t), &q) + m.bias.as_ref().map_or(0.0, |b| b[t]);
    pos.iter().map(|&t| ln_sigmoid(logit(t))).sum::<f64>() + neg.iter().map(|&t| ln_sigmoid(-logit(t))).sum::<f64>()
}

/// |a − b| relative to the larger magnitude; absolute below `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}
