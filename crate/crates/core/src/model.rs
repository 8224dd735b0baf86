//! The relevance-based embedding network.
//!
//! A query is projected into the query embedding space by averaging the
//! query-side rows of its terms. Two output layers are supported:
//!
//! * [`ModelKind::Rlm`] models p(w|q) as a softmax over the vocabulary,
//!   approximated by a Huffman-coded hierarchical softmax. Training maximizes
//!   Σ_w p(w|R) · log p̂(w|q) summed exactly over the relevance support.
//! * [`ModelKind::Rpe`] models p(R=1|w,q) = σ(w·q [+ b_w]) and is trained
//!   with sampled positives from p(w|R) and negatives from a noise table.
//!
//! Gradients are computed against a read-only [`ParamView`] and returned as a
//! sparse [`Gradient`] holding the ascent direction of the log-likelihood, so
//! the same code serves single-threaded training and lock-free workers.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;
use crate::index::TermId;
use crate::manifest::Manifest;
use crate::retrieval::term_counts;

pub const DEFAULT_DIM: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Rlm,
    Rpe,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rlm => "rlm",
            ModelKind::Rpe => "rpe",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rlm" => Ok(ModelKind::Rlm),
            "rpe" => Ok(ModelKind::Rpe),
            other => Err(Error::InvalidArgument(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has wrong length");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log σ(x) without overflow for large |x|.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Read access to trainable parameters.
///
/// For RLM models the "output rows" are the hierarchical-softmax node
/// vectors; for RPE models they are the term-side embeddings.
pub trait ParamView {
    fn dim(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn read_query_row(&self, term: TermId, out: &mut [f64]);
    fn read_output_row(&self, row: usize, out: &mut [f64]);
    fn output_bias(&self, row: usize) -> f64;
}

/// Sparse gradient of the log-likelihood (ascent direction).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    /// Negated objective evaluated before any update.
    pub loss: f64,
    pub query_rows: Vec<(TermId, Vec<f64>)>,
    pub output_rows: Vec<(usize, Vec<f64>)>,
    pub bias: Vec<(usize, f64)>,
}

fn check_terms(view: &impl ParamView, terms: impl IntoIterator<Item = TermId>) -> Result<()> {
    let n = view.vocab_size();
    for t in terms {
        if t >= n {
            return Err(Error::TermOutOfRange(t));
        }
    }
    Ok(())
}

/// Mean of the query-side rows over the query's tokens.
pub fn project_with(view: &impl ParamView, query: &[TermId]) -> Result<Vec<f64>> {
    if query.is_empty() {
        return Err(Error::NoVocabularyTerms);
    }
    check_terms(view, query.iter().copied())?;
    let d = view.dim();
    let mut q = vec![0.0; d];
    let mut row = vec![0.0; d];
    for (t, c) in term_counts(query) {
        view.read_query_row(t, &mut row);
        for (qi, ri) in q.iter_mut().zip(&row) {
            *qi += c as f64 * ri;
        }
    }
    let len = query.len() as f64;
    q.iter_mut().for_each(|x| *x /= len);
    Ok(q)
}

/// Spreads dJ/dq onto the query rows; a term occurring c times in a query of
/// length |q| receives c/|q| of it.
fn query_row_gradients(query: &[TermId], dq: &[f64]) -> Vec<(TermId, Vec<f64>)> {
    let len = query.len() as f64;
    term_counts(query)
        .into_iter()
        .map(|(t, c)| {
            let scale = c as f64 / len;
            (t, dq.iter().map(|g| g * scale).collect())
        })
        .collect()
}

/// Gradient of Σ_w p(w|R) · log p̂_hs(w|q) for one query.
pub fn rlm_gradient(
    view: &impl ParamView,
    tree: &HuffmanTree,
    query: &[TermId],
    target: &[(TermId, f64)],
) -> Result<Gradient> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    check_terms(view, target.iter().map(|&(t, _)| t))?;
    let q = project_with(view, query)?;
    let d = view.dim();

    // (node, score, coefficient) in first-visit order
    let mut nodes: Vec<(usize, f64, f64)> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut objective = 0.0;
    for &(term, weight) in target {
        for step in tree.path(term) {
            let i = *slot.entry(step.node).or_insert_with(|| {
                let mut row = vec![0.0; d];
                view.read_output_row(step.node, &mut row);
                let score = dot(&row, &q);
                rows.push(row);
                nodes.push((step.node, score, 0.0));
                nodes.len() - 1
            });
            let s = step.sign as f64;
            let x = s * nodes[i].1;
            objective += weight * log_sigmoid(x);
            nodes[i].2 += weight * s * (1.0 - sigmoid(x));
        }
    }

    let mut dq = vec![0.0; d];
    let mut output_rows = Vec::with_capacity(nodes.len());
    for (&(node, _, coeff), row) in nodes.iter().zip(&rows) {
        for (g, v) in dq.iter_mut().zip(row) {
            *g += coeff * v;
        }
        output_rows.push((node, q.iter().map(|x| coeff * x).collect()));
    }
    Ok(Gradient {
        loss: -objective,
        query_rows: query_row_gradients(query, &dq),
        output_rows,
        bias: Vec::new(),
    })
}

/// Gradient of Σ_pos log σ(w·q) + Σ_neg log(1 − σ(w·q)) for one query.
pub fn rpe_gradient(
    view: &impl ParamView,
    query: &[TermId],
    positives: &[TermId],
    negatives: &[TermId],
    with_bias: bool,
) -> Result<Gradient> {
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_terms(view, positives.iter().chain(negatives).copied())?;
    let q = project_with(view, query)?;
    let d = view.dim();

    // (term, positive count, negative count) in first-visit order
    let mut counts: Vec<(TermId, f64, f64)> = Vec::new();
    let mut slot: HashMap<TermId, usize> = HashMap::new();
    for (samples, positive) in [(positives, true), (negatives, false)] {
        for &t in samples {
            let i = *slot.entry(t).or_insert_with(|| {
                counts.push((t, 0.0, 0.0));
                counts.len() - 1
            });
            if positive {
                counts[i].1 += 1.0;
            } else {
                counts[i].2 += 1.0;
            }
        }
    }

    let mut objective = 0.0;
    let mut dq = vec![0.0; d];
    let mut row = vec![0.0; d];
    let mut output_rows = Vec::with_capacity(counts.len());
    let mut bias = Vec::new();
    for &(t, pos, neg) in &counts {
        view.read_output_row(t, &mut row);
        let x = dot(&row, &q) + view.output_bias(t);
        objective += pos * log_sigmoid(x) + neg * log_sigmoid(-x);
        let p = sigmoid(x);
        let coeff = pos * (1.0 - p) - neg * p;
        for (g, v) in dq.iter_mut().zip(&row) {
            *g += coeff * v;
        }
        output_rows.push((t, q.iter().map(|x| coeff * x).collect()));
        if with_bias {
            bias.push((t, coeff));
        }
    }
    Ok(Gradient {
        loss: -objective,
        query_rows: query_row_gradients(query, &dq),
        output_rows,
        bias,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub kind: ModelKind,
    pub terms: Vec<String>,
    /// W_Q: one query-side row per term.
    pub query_vectors: Matrix,
    /// W_w: one output row per term. Trained for RPE; RLM keeps its output
    /// parameters on the tree nodes and uses these rows only for the exact
    /// softmax.
    pub term_vectors: Matrix,
    /// One row per internal tree node (RLM only).
    pub node_vectors: Matrix,
    pub bias: Option<Vec<f64>>,
    pub tree: Option<HuffmanTree>,
}

impl EmbeddingModel {
    /// Query rows ~ U(−0.5/d, 0.5/d); output rows, node rows and bias start at
    /// zero. RLM models require a tree with one leaf per term.
    pub fn init<R: Rng + ?Sized>(
        kind: ModelKind,
        terms: Vec<String>,
        dim: usize,
        tree: Option<HuffmanTree>,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let n = terms.len();
        if n == 0 {
            return Err(Error::EmptyVocabulary);
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let half = 0.5 / dim as f64;
        let data = (0..n * dim).map(|_| rng.random_range(-half..half)).collect();
        let node_rows = match (kind, &tree) {
            (ModelKind::Rlm, Some(t)) => t.num_internal(),
            (ModelKind::Rlm, None) => {
                return Err(Error::InvalidArgument("an RLM model needs a Huffman tree".into()))
            }
            (ModelKind::Rpe, _) => 0,
        };
        if bias && kind == ModelKind::Rlm {
            return Err(Error::InvalidArgument(
                "the output bias is only defined for the RPE logistic layer".into(),
            ));
        }
        let model = EmbeddingModel {
            kind,
            terms,
            query_vectors: Matrix::from_vec(n, dim, data),
            term_vectors: Matrix::zeros(n, dim),
            node_vectors: Matrix::zeros(node_rows, dim),
            bias: bias.then(|| vec![0.0; n]),
            tree: if kind == ModelKind::Rlm { tree } else { None },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.terms.len();
        let d = self.query_vectors.cols();
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.query_vectors.rows() != n || self.term_vectors.rows() != n {
            return bad("embedding matrices do not match the vocabulary size");
        }
        if self.term_vectors.cols() != d || self.node_vectors.cols() != d {
            return bad("embedding matrices disagree on dimension");
        }
        if let Some(b) = &self.bias {
            if b.len() != n {
                return bad("bias length does not match the vocabulary size");
            }
        }
        match (self.kind, &self.tree) {
            (ModelKind::Rlm, Some(t)) => {
                if t.num_leaves() != n || self.node_vectors.rows() != t.num_internal() {
                    return bad("tree does not match the vocabulary");
                }
            }
            (ModelKind::Rlm, None) => return bad("RLM model without a tree"),
            (ModelKind::Rpe, Some(_)) => return bad("RPE model with a tree"),
            (ModelKind::Rpe, None) => {}
        }
        let all_finite = [&self.query_vectors, &self.term_vectors, &self.node_vectors]
            .iter()
            .all(|m| m.as_slice().iter().all(|x| x.is_finite()))
            && self.bias.iter().flatten().all(|x| x.is_finite());
        if !all_finite {
            return bad("model contains non-finite parameters");
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    pub fn dim(&self) -> usize {
        self.query_vectors.cols()
    }

    fn require(&self, kind: ModelKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::WrongModelKind {
                expected: kind.name(),
                found: self.kind.name(),
            })
        }
    }

    pub fn tree(&self) -> Option<&HuffmanTree> {
        self.tree.as_ref()
    }

    pub fn project_query(&self, query: &[TermId]) -> Result<Vec<f64>> {
        project_with(self, query)
    }

    /// Π over the term's path of σ(sign · node·q).
    pub fn hs_prob(&self, term: TermId, qvec: &[f64]) -> Result<f64> {
        self.require(ModelKind::Rlm)?;
        if term >= self.vocab_size() {
            return Err(Error::TermOutOfRange(term));
        }
        let tree = self.tree.as_ref().expect("validated RLM model has a tree");
        Ok(tree
            .path(term)
            .iter()
            .map(|s| sigmoid(s.sign as f64 * dot(self.node_vectors.row(s.node), qvec)))
            .product())
    }

    /// hs_prob for every term, scoring each internal node once.
    pub fn hs_distribution(&self, qvec: &[f64]) -> Result<Vec<f64>> {
        self.require(ModelKind::Rlm)?;
        let tree = self.tree.as_ref().expect("validated RLM model has a tree");
        let scores: Vec<f64> = (0..tree.num_internal())
            .map(|i| dot(self.node_vectors.row(i), qvec))
            .collect();
        Ok(tree
            .paths()
            .iter()
            .map(|path| path.iter().map(|s| sigmoid(s.sign as f64 * scores[s.node])).product())
            .collect())
    }

    fn logit(&self, term: TermId, qvec: &[f64]) -> f64 {
        dot(self.term_vectors.row(term), qvec) + self.bias.as_ref().map_or(0.0, |b| b[term])
    }

    /// Exact softmax over the term-side rows, with the bias when present.
    pub fn softmax_prob(&self, term: TermId, qvec: &[f64]) -> Result<f64> {
        if term >= self.vocab_size() {
            return Err(Error::TermOutOfRange(term));
        }
        let logits: Vec<f64> = (0..self.vocab_size()).map(|w| self.logit(w, qvec)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        Ok((logits[term] - max).exp() / z)
    }

    /// p̂(R=1|w,q) = σ(w·q [+ b_w]).
    pub fn relevance_posterior(&self, term: TermId, qvec: &[f64]) -> Result<f64> {
        self.require(ModelKind::Rpe)?;
        if term >= self.vocab_size() {
            return Err(Error::TermOutOfRange(term));
        }
        Ok(sigmoid(self.logit(term, qvec)))
    }

    pub fn apply(&mut self, grad: &Gradient, scale: f64) {
        for (t, g) in &grad.query_rows {
            for (p, x) in self.query_vectors.row_mut(*t).iter_mut().zip(g) {
                *p += scale * x;
            }
        }
        let output = match self.kind {
            ModelKind::Rlm => &mut self.node_vectors,
            ModelKind::Rpe => &mut self.term_vectors,
        };
        for (r, g) in &grad.output_rows {
            for (p, x) in output.row_mut(*r).iter_mut().zip(g) {
                *p += scale * x;
            }
        }
        if let Some(b) = &mut self.bias {
            for &(t, g) in &grad.bias {
                b[t] += scale * g;
            }
        }
    }

    pub fn rlm_gradient(&self, query: &[TermId], target: &[(TermId, f64)]) -> Result<Gradient> {
        self.require(ModelKind::Rlm)?;
        rlm_gradient(self, self.tree.as_ref().unwrap(), query, target)
    }

    pub fn rpe_gradient(&self, query: &[TermId], positives: &[TermId], negatives: &[TermId]) -> Result<Gradient> {
        self.require(ModelKind::Rpe)?;
        rpe_gradient(self, query, positives, negatives, self.bias.is_some())
    }

    /// One gradient-ascent step on the weighted hierarchical-softmax
    /// log-likelihood; returns the negated objective before the update.
    pub fn rlm_step(&mut self, query: &[TermId], target: &[(TermId, f64)], lr: f64) -> Result<f64> {
        let grad = self.rlm_gradient(query, target)?;
        self.apply(&grad, lr);
        Ok(grad.loss)
    }

    /// One gradient-ascent step on the logistic objective; returns the
    /// negated objective before the update.
    pub fn rpe_step(&mut self, query: &[TermId], positives: &[TermId], negatives: &[TermId], lr: f64) -> Result<f64> {
        let grad = self.rpe_gradient(query, positives, negatives)?;
        self.apply(&grad, lr);
        Ok(grad.loss)
    }
}

impl ParamView for EmbeddingModel {
    fn dim(&self) -> usize {
        self.query_vectors.cols()
    }

    fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    fn read_query_row(&self, term: TermId, out: &mut [f64]) {
        out.copy_from_slice(self.query_vectors.row(term));
    }

    fn read_output_row(&self, row: usize, out: &mut [f64]) {
        match self.kind {
            ModelKind::Rlm => out.copy_from_slice(self.node_vectors.row(row)),
            ModelKind::Rpe => out.copy_from_slice(self.term_vectors.row(row)),
        }
    }

    fn output_bias(&self, row: usize) -> f64 {
        match (&self.bias, self.kind) {
            (Some(b), ModelKind::Rpe) => b[row],
            _ => 0.0,
        }
    }
}

/// File locations of a checkpoint written under a common prefix.
#[derive(Debug, Clone)]
pub struct CheckpointPaths {
    pub manifest: PathBuf,
    pub query_vectors: PathBuf,
    pub term_vectors: PathBuf,
    pub bias: PathBuf,
    pub tree: PathBuf,
    pub node_vectors: PathBuf,
}

impl CheckpointPaths {
    pub fn new(prefix: &Path) -> Self {
        let with = |ext: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        CheckpointPaths {
            manifest: with(".manifest"),
            query_vectors: with(".query.vec"),
            term_vectors: with(".term.vec"),
            bias: with(".bias"),
            tree: with(".tree"),
            node_vectors: with(".nodes.vec"),
        }
    }
}

fn write_vectors<S: AsRef<str>>(path: &Path, labels: &[S], m: &Matrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{} {}", m.rows(), m.cols()).map_err(io)?;
    for (i, label) in labels.iter().enumerate() {
        write!(out, "{}", label.as_ref()).map_err(io)?;
        for x in m.row(i) {
            write!(out, " {x}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a word2vec text file; returns the row labels and the matrix.
pub fn read_vectors(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing `N d` header"))?
        .map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| Error::parse(path, 1, format!("bad header `{header}`"))))
        .collect::<Result<_>>()?;
    let &[rows, cols] = dims.as_slice() else {
        return Err(Error::parse(path, 1, format!("bad header `{header}`")));
    };
    let mut labels = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let lineno = i + 2;
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(path, lineno, format!("expected {rows} vectors, found {i}")))?
            .map_err(|e| Error::io(path, e))?;
        let mut fields = line.split(' ');
        let label = fields.next().filter(|l| !l.is_empty()).ok_or_else(|| Error::parse(path, lineno, "missing label"))?;
        let before = data.len();
        for f in fields {
            data.push(f.parse::<f64>().map_err(|_| Error::parse(path, lineno, format!("bad value `{f}`")))?);
        }
        if data.len() - before != cols {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
        labels.push(label.to_string());
    }
    if let Some(extra) = lines.next() {
        let extra = extra.map_err(|e| Error::io(path, e))?;
        if !extra.trim().is_empty() {
            return Err(Error::parse(path, rows + 2, "more vectors than the header declares"));
        }
    }
    Ok((labels, Matrix::from_vec(rows, cols, data)))
}

impl EmbeddingModel {
    /// Writes the manifest, both vector files, and the bias/tree files when
    /// present. `extra` is appended to the manifest (typically the training
    /// configuration).
    pub fn save(&self, prefix: &Path, extra: &Manifest) -> Result<CheckpointPaths> {
        let paths = CheckpointPaths::new(prefix);
        let mut manifest = Manifest::new();
        manifest
            .set("format", "relemb-checkpoint-1")
            .set("kind", self.kind)
            .set("vocab_size", self.vocab_size())
            .set("dim", self.dim())
            .set("bias", self.bias.is_some());
        manifest.extend(extra);
        manifest.save(&paths.manifest)?;
        write_vectors(&paths.query_vectors, &self.terms, &self.query_vectors)?;
        write_vectors(&paths.term_vectors, &self.terms, &self.term_vectors)?;
        if let Some(bias) = &self.bias {
            let io = |e| Error::io(&paths.bias, e);
            let mut out = BufWriter::new(File::create(&paths.bias).map_err(io)?);
            for (t, b) in self.terms.iter().zip(bias) {
                writeln!(out, "{t}\t{b}").map_err(io)?;
            }
            out.flush().map_err(io)?;
        }
        if let Some(tree) = &self.tree {
            let io = |e| Error::io(&paths.tree, e);
            let mut out = BufWriter::new(File::create(&paths.tree).map_err(io)?);
            for (t, term) in self.terms.iter().enumerate() {
                writeln!(out, "{term}\t{}", tree.format_path(t)).map_err(io)?;
            }
            out.flush().map_err(io)?;
            let labels: Vec<String> = (0..tree.num_internal()).map(|i| format!("node{i}")).collect();
            write_vectors(&paths.node_vectors, &labels, &self.node_vectors)?;
        }
        Ok(paths)
    }

    pub fn load(prefix: &Path) -> Result<(Self, Manifest)> {
        let paths = CheckpointPaths::new(prefix);
        let manifest = Manifest::load(&paths.manifest)?;
        let field = |key: &str| {
            manifest
                .get(key)
                .ok_or_else(|| Error::format(&paths.manifest, format!("missing `{key}`")))
        };
        let kind: ModelKind = field("kind")?.parse()?;
        let n: usize = field("vocab_size")?
            .parse()
            .map_err(|_| Error::format(&paths.manifest, "bad vocab_size"))?;
        let d: usize = field("dim")?.parse().map_err(|_| Error::format(&paths.manifest, "bad dim"))?;
        let has_bias = field("bias")? == "true";

        let (terms, query_vectors) = read_vectors(&paths.query_vectors)?;
        if query_vectors.rows() != n || query_vectors.cols() != d {
            return Err(Error::format(&paths.query_vectors, "header does not match the manifest"));
        }
        let (term_labels, term_vectors) = read_vectors(&paths.term_vectors)?;
        if term_vectors.cols() != d {
            return Err(Error::format(
                &paths.term_vectors,
                format!("dimension {} does not match query vectors ({d})", term_vectors.cols()),
            ));
        }
        if term_vectors.rows() != n {
            return Err(Error::format(&paths.term_vectors, "row count does not match query vectors"));
        }
        if let Some(i) = (0..n).find(|&i| term_labels[i] != terms[i]) {
            return Err(Error::parse(
                &paths.term_vectors,
                i + 2,
                format!("unknown term `{}`", term_labels[i]),
            ));
        }

        let bias = if has_bias {
            let file = File::open(&paths.bias).map_err(|e| Error::io(&paths.bias, e))?;
            let mut bias = Vec::with_capacity(n);
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&paths.bias, e))?;
                let (t, v) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::parse(&paths.bias, i + 1, "expected `term<TAB>value`"))?;
                if terms.get(i).map(String::as_str) != Some(t) {
                    return Err(Error::parse(&paths.bias, i + 1, format!("unknown term `{t}`")));
                }
                bias.push(v.parse().map_err(|_| Error::parse(&paths.bias, i + 1, format!("bad value `{v}`")))?);
            }
            if bias.len() != n {
                return Err(Error::format(&paths.bias, "bias length does not match the vocabulary"));
            }
            Some(bias)
        } else {
            None
        };

        let (tree, node_vectors) = if kind == ModelKind::Rlm {
            let file = File::open(&paths.tree).map_err(|e| Error::io(&paths.tree, e))?;
            let mut tree_paths = Vec::with_capacity(n);
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&paths.tree, e))?;
                let (t, p) = line.split_once('\t').unwrap_or((line.as_str(), ""));
                if terms.get(i).map(String::as_str) != Some(t) {
                    return Err(Error::parse(&paths.tree, i + 1, format!("unknown term `{t}`")));
                }
                tree_paths.push(HuffmanTree::parse_path(p).map_err(|m| Error::parse(&paths.tree, i + 1, m))?);
            }
            let tree = HuffmanTree::from_paths(tree_paths).map_err(|e| Error::format(&paths.tree, e.to_string()))?;
            let (_, nodes) = read_vectors(&paths.node_vectors)?;
            if nodes.cols() != d || nodes.rows() != tree.num_internal() {
                return Err(Error::format(&paths.node_vectors, "node vectors do not match the tree"));
            }
            (Some(tree), nodes)
        } else {
            (None, Matrix::zeros(0, d))
        };

        let model = EmbeddingModel {
            kind,
            terms,
            query_vectors,
            term_vectors,
            node_vectors,
            bias,
            tree,
        };
        model.validate()?;
        Ok((model, manifest))
    }
}
