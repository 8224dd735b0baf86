//! Centroid-based multi-label query classification and its evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::index::TermId;
use crate::inference::similarity;
use crate::model::EmbeddingModel;
use crate::text::{tokenize, Stopwords};

pub const MAX_EDITORS: usize = 3;
pub const MAX_LABELS_PER_EDITOR: usize = 5;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_T_GRID: [usize; 5] = [1, 2, 3, 4, 5];

/// Closed category set; label ids follow line order of the category file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Categories {
    labels: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Categories {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut c = Categories::default();
        for l in labels {
            let l = l.into();
            if c.ids.contains_key(&l) {
                return Err(Error::InvalidArgument(format!("duplicate category {l:?}")));
            }
            c.ids.insert(l.clone(), c.labels.len());
            c.labels.push(l);
        }
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for l in &self.labels {
            writeln!(out, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub query_id: String,
    /// One sorted label list per editor.
    pub editors: Vec<Vec<usize>>,
}

impl LabelSet {
    pub fn new(query_id: impl Into<String>, editors: Vec<Vec<usize>>) -> Result<Self> {
        let query_id = query_id.into();
        if editors.is_empty() || editors.len() > MAX_EDITORS {
            return Err(Error::InvalidArgument(format!(
                "query {query_id}: expected 1 to {MAX_EDITORS} editors, found {}",
                editors.len()
            )));
        }
        let mut clean = Vec::with_capacity(editors.len());
        for labels in editors {
            let set: BTreeSet<usize> = labels.into_iter().collect();
            if set.len() > MAX_LABELS_PER_EDITOR {
                return Err(Error::InvalidArgument(format!(
                    "query {query_id}: an editor assigned {} labels (at most {MAX_LABELS_PER_EDITOR})",
                    set.len()
                )));
            }
            clean.push(set.into_iter().collect());
        }
        Ok(LabelSet { query_id, editors: clean })
    }

    /// Labels assigned by any editor.
    pub fn union(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.editors.iter().flatten().copied().collect();
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledQuery {
    pub text: String,
    pub labels: LabelSet,
}

/// Reads `qid<TAB>query<TAB>editor1:lbl,lbl;editor2:lbl,...`.
pub fn read_labeled_queries(path: &Path, categories: &Categories) -> Result<Vec<LabeledQuery>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = n + 1;
        let mut fields = line.split('\t');
        let (Some(qid), Some(query), Some(labels), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(Error::parse(path, lineno, "expected three tab-separated fields"));
        };
        if !seen.insert(qid.to_string()) {
            return Err(Error::parse(path, lineno, format!("duplicate query id {qid}")));
        }
        let mut editors = Vec::new();
        for part in labels.split(';').filter(|p| !p.trim().is_empty()) {
            let list = part.split_once(':').map_or(part, |(_, l)| l);
            let mut ids = Vec::new();
            for l in list.split(',').map(str::trim).filter(|l| !l.is_empty()) {
                ids.push(
                    categories
                        .id(l)
                        .ok_or_else(|| Error::parse(path, lineno, format!("unknown category {l:?}")))?,
                );
            }
            editors.push(ids);
        }
        let labels = LabelSet::new(qid, editors).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        out.push(LabeledQuery {
            text: query.to_string(),
            labels,
        });
    }
    Ok(out)
}

pub fn write_labeled_queries<W: Write>(out: &mut W, queries: &[LabeledQuery], categories: &Categories) -> std::io::Result<()> {
    for q in queries {
        let editors: Vec<String> = q
            .labels
            .editors
            .iter()
            .enumerate()
            .map(|(i, ls)| {
                let names: Vec<&str> = ls.iter().map(|&l| categories.label(l)).collect();
                format!("editor{}:{}", i + 1, names.join(","))
            })
            .collect();
        writeln!(out, "{}\t{}\t{}", q.labels.query_id, q.text, editors.join(";"))?;
    }
    Ok(())
}

/// Maps query tokens to model term ids, dropping unknown tokens.
#[derive(Debug, Clone)]
pub struct TermLookup {
    ids: HashMap<String, TermId>,
}

impl TermLookup {
    pub fn new(model: &EmbeddingModel) -> Self {
        TermLookup {
            ids: model.terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect(),
        }
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TermId> {
        tokens.iter().filter_map(|t| self.ids.get(t.as_ref()).copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryCentroid {
    pub label: usize,
    pub centroid: Vec<f64>,
    pub members: usize,
}

/// Per-category mean of projected query vectors. Queries that do not
/// project are skipped; categories left without members are omitted.
pub fn compute_centroids(model: &EmbeddingModel, queries: &[(Vec<TermId>, Vec<usize>)], num_categories: usize) -> Vec<CategoryCentroid> {
    let d = model.dim();
    let mut sums = vec![vec![0.0; d]; num_categories];
    let mut counts = vec![0usize; num_categories];
    for (terms, labels) in queries {
        let Ok(v) = model.project_query(terms) else {
            continue;
        };
        for &l in labels {
            for (s, x) in sums[l].iter_mut().zip(&v) {
                *s += x;
            }
            counts[l] += 1;
        }
    }
    let mut out = Vec::new();
    for (label, (mut sum, n)) in sums.into_iter().zip(counts).enumerate() {
        if n == 0 {
            warn!("category {label} has no projectable training queries; excluded");
            continue;
        }
        sum.iter_mut().for_each(|x| *x /= n as f64);
        out.push(CategoryCentroid {
            label,
            centroid: sum,
            members: n,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// The query could not be projected.
    pub flagged: bool,
}

/// All centroids ranked by cosine to the query vector, ties by label id.
pub fn rank_categories(model: &EmbeddingModel, centroids: &[CategoryCentroid], query: &[TermId]) -> Result<Vec<(usize, f64)>> {
    let q = model.project_query(query)?;
    let mut scored = Vec::with_capacity(centroids.len());
    for c in centroids {
        // a zero centroid or query has no direction; it ranks last
        let s = match similarity(&c.centroid, &q) {
            Ok(s) => s,
            Err(Error::ZeroVector) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        scored.push((c.label, s));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

pub fn classify(model: &EmbeddingModel, centroids: &[CategoryCentroid], query: &[TermId], t: usize) -> Result<Prediction> {
    if t == 0 {
        return Err(Error::InvalidArgument("t must be at least 1".into()));
    }
    match rank_categories(model, centroids, query) {
        Ok(ranked) => Ok(Prediction {
            labels: ranked.into_iter().take(t).map(|e| e.0).collect(),
            flagged: false,
        }),
        Err(Error::NoVocabularyTerms) | Err(Error::TermOutOfRange { .. }) => Ok(Prediction {
            labels: Vec::new(),
            flagged: true,
        }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Counts pooled over queries per editor.
    #[default]
    Micro,
    /// Per-query precision and recall averaged over queries per editor.
    Macro,
}

impl std::str::FromStr for Averaging {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            _ => Err(Error::InvalidArgument(format!("unknown averaging mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassificationScores {
    /// Means over editors.
    pub overall: PrfScores,
    pub per_editor: Vec<PrfScores>,
}

/// Precision, recall and F1 against every editor, averaged over editors.
pub fn evaluate_classification(
    predictions: &[(String, Vec<usize>)],
    gold: &HashMap<String, LabelSet>,
    averaging: Averaging,
) -> Result<ClassificationScores> {
    if predictions.iter().all(|p| p.1.is_empty()) {
        return Err(Error::InvalidArgument("no query received a prediction".into()));
    }
    let mut golds = Vec::with_capacity(predictions.len());
    for (qid, _) in predictions {
        golds.push(
            gold.get(qid)
                .ok_or_else(|| Error::InvalidArgument(format!("query {qid} has no gold labels")))?,
        );
    }
    let editors = golds.iter().map(|g| g.editors.len()).max().unwrap_or(0);
    let mut per_editor = Vec::with_capacity(editors);
    for e in 0..editors {
        let empty = Vec::new();
        let (p, r) = match averaging {
            Averaging::Micro => {
                let (mut hit, mut npred, mut ngold) = (0usize, 0usize, 0usize);
                for ((_, pred), g) in predictions.iter().zip(&golds) {
                    let gl = g.editors.get(e).unwrap_or(&empty);
                    hit += pred.iter().filter(|l| gl.contains(l)).count();
                    npred += pred.len();
                    ngold += gl.len();
                }
                let p = if npred > 0 { hit as f64 / npred as f64 } else { 0.0 };
                let r = if ngold > 0 { hit as f64 / ngold as f64 } else { 0.0 };
                (p, r)
            }
            Averaging::Macro => {
                let (mut ps, mut rs) = (0.0, 0.0);
                for ((_, pred), g) in predictions.iter().zip(&golds) {
                    let gl = g.editors.get(e).unwrap_or(&empty);
                    let hit = pred.iter().filter(|l| gl.contains(l)).count() as f64;
                    if !pred.is_empty() {
                        ps += hit / pred.len() as f64;
                    }
                    if !gl.is_empty() {
                        rs += hit / gl.len() as f64;
                    }
                }
                let n = predictions.len() as f64;
                (ps / n, rs / n)
            }
        };
        per_editor.push(PrfScores {
            precision: p,
            recall: r,
            f1: f1(p, r),
        });
    }
    let n = per_editor.len().max(1) as f64;
    let overall = PrfScores {
        precision: per_editor.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: per_editor.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: per_editor.iter().map(|s| s.f1).sum::<f64>() / n,
    };
    Ok(ClassificationScores { overall, per_editor })
}

pub fn write_predictions<W: Write>(out: &mut W, predictions: &[(String, Vec<usize>)], categories: &Categories) -> std::io::Result<()> {
    for (qid, labels) in predictions {
        let names: Vec<&str> = labels.iter().map(|&l| categories.label(l)).collect();
        writeln!(out, "{qid}\t{}", names.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub t_grid: Vec<usize>,
    pub averaging: Averaging,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: DEFAULT_FOLDS,
            seed: 42,
            t_grid: DEFAULT_T_GRID.to_vec(),
            averaging: Averaging::Micro,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationFold {
    pub fold: usize,
    pub t: usize,
    pub train_f1: f64,
    pub test: ClassificationScores,
    pub test_queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationCvReport {
    pub folds: Vec<ClassificationFold>,
    /// Scores over the pooled held-out predictions.
    pub pooled: ClassificationScores,
    /// Held-out predictions in query-id order.
    pub predictions: Vec<(String, Vec<usize>)>,
    pub flagged: Vec<String>,
}

impl ClassificationCvReport {
    pub fn render(&self, system: &str) -> String {
        let mut s = String::new();
        for f in &self.folds {
            s.push_str(&format!(
                "fold{}_t\t{system}\t{}\nfold{}_f1\t{system}\t{:.6}\n",
                f.fold + 1,
                f.t,
                f.fold + 1,
                f.test.overall.f1
            ));
        }
        let o = &self.pooled.overall;
        s.push_str(&format!(
            "precision\t{system}\t{:.6}\nrecall\t{system}\t{:.6}\nf1\t{system}\t{:.6}\n",
            o.precision, o.recall, o.f1
        ));
        s
    }
}

/// Seeded fold assignment over queries sorted by id.
pub fn assign_folds(query_ids: &[&str], folds: usize, seed: u64) -> BTreeMap<String, usize> {
    let mut ids: Vec<&str> = query_ids.to_vec();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.into_iter().enumerate().map(|(i, q)| (q.to_string(), i % folds)).collect()
}

/// k-fold cross-validation: centroids from the training folds, t tuned on
/// training-fold F1 (ties prefer smaller t), evaluated on the held-out fold.
pub fn cross_validate(
    model: &EmbeddingModel,
    queries: &[LabeledQuery],
    num_categories: usize,
    stopwords: &Stopwords,
    options: &CvOptions,
) -> Result<ClassificationCvReport> {
    if options.folds < 2 || options.t_grid.is_empty() || options.t_grid.contains(&0) {
        return Err(Error::InvalidArgument("need at least two folds and a non-empty grid of positive t".into()));
    }
    if queries.len() < options.folds {
        return Err(Error::InvalidArgument(format!(
            "{} labeled queries cannot fill {} folds",
            queries.len(),
            options.folds
        )));
    }
    let lookup = TermLookup::new(model);
    let ids: Vec<&str> = queries.iter().map(|q| q.labels.query_id.as_str()).collect();
    let assignment = assign_folds(&ids, options.folds, options.seed);
    let gold: HashMap<String, LabelSet> = queries.iter().map(|q| (q.labels.query_id.clone(), q.labels.clone())).collect();
    let encoded: Vec<(Vec<TermId>, Vec<usize>)> = queries
        .iter()
        .map(|q| (lookup.ids(&tokenize(&q.text, stopwords)), q.labels.union()))
        .collect();
    let max_t = *options.t_grid.iter().max().unwrap();

    let mut folds = Vec::new();
    let mut pooled: Vec<(String, Vec<usize>)> = Vec::new();
    let mut flagged = Vec::new();
    for f in 0..options.folds {
        let in_fold = |i: usize| assignment[&queries[i].labels.query_id] == f;
        let train: Vec<usize> = (0..queries.len()).filter(|&i| !in_fold(i)).collect();
        let test: Vec<usize> = (0..queries.len()).filter(|&i| in_fold(i)).collect();
        let train_set: Vec<(Vec<TermId>, Vec<usize>)> = train.iter().map(|&i| encoded[i].clone()).collect();
        let centroids = compute_centroids(model, &train_set, num_categories);
        if centroids.is_empty() {
            return Err(Error::InvalidArgument(format!("fold {}: no category has a projectable training query", f + 1)));
        }
        let predict = |idx: &[usize]| -> Result<Vec<Prediction>> {
            idx.par_iter()
                .map(|&i| classify(model, &centroids, &encoded[i].0, max_t))
                .collect()
        };
        let train_preds = predict(&train)?;
        let mut best: Option<(usize, f64)> = None;
        for &t in &options.t_grid {
            let preds: Vec<(String, Vec<usize>)> = train
                .iter()
                .zip(&train_preds)
                .map(|(&i, p)| (queries[i].labels.query_id.clone(), p.labels.iter().take(t).copied().collect()))
                .collect();
            let score = evaluate_classification(&preds, &gold, options.averaging).map_or(0.0, |s| s.overall.f1);
            let better = match best {
                None => true,
                Some((bt, bs)) => score > bs || (score == bs && t < bt),
            };
            if better {
                best = Some((t, score));
            }
        }
        let (t, train_f1) = best.unwrap();
        let test_preds = predict(&test)?;
        let mut fold_preds = Vec::with_capacity(test.len());
        for (&i, p) in test.iter().zip(test_preds) {
            let qid = queries[i].labels.query_id.clone();
            if p.flagged {
                warn!("query {qid} could not be projected; empty prediction");
                flagged.push(qid.clone());
            }
            fold_preds.push((qid, p.labels.into_iter().take(t).collect::<Vec<_>>()));
        }
        let test_scores = evaluate_classification(&fold_preds, &gold, options.averaging).unwrap_or_default();
        folds.push(ClassificationFold {
            fold: f,
            t,
            train_f1,
            test: test_scores,
            test_queries: test.len(),
        });
        pooled.extend(fold_preds);
    }
    pooled.sort_by(|a, b| a.0.cmp(&b.0));
    flagged.sort();
    let scores = evaluate_classification(&pooled, &gold, options.averaging)?;
    Ok(ClassificationCvReport {
        folds,
        pooled: scores,
        predictions: pooled,
        flagged,
    })
}
