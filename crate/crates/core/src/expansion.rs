//! Query expansion with embedding-derived term distributions, and the
//! cross-validated expansion experiment.
//!
//! The expanded query model is
//!
//! ```text
//! p(w|θ*) = α · p_ml(w|q) + (1 − α) · p_emb(w|q)
//! ```
//!
//! where p_emb is the model's top-m term distribution renormalized over those
//! m terms. Original query terms may also appear in p_emb; their masses add.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{paired_ttest, QueryMetrics, Qrels, TTest, MAP_CUTOFF};
use crate::index::{CorpusIndex, TermId};
use crate::inference::raw_term_scores;
use crate::model::EmbeddingModel;
use crate::retrieval::{kl_retrieve, ql_retrieve, write_trec_run, QueryLanguageModel, RankedList, DEFAULT_MU};
use crate::text::{tokenize, Stopwords};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionConfig {
    pub alpha: f64,
    pub m_exp: usize,
    pub mu: f64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            alpha: 0.5,
            m_exp: 10,
            mu: DEFAULT_MU,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionGrid {
    pub alphas: Vec<f64>,
    pub m_values: Vec<usize>,
}

impl Default for ExpansionGrid {
    fn default() -> Self {
        ExpansionGrid {
            alphas: (1..=9).map(|i| i as f64 / 10.0).collect(),
            m_values: (1..=10).map(|i| i * 10).collect(),
        }
    }
}

impl ExpansionGrid {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.m_values.is_empty() {
            return Err(Error::InvalidArgument("expansion grids must be non-empty".into()));
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument("alpha values must lie in [0, 1]".into()));
        }
        if self.m_values.contains(&0) {
            return Err(Error::InvalidArgument("expansion term counts must be positive".into()));
        }
        Ok(())
    }

    fn points(&self) -> Vec<(f64, usize)> {
        self.alphas
            .iter()
            .flat_map(|&a| self.m_values.iter().map(move |&m| (a, m)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub model: QueryLanguageModel,
    /// The embedding distribution was unavailable and the MLE model was used.
    pub fell_back: bool,
}

/// Interpolates the query MLE with a ranked embedding term list, keeping the
/// first `m_exp` entries of `ranked` renormalized.
fn interpolate(query: &[TermId], ranked: &[(TermId, f64)], alpha: f64, m_exp: usize) -> Result<QueryLanguageModel> {
    let mle = QueryLanguageModel::mle(query)?;
    if alpha >= 1.0 {
        return Ok(mle);
    }
    let top = &ranked[..m_exp.min(ranked.len())];
    let mass: f64 = top.iter().map(|e| e.1).sum();
    let mut combined: BTreeMap<TermId, f64> = BTreeMap::new();
    if alpha > 0.0 {
        for &(t, p) in mle.probs() {
            *combined.entry(t).or_insert(0.0) += alpha * p;
        }
    }
    if mass > 0.0 {
        for &(t, s) in top {
            let p = (1.0 - alpha) * (s / mass);
            if p > 0.0 {
                *combined.entry(t).or_insert(0.0) += p;
            }
        }
    }
    QueryLanguageModel::new(combined)
}

fn ranked_scores(model: &EmbeddingModel, query: &[TermId]) -> Result<Vec<(TermId, f64)>> {
    let (scores, _) = raw_term_scores(model, query)?;
    let mut ranked: Vec<(TermId, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Builds the expanded query model. If the query cannot be projected the
/// plain MLE model is returned with `fell_back` set.
pub fn expand_query(model: &EmbeddingModel, query: &[TermId], cfg: &ExpansionConfig) -> Result<Expansion> {
    if query.is_empty() {
        return Err(Error::NoVocabularyTerms);
    }
    if !(0.0..=1.0).contains(&cfg.alpha) || cfg.m_exp == 0 {
        return Err(Error::InvalidArgument("alpha must lie in [0, 1] and m_exp be positive".into()));
    }
    match ranked_scores(model, query) {
        Ok(ranked) => Ok(Expansion {
            model: interpolate(query, &ranked, cfg.alpha, cfg.m_exp)?,
            fell_back: false,
        }),
        Err(e) => {
            warn!("query projection failed ({e}); using the unexpanded query model");
            Ok(Expansion {
                model: QueryLanguageModel::mle(query)?,
                fell_back: true,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub folds: usize,
    pub depth: usize,
    pub mu: f64,
    /// When set, one TREC run per grid point is written into this directory.
    pub dump_runs: Option<PathBuf>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            folds: 2,
            depth: MAP_CUTOFF,
            mu: DEFAULT_MU,
            dump_runs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub map: f64,
    pub p20: f64,
    pub ndcg20: f64,
}

impl Summary {
    fn of<'a>(metrics: impl Iterator<Item = &'a QueryMetrics>) -> Self {
        let mut s = Summary::default();
        let mut n = 0usize;
        for m in metrics {
            s.map += m.ap;
            s.p20 += m.p20;
            s.ndcg20 += m.ndcg20;
            n += 1;
        }
        if n > 0 {
            let n = n as f64;
            s.map /= n;
            s.p20 /= n;
            s.ndcg20 /= n;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldChoice {
    pub fold: usize,
    pub alpha: f64,
    pub m_exp: usize,
    pub train_map: f64,
    pub test_map: f64,
    pub test_queries: usize,
    /// Training-fold MAP of every grid point, in grid order.
    pub grid_train_maps: Vec<((f64, usize), f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionReport {
    pub baseline: Summary,
    pub expanded: Summary,
    pub folds: Vec<FoldChoice>,
    pub baseline_per_query: BTreeMap<String, QueryMetrics>,
    pub expanded_per_query: BTreeMap<String, QueryMetrics>,
    pub excluded: Vec<(String, String)>,
    pub map_ttest: Option<TTest>,
}

impl ExpansionReport {
    /// Aligned text table.
    pub fn render_table(&self, system: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>8}", "system", "MAP", "P@20", "nDCG@20");
        for (name, m) in [("mle", &self.baseline), (system, &self.expanded)] {
            let _ = writeln!(s, "{:<12} {:>8.4} {:>8.4} {:>8.4}", name, m.map, m.p20, m.ndcg20);
        }
        if let Some(t) = &self.map_ttest {
            let _ = writeln!(
                s,
                "paired t-test on AP: t = {:.4}, p = {:.4}{}",
                t.t,
                t.p_value,
                if t.significant { " (significant)" } else { "" }
            );
        }
        for f in &self.folds {
            let _ = writeln!(
                s,
                "fold {}: alpha = {}, m = {}, train MAP = {:.4}, test MAP = {:.4} ({} queries)",
                f.fold + 1,
                f.alpha,
                f.m_exp,
                f.train_map,
                f.test_map,
                f.test_queries
            );
        }
        for (q, why) in &self.excluded {
            let _ = writeln!(s, "excluded query {q}: {why}");
        }
        s
    }

    /// `metric<TAB>system<TAB>value` lines.
    pub fn render_lines(&self, system: &str) -> String {
        let mut s = String::new();
        for (name, m) in [("mle", &self.baseline), (system, &self.expanded)] {
            let _ = writeln!(s, "map\t{name}\t{:.6}", m.map);
            let _ = writeln!(s, "P_20\t{name}\t{:.6}", m.p20);
            let _ = writeln!(s, "ndcg_cut_20\t{name}\t{:.6}", m.ndcg20);
        }
        if let Some(t) = &self.map_ttest {
            let _ = writeln!(s, "ttest_p_map\t{system}\t{:.6}", t.p_value);
        }
        for f in &self.folds {
            let _ = writeln!(s, "fold{}_alpha\t{system}\t{}", f.fold + 1, f.alpha);
            let _ = writeln!(s, "fold{}_m\t{system}\t{}", f.fold + 1, f.m_exp);
        }
        s
    }
}

struct EvalQuery {
    qid: String,
    terms: Vec<TermId>,
    fold: usize,
    ranked: Option<Vec<(TermId, f64)>>,
}

fn metrics_for(index: &CorpusIndex, run: &RankedList, qrels: &Qrels) -> QueryMetrics {
    let judgments = qrels.get(&run.query_id).expect("evaluated queries have judgments");
    QueryMetrics::compute(&run.doc_names(index), judgments).expect("evaluated queries have relevant documents")
}

fn retrieve_or_empty(result: Result<RankedList>) -> Result<RankedList> {
    match result {
        Ok(r) => Ok(r),
        Err(Error::NoVocabularyTerms) => Ok(RankedList::default()),
        Err(e) => Err(e),
    }
}

/// Tunes (α, m) on each training fold by MAP and evaluates on the held-out
/// fold. Folds are assigned by position in sorted query-id order.
pub fn run_expansion_experiment(
    model: &EmbeddingModel,
    index: &CorpusIndex,
    queries: &[(String, String)],
    stopwords: &Stopwords,
    qrels: &Qrels,
    grid: &ExpansionGrid,
    options: &ExperimentOptions,
) -> Result<ExpansionReport> {
    grid.validate()?;
    if options.folds < 2 {
        return Err(Error::InvalidArgument("cross-validation needs at least two folds".into()));
    }
    let mut sorted: Vec<&(String, String)> = queries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));

    let max_m = *grid.m_values.iter().max().unwrap();
    let mut excluded = Vec::new();
    let mut evaluated = Vec::new();
    for (qid, text) in sorted {
        if !qrels.is_evaluable(qid) {
            warn!("query {qid} has no relevant judgments; excluded");
            excluded.push((qid.clone(), "no relevant judgments".to_string()));
            continue;
        }
        let terms = index.vocab().lookup(&tokenize(text, stopwords));
        if terms.is_empty() {
            warn!("query {qid} has no in-vocabulary terms; excluded");
            excluded.push((qid.clone(), "no in-vocabulary terms".to_string()));
            continue;
        }
        let ranked = match ranked_scores(model, &terms) {
            Ok(mut r) => {
                r.truncate(max_m);
                Some(r)
            }
            Err(e) => {
                warn!("query {qid}: projection failed ({e}); expansion falls back to MLE");
                None
            }
        };
        evaluated.push(EvalQuery {
            qid: qid.clone(),
            terms,
            fold: 0,
            ranked,
        });
    }
    for (i, q) in evaluated.iter_mut().enumerate() {
        q.fold = i % options.folds;
    }
    for f in 0..options.folds {
        let test = evaluated.iter().filter(|q| q.fold == f).count();
        if test < 2 {
            return Err(Error::InvalidArgument(format!(
                "fold {} has {test} evaluable queries; at least two are required",
                f + 1
            )));
        }
    }

    let baseline_runs: Vec<RankedList> = evaluated
        .iter()
        .map(|q| retrieve_or_empty(ql_retrieve(index, &q.terms, options.depth, options.mu)).map(|r| r.with_query_id(q.qid.clone())))
        .collect::<Result<_>>()?;
    let baseline: Vec<QueryMetrics> = baseline_runs.iter().map(|r| metrics_for(index, r, qrels)).collect();

    let points = grid.points();
    let grid_metrics: Vec<Vec<QueryMetrics>> = points
        .par_iter()
        .map(|&(alpha, m)| -> Result<Vec<QueryMetrics>> {
            let runs: Vec<RankedList> = evaluated
                .iter()
                .map(|q| {
                    let qlm = match &q.ranked {
                        Some(r) => interpolate(&q.terms, r, alpha, m)?,
                        None => QueryLanguageModel::mle(&q.terms)?,
                    };
                    Ok(retrieve_or_empty(kl_retrieve(index, &qlm, options.depth, options.mu))?.with_query_id(q.qid.clone()))
                })
                .collect::<Result<_>>()?;
            if let Some(dir) = &options.dump_runs {
                dump_run(dir, index, &runs, alpha, m)?;
            }
            Ok(runs.iter().map(|r| metrics_for(index, r, qrels)).collect())
        })
        .collect::<Result<_>>()?;

    let mut folds = Vec::with_capacity(options.folds);
    let mut chosen: Vec<Option<usize>> = vec![None; evaluated.len()];
    for f in 0..options.folds {
        let train: Vec<usize> = (0..evaluated.len()).filter(|&i| evaluated[i].fold != f).collect();
        let test: Vec<usize> = (0..evaluated.len()).filter(|&i| evaluated[i].fold == f).collect();
        let mean_ap = |p: usize, idx: &[usize]| idx.iter().map(|&i| grid_metrics[p][i].ap).sum::<f64>() / idx.len() as f64;
        let grid_train_maps: Vec<((f64, usize), f64)> = (0..points.len()).map(|p| (points[p], mean_ap(p, &train))).collect();
        let best = (0..points.len())
            .max_by(|&a, &b| {
                let (ta, tb) = (grid_train_maps[a].1, grid_train_maps[b].1);
                // ties prefer larger alpha, then fewer expansion terms
                ta.total_cmp(&tb)
                    .then(points[a].0.total_cmp(&points[b].0))
                    .then(points[b].1.cmp(&points[a].1))
            })
            .unwrap();
        for &i in &test {
            chosen[i] = Some(best);
        }
        folds.push(FoldChoice {
            fold: f,
            alpha: points[best].0,
            m_exp: points[best].1,
            train_map: grid_train_maps[best].1,
            test_map: mean_ap(best, &test),
            test_queries: test.len(),
            grid_train_maps,
        });
    }

    let expanded: Vec<QueryMetrics> = chosen
        .iter()
        .enumerate()
        .map(|(i, p)| grid_metrics[p.expect("every query is in a fold")][i])
        .collect();
    let ap_exp: Vec<f64> = expanded.iter().map(|m| m.ap).collect();
    let ap_base: Vec<f64> = baseline.iter().map(|m| m.ap).collect();
    let qids = evaluated.iter().map(|q| q.qid.clone());
    Ok(ExpansionReport {
        baseline: Summary::of(baseline.iter()),
        expanded: Summary::of(expanded.iter()),
        folds,
        baseline_per_query: qids.clone().zip(baseline.iter().copied()).collect(),
        expanded_per_query: qids.zip(expanded.iter().copied()).collect(),
        excluded,
        map_ttest: paired_ttest(&ap_exp, &ap_base).ok(),
    })
}

fn dump_run(dir: &Path, index: &CorpusIndex, runs: &[RankedList], alpha: f64, m: usize) -> Result<()> {
    let path = dir.join(format!("run.alpha{alpha}.m{m}.trec"));
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    write_trec_run(&mut out, index, runs, &format!("expanded-a{alpha}-m{m}")).map_err(|e| Error::io(&path, e))?;
    out.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_interpolation() {
        // query "a b" (ids 0, 1), embedding distribution {c: 0.6, a: 0.4}
        let ranked = [(2, 0.6), (0, 0.4)];
        let qlm = interpolate(&[0, 1], &ranked, 0.5, 2).unwrap();
        assert!((qlm.prob(0) - 0.45).abs() < 1e-15);
        assert!((qlm.prob(1) - 0.25).abs() < 1e-15);
        assert!((qlm.prob(2) - 0.30).abs() < 1e-15);
    }

    #[test]
    fn endpoints() {
        let ranked = [(2, 0.3), (5, 0.1), (0, 0.1)];
        let q = [0, 1, 1];
        assert_eq!(interpolate(&q, &ranked, 1.0, 3).unwrap(), QueryLanguageModel::mle(&q).unwrap());
        let only = interpolate(&q, &ranked, 0.0, 2).unwrap();
        assert_eq!(only.probs(), &[(2, 0.3 / 0.4), (5, 0.1 / 0.4)]);
    }

    #[test]
    fn default_grids() {
        let g = ExpansionGrid::default();
        assert_eq!(g.alphas.len(), 9);
        assert_eq!(g.m_values, vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100]);
        assert!(ExpansionGrid { alphas: vec![], m_values: vec![1] }.validate().is_err());
    }
}
