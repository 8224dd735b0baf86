//! Ranked-retrieval metrics (AP, P@k, nDCG@k) and the paired t-test.
//!
//! Unjudged documents count as non-relevant. nDCG uses the exponential gain
//! 2^grade − 1 with a log2(rank + 1) discount.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::retrieval::TrecRun;

pub const MAP_CUTOFF: usize = 1000;
pub const PRECISION_DEPTH: usize = 20;
pub const NDCG_DEPTH: usize = 20;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Relevance grades of one query, keyed by document name.
pub type Judgments = HashMap<String, u32>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    queries: BTreeMap<String, Judgments>,
}

impl Qrels {
    pub fn insert(&mut self, qid: impl Into<String>, doc: impl Into<String>, grade: u32) {
        self.queries.entry(qid.into()).or_default().insert(doc.into(), grade);
    }

    pub fn get(&self, qid: &str) -> Option<&Judgments> {
        self.queries.get(qid)
    }

    /// True when the query has at least one positive grade.
    pub fn is_evaluable(&self, qid: &str) -> bool {
        self.get(qid).is_some_and(|j| j.values().any(|&g| g > 0))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    /// TREC format `qid iter docid rel`; negative grades are rejected.
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut qrels = Qrels::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            if f.len() != 4 {
                return Err(Error::parse(path, i + 1, "expected `qid 0 docid rel`"));
            }
            let grade: i64 = f[3]
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad relevance `{}`", f[3])))?;
            if grade < 0 {
                return Err(Error::parse(path, i + 1, "relevance grades must be non-negative"));
            }
            qrels.insert(f[0], f[2], grade as u32);
        }
        Ok(qrels)
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (q, judgments) in &self.queries {
            let mut docs: Vec<_> = judgments.iter().collect();
            docs.sort();
            for (d, g) in docs {
                writeln!(out, "{q} 0 {d} {g}")?;
            }
        }
        Ok(())
    }
}

fn grade(judgments: &Judgments, doc: &str) -> u32 {
    judgments.get(doc).copied().unwrap_or(0)
}

fn num_relevant(judgments: &Judgments) -> usize {
    judgments.values().filter(|&&g| g > 0).count()
}

/// Σ over relevant ranks ≤ cutoff of precision@rank, over all relevant docs.
pub fn average_precision<S: AsRef<str>>(ranking: &[S], judgments: &Judgments, cutoff: usize) -> Result<f64> {
    let total = num_relevant(judgments);
    if total == 0 {
        return Err(Error::InvalidArgument("query has no relevant documents".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranking.iter().take(cutoff).enumerate() {
        if grade(judgments, doc.as_ref()) > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

/// Relevant documents in the top `k` over `k`, even when fewer were returned.
pub fn precision_at_k<S: AsRef<str>>(ranking: &[S], judgments: &Judgments, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = ranking.iter().take(k).filter(|d| grade(judgments, d.as_ref()) > 0).count();
    hits as f64 / k as f64
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| ((1u64 << g.min(62)) - 1) as f64 / ((i + 2) as f64).log2())
        .sum()
}

pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], judgments: &Judgments, k: usize) -> Result<f64> {
    let mut ideal: Vec<u32> = judgments.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return Err(Error::InvalidArgument("query has no positive grades".into()));
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k));
    let actual = dcg(ranking.iter().take(k).map(|d| grade(judgments, d.as_ref())));
    Ok(actual / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryMetrics {
    pub ap: f64,
    pub p20: f64,
    pub ndcg20: f64,
}

impl QueryMetrics {
    pub fn compute<S: AsRef<str>>(ranking: &[S], judgments: &Judgments) -> Result<Self> {
        Ok(QueryMetrics {
            ap: average_precision(ranking, judgments, MAP_CUTOFF)?,
            p20: precision_at_k(ranking, judgments, PRECISION_DEPTH),
            ndcg20: ndcg_at_k(ranking, judgments, NDCG_DEPTH)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    /// Queries in the run without any positive judgment.
    pub skipped: Vec<String>,
}

impl EvalReport {
    fn mean(&self, f: impl Fn(&QueryMetrics) -> f64) -> f64 {
        if self.per_query.is_empty() {
            return 0.0;
        }
        self.per_query.values().map(f).sum::<f64>() / self.per_query.len() as f64
    }

    pub fn map(&self) -> f64 {
        self.mean(|m| m.ap)
    }

    pub fn p20(&self) -> f64 {
        self.mean(|m| m.p20)
    }

    pub fn ndcg20(&self) -> f64 {
        self.mean(|m| m.ndcg20)
    }

    /// `metric<TAB>qid<TAB>value` rows, then an `all` row per metric.
    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let metrics: [(&str, fn(&QueryMetrics) -> f64); 3] =
            [("map", |m| m.ap), ("P_20", |m| m.p20), ("ndcg_cut_20", |m| m.ndcg20)];
        for (name, f) in metrics {
            for (q, m) in &self.per_query {
                writeln!(out, "{name}\t{q}\t{:.6}", f(m))?;
            }
            writeln!(out, "{name}\tall\t{:.6}", self.mean(f))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Evaluates every query of `run` that has at least one positive judgment.
pub fn evaluate_run(run: &TrecRun, qrels: &Qrels) -> EvalReport {
    let mut report = EvalReport::default();
    for (qid, ranking) in run {
        match qrels.get(qid) {
            Some(j) if qrels.is_evaluable(qid) => {
                let docs: Vec<&str> = ranking.iter().map(|(d, _)| d.as_str()).collect();
                let m = QueryMetrics::compute(&docs, j).expect("evaluable query");
                report.per_query.insert(qid.clone(), m);
            }
            _ => report.skipped.push(qid.clone()),
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
    pub significant: bool,
    /// Differences are constant and non-zero, so t is unbounded.
    pub degenerate: bool,
}

/// Two-tailed paired t-test of `a` against `b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("paired samples differ in length".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    // spread at the level of rounding error in the differences counts as none
    let magnitude = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    if var.sqrt() <= 1e-12 * magnitude {
        let all_zero = mean.abs() <= 1e-12 * magnitude;
        return Ok(TTest {
            t: if all_zero { 0.0 } else { mean.signum() * f64::INFINITY },
            df,
            p_value: if all_zero { 1.0 } else { 0.0 },
            significant: false,
            degenerate: !all_zero,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let p_value = student_t_two_tailed(t, df as f64);
    Ok(TTest {
        t,
        df,
        p_value,
        significant: p_value < SIGNIFICANCE_LEVEL,
        degenerate: false,
    })
}

/// P(|T| ≥ |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// I_x(a, b) via the modified Lentz continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - regularized_incomplete_beta(1.0 - x, b, a);
    }
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    ln_front.exp() * h / a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judged(rel: &[(&str, u32)]) -> Judgments {
        rel.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn ap_hand_value() {
        let j = judged(&[("a", 1), ("c", 1)]);
        let ap = average_precision(&["a", "b", "c"], &j, MAP_CUTOFF).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&["a", "c", "b"], &j, MAP_CUTOFF).unwrap(), 1.0);
        assert_eq!(average_precision(&["x", "y"], &j, MAP_CUTOFF).unwrap(), 0.0);
        assert_eq!(average_precision(&["b", "a"], &j, 1).unwrap(), 0.0);
        assert!(average_precision(&["a"], &judged(&[("a", 0)]), 10).is_err());
    }

    #[test]
    fn precision_fixed_denominator() {
        let docs: Vec<String> = (0..20).map(|i| format!("d{i}")).collect();
        let j: Judgments = (0..10).map(|i| (format!("d{}", 2 * i), 1)).collect();
        assert_eq!(precision_at_k(&docs, &j, 20), 0.5);
        assert_eq!(precision_at_k::<&str>(&[], &j, 20), 0.0);
        let seven: Vec<&str> = docs.iter().take(7).map(String::as_str).collect();
        let all: Judgments = seven.iter().map(|d| (d.to_string(), 1)).collect();
        assert!((precision_at_k(&seven, &all, 20) - 0.35).abs() < 1e-12);
    }

    #[test]
    fn ndcg_hand_values() {
        let j = judged(&[("a", 1), ("c", 1)]);
        let v = ndcg_at_k(&["a", "b", "c"], &j, 20).unwrap();
        let expected = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.9197).abs() < 1e-4);
        let single = judged(&[("r", 1)]);
        assert!((ndcg_at_k(&["x", "r"], &single, 20).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-12);
        let graded = judged(&[("a", 3), ("b", 1)]);
        assert_eq!(ndcg_at_k(&["a", "b"], &graded, 20).unwrap(), 1.0);
        assert!(ndcg_at_k(&["a"], &judged(&[("a", 0)]), 20).is_err());
    }

    #[test]
    fn ttest_edge_cases() {
        let a = [0.1, 0.2, 0.3];
        let t = paired_ttest(&a, &a).unwrap();
        assert_eq!(t.p_value, 1.0);
        assert!(!t.significant && !t.degenerate);
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = a.iter().map(|x| x - 0.05).collect();
        let t = paired_ttest(&a, &b).unwrap();
        // x − (x − 0.05) is not exactly constant in floating point
        assert!(t.degenerate || t.p_value < 1e-6);
        let b: Vec<f64> = a.iter().map(|x| x - 0.5).collect();
        let t = paired_ttest(&a, &b).unwrap();
        assert!(t.degenerate && !t.significant);
        assert!(paired_ttest(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn t_tail_matches_tables() {
        // two-tailed 5% critical values
        for (df, crit) in [(1.0, 12.706), (2.0, 4.303), (4.0, 2.776), (10.0, 2.228), (30.0, 2.042), (120.0, 1.980)] {
            let p = student_t_two_tailed(crit, df);
            assert!((p - 0.05).abs() < 2e-4, "df={df}: p={p}");
        }
        // two-tailed 1% critical values
        for (df, crit) in [(5.0, 4.032), (20.0, 2.845)] {
            let p = student_t_two_tailed(crit, df);
            assert!((p - 0.01).abs() < 1e-4, "df={df}: p={p}");
        }
        assert!((student_t_two_tailed(0.0, 7.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qrels_round_trip() {
        let mut q = Qrels::default();
        q.insert("1", "d1", 1);
        q.insert("1", "d2", 0);
        q.insert("2", "d3", 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrels");
        let mut buf = Vec::new();
        q.write(&mut buf).unwrap();
        std::fs::write(&path, buf).unwrap();
        assert_eq!(Qrels::read(&path).unwrap(), q);
        assert!(q.is_evaluable("1"));
        std::fs::write(&path, "1 0 d1 -1\n").unwrap();
        assert!(Qrels::read(&path).is_err());
    }
}
