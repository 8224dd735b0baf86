//! Run configuration: flat `key = value` text with section prefixes.
//!
//! Values are resolved from the built-in defaults, then the config file, then
//! `--set key=value` overrides. Artifact paths left unset default to files
//! inside `paths.work`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use relemb::classify::{Averaging, CvOptions};
use relemb::expansion::{ExpansionConfig, ExpansionGrid, ExperimentOptions};
use relemb::manifest::Manifest;
use relemb::model::ModelKind;
use relemb::pipeline::PipelineConfig;
use relemb::train::TrainConfig;
use relemb::{IndexOptions, Stopwords};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Path,
    Text,
    Usize,
    U64,
    F64,
    Bool,
    Model,
    F64List,
    UsizeList,
    Averaging,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: &'static str,
    help: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str, help: &'static str) -> Key {
    Key { name, kind, default, help }
}

/// Every recognised key; `{work}` in a default expands to `paths.work`.
const KEYS: &[Key] = &[
    key("paths.work", Kind::Path, "work", "directory for derived artifacts, reports and manifests"),
    key("paths.corpus", Kind::Path, "corpus.tsv", "documents, `docid<TAB>text` per line"),
    key("paths.query_log", Kind::Path, "query_log.txt", "raw query log, one query per line"),
    key("paths.queries", Kind::Path, "{work}/queries.tsv", "cleaned training queries, `qid<TAB>query`"),
    key("paths.heldout", Kind::Path, "heldout_queries.tsv", "evaluation queries, `qid<TAB>query`"),
    key("paths.qrels", Kind::Path, "qrels.txt", "relevance judgments, `qid 0 docid grade`"),
    key("paths.labels", Kind::Path, "labeled_queries.tsv", "labeled queries, `qid<TAB>query<TAB>editor1:l,l;editor2:l`"),
    key("paths.categories", Kind::Path, "categories.txt", "category list, one label per line"),
    key("paths.stopwords", Kind::Text, "inquery", "`inquery`, `none`, or a stopword file"),
    key("paths.index", Kind::Path, "{work}/index.bin", "binary corpus index"),
    key("paths.training", Kind::Path, "{work}/training.tsv", "training set of relevance distributions"),
    key("paths.noise", Kind::Path, "{work}/noise.tsv", "negative-sampling noise table"),
    key("paths.model", Kind::Path, "{work}/model", "checkpoint prefix"),
    key("paths.run", Kind::Path, "{work}/run.trec", "TREC run written by search and read by eval"),
    key("index.min_cf", Kind::U64, "1", "drop terms with a lower collection frequency"),
    key("index.partitions", Kind::Usize, "1", "document partitions indexed in parallel"),
    key("retrieval.mu", Kind::F64, "1500", "Dirichlet smoothing parameter"),
    key("retrieval.k", Kind::Usize, "10", "feedback documents per training query"),
    key("pipeline.max_terms", Kind::Usize, "0", "keep this many terms per relevance distribution (0 keeps all)"),
    key("train.kind", Kind::Model, "rlm", "`rlm` or `rpe`"),
    key("train.dim", Kind::Usize, "300", "embedding dimension"),
    key("train.learning_rate", Kind::F64, "0.1", "SGD step size"),
    key("train.batch_size", Kind::Usize, "64", "queries per mini-batch"),
    key("train.epochs", Kind::Usize, "5", "passes over the training queries"),
    key("train.eta_pos", Kind::Usize, "20", "RPE positive samples per query"),
    key("train.eta_neg_multiple", Kind::Usize, "5", "RPE negative samples as a multiple of eta_pos"),
    key("train.noise_exponent", Kind::F64, "0.75", "exponent of the unigram noise distribution"),
    key("train.bias", Kind::Bool, "false", "RPE output bias"),
    key("train.lr_decay", Kind::Bool, "false", "decay the learning rate linearly to zero"),
    key("train.rlm_samples", Kind::Usize, "0", "RLM: sample this many target terms per query (0 = exact)"),
    key("search.depth", Kind::Usize, "1000", "documents retrieved per query"),
    key("search.expand", Kind::Bool, "false", "expand queries with the model before searching"),
    key("expansion.alpha", Kind::F64, "0.5", "weight of the original query model"),
    key("expansion.m", Kind::Usize, "10", "expansion terms"),
    key("expansion.alphas", Kind::F64List, "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "cross-validation grid for alpha"),
    key("expansion.m_values", Kind::UsizeList, "10,20,30,40,50,60,70,80,90,100", "cross-validation grid for m"),
    key("expansion.folds", Kind::Usize, "2", "cross-validation folds"),
    key("expansion.dump_runs", Kind::Bool, "false", "write one TREC run per grid point"),
    key("classify.t", Kind::Usize, "1", "labels predicted per query"),
    key("classify.folds", Kind::Usize, "5", "cross-validation folds"),
    key("classify.t_grid", Kind::UsizeList, "1,2,3,4,5", "cross-validation grid for t"),
    key("classify.averaging", Kind::Averaging, "micro", "`micro` or `macro`"),
    key("seed", Kind::U64, "42", "random seed"),
    key("workers", Kind::Usize, "1", "training threads; 1 is deterministic"),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

fn check(key: &Key, value: &str) -> Result<()> {
    let bad = |what: &str| Err(ConfigError(format!("{} = {value:?}: expected {what}", key.name)));
    let ok = match key.kind {
        Kind::Path => !value.is_empty(),
        Kind::Text => true,
        Kind::Usize => value.parse::<usize>().is_ok(),
        Kind::U64 => value.parse::<u64>().is_ok(),
        Kind::F64 => value.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Bool => value.parse::<bool>().is_ok(),
        Kind::Model => value.parse::<ModelKind>().is_ok(),
        Kind::F64List => parse_list::<f64>(value).is_some_and(|l| !l.is_empty()),
        Kind::UsizeList => parse_list::<usize>(value).is_some_and(|l| !l.is_empty()),
        Kind::Averaging => value.parse::<Averaging>().is_ok(),
    };
    if ok {
        return Ok(());
    }
    match key.kind {
        Kind::Path => bad("a path"),
        Kind::Usize | Kind::U64 => bad("a non-negative integer"),
        Kind::F64 => bad("a finite number"),
        Kind::Bool => bad("true or false"),
        Kind::Model => bad("rlm or rpe"),
        Kind::F64List | Kind::UsizeList => bad("a non-empty comma-separated list"),
        Kind::Averaging => bad("micro or macro"),
        Kind::Text => unreachable!(),
    }
}

fn parse_list<T: FromStr>(s: &str) -> Option<Vec<T>> {
    s.split(',').map(|x| x.trim().parse().ok()).collect()
}

/// Help text listing every key with its default.
pub fn keys_help() -> String {
    let mut s = String::from("Configuration keys (defaults in brackets):\n");
    for k in KEYS {
        s.push_str(&format!("  {:<24} {} [{}]\n", k.name, k.help, k.default));
    }
    s
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: Manifest,
}

impl RunConfig {
    /// Defaults, then `file` (if any), then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut given = Manifest::new();
        if let Some(path) = file {
            let m = Manifest::load(path).map_err(|e| ConfigError(e.to_string()))?;
            given.extend(&m);
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("--set expects key=value, got {o:?}")))?;
            given.set(k.trim(), v.trim());
        }
        for (k, v) in given.entries() {
            let key = lookup(k).ok_or_else(|| ConfigError(format!("unknown configuration key {k:?}")))?;
            check(key, v)?;
        }
        let work = given.get("paths.work").unwrap_or("work").to_string();
        let mut values = Manifest::new();
        for k in KEYS {
            let v = match given.get(k.name) {
                Some(v) => v.to_string(),
                None => k.default.replace("{work}", &work),
            };
            values.set(k.name, v);
        }
        let config = RunConfig { values };
        config.validate()?;
        Ok(config)
    }

    fn raw(&self, name: &str) -> &str {
        self.values.get(name).expect("every key has a value")
    }

    fn parsed<T: FromStr>(&self, name: &str) -> T {
        self.raw(name).parse().ok().expect("values are checked on load")
    }

    pub fn path(&self, name: &str) -> PathBuf {
        PathBuf::from(self.raw(name))
    }

    pub fn usize(&self, name: &str) -> usize {
        self.parsed(name)
    }

    pub fn f64(&self, name: &str) -> f64 {
        self.parsed(name)
    }

    pub fn bool(&self, name: &str) -> bool {
        self.parsed(name)
    }

    pub fn seed(&self) -> u64 {
        self.parsed("seed")
    }

    pub fn manifest(&self) -> &Manifest {
        &self.values
    }

    fn validate(&self) -> Result<()> {
        if !(self.f64("retrieval.mu") > 0.0) {
            return Err(ConfigError("retrieval.mu must be positive".into()));
        }
        for k in ["retrieval.k", "search.depth", "expansion.m", "classify.t", "index.partitions"] {
            if self.usize(k) == 0 {
                return Err(ConfigError(format!("{k} must be at least 1")));
            }
        }
        let alpha = self.f64("expansion.alpha");
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ConfigError("expansion.alpha must lie in [0, 1]".into()));
        }
        if self.usize("expansion.folds") < 2 || self.usize("classify.folds") < 2 {
            return Err(ConfigError("cross-validation needs at least two folds".into()));
        }
        self.grid().validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.classify_options().t_grid.contains(&0) {
            return Err(ConfigError("classify.t_grid values must be positive".into()));
        }
        self.train_config().validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    pub fn stopwords(&self) -> std::result::Result<Stopwords, relemb::Error> {
        match self.raw("paths.stopwords") {
            "inquery" => Ok(Stopwords::inquery()),
            "none" => Ok(Stopwords::empty()),
            path => Stopwords::load(Path::new(path)),
        }
    }

    /// The stopword file, when one is configured.
    pub fn stopword_file(&self) -> Option<PathBuf> {
        match self.raw("paths.stopwords") {
            "inquery" | "none" => None,
            path => Some(PathBuf::from(path)),
        }
    }

    pub fn index_options(&self) -> IndexOptions {
        IndexOptions {
            min_cf: self.parsed("index.min_cf"),
            partitions: self.usize("index.partitions"),
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            feedback_docs: self.usize("retrieval.k"),
            mu: self.f64("retrieval.mu"),
            max_terms: self.usize("pipeline.max_terms"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.parsed("train.kind"),
            dim: self.usize("train.dim"),
            learning_rate: self.f64("train.learning_rate"),
            batch_size: self.usize("train.batch_size"),
            epochs: self.usize("train.epochs"),
            eta_pos: self.usize("train.eta_pos"),
            eta_neg_multiple: self.usize("train.eta_neg_multiple"),
            noise_exponent: self.f64("train.noise_exponent"),
            seed: self.seed(),
            workers: self.usize("workers"),
            bias: self.bool("train.bias"),
            lr_decay: self.bool("train.lr_decay"),
            rlm_samples: self.usize("train.rlm_samples"),
        }
    }

    pub fn expansion_config(&self) -> ExpansionConfig {
        ExpansionConfig {
            alpha: self.f64("expansion.alpha"),
            m_exp: self.usize("expansion.m"),
            mu: self.f64("retrieval.mu"),
        }
    }

    pub fn grid(&self) -> ExpansionGrid {
        ExpansionGrid {
            alphas: parse_list(self.raw("expansion.alphas")).expect("checked on load"),
            m_values: parse_list(self.raw("expansion.m_values")).expect("checked on load"),
        }
    }

    pub fn experiment_options(&self) -> ExperimentOptions {
        ExperimentOptions {
            folds: self.usize("expansion.folds"),
            depth: self.usize("search.depth"),
            mu: self.f64("retrieval.mu"),
            dump_runs: self.bool("expansion.dump_runs").then(|| self.path("paths.work").join("runs")),
        }
    }

    pub fn classify_options(&self) -> CvOptions {
        CvOptions {
            folds: self.usize("classify.folds"),
            seed: self.seed(),
            t_grid: parse_list(self.raw("classify.t_grid")).expect("checked on load"),
            averaging: self.parsed("classify.averaging"),
        }
    }
}
