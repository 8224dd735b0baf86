use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use relemb::classify::{
    classify, compute_centroids, cross_validate, read_labeled_queries, write_predictions, Categories, TermLookup,
};
use relemb::eval::{evaluate_run, Qrels};
use relemb::expansion::{expand_query, run_expansion_experiment};
use relemb::inference::{load_model, term_distribution};
use relemb::model::CheckpointPaths;
use relemb::pipeline::{
    filter_queries, generate_training_set, noise_distribution, read_training_set, training_manifest, write_noise_table,
    write_training_set,
};
use relemb::retrieval::{kl_retrieve, ql_retrieve, read_queries, read_trec_run, write_trec_run, RankedList};
use relemb::train::train;
use relemb::{build_index, tokenize, CorpusIndex, EmbeddingModel, Error};

use crate::config::RunConfig;

#[derive(Debug)]
pub enum Failure {
    MissingInput(PathBuf),
    Config(String),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { path, source } if source.kind() == io::ErrorKind::NotFound => Failure::MissingInput(path),
            Error::InvalidArgument(msg) => Failure::Config(msg),
            e => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<(), Failure>;

/// Runs `command` and, on success, writes `<work>/<command>.manifest`.
pub fn run(command: &str, config: &RunConfig) -> Outcome {
    let work = config.path("paths.work");
    fs::create_dir_all(&work).with_context(|| format!("creating {}", work.display()))?;
    match command {
        "build-index" => build_index_cmd(config)?,
        "filter-queries" => filter_queries_cmd(config)?,
        "gen-train" => gen_train(config)?,
        "train" => train_cmd(config)?,
        "expand" => expand(config)?,
        "search" => search(config)?,
        "classify" => classify_cmd(config)?,
        "eval" => eval(config)?,
        "cv-expansion" => cv_expansion(config)?,
        "cv-classify" => cv_classify(config)?,
        other => return Err(Failure::Config(format!("unknown command {other:?}"))),
    }
    let mut manifest = relemb::manifest::Manifest::new();
    manifest.set("command", command);
    manifest.extend(config.manifest());
    let path = work.join(format!("{command}.manifest"));
    manifest.save(&path)?;
    info!("wrote {}", path.display());
    Ok(())
}

/// Fails with the first path in `paths` that does not exist.
fn require(paths: &[PathBuf]) -> Outcome {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(Failure::MissingInput(p.clone())),
        None => Ok(()),
    }
}

fn inputs(config: &RunConfig, keys: &[&str]) -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = keys.iter().map(|k| config.path(k)).collect();
    paths.extend(config.stopword_file());
    paths
}

fn model_manifest(config: &RunConfig) -> PathBuf {
    CheckpointPaths::new(&config.path("paths.model")).manifest
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> anyhow::Result<()> {
    let mut out = create(path)?;
    body(&mut out).and_then(|_| out.flush()).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn load_index(config: &RunConfig) -> Result<CorpusIndex, Failure> {
    let path = config.path("paths.index");
    let index = CorpusIndex::load(&path)?;
    info!("loaded index: {} documents, {} terms", index.num_docs(), index.vocab().len());
    Ok(index)
}

fn build_index_cmd(config: &RunConfig) -> Outcome {
    require(&inputs(config, &["paths.corpus"]))?;
    let docs = relemb::index::read_corpus(&config.path("paths.corpus"))?;
    let index = build_index(docs, &config.stopwords()?, &config.index_options())?;
    info!("indexed {} documents, {} terms", index.num_docs(), index.vocab().len());
    let path = config.path("paths.index");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    index.save(&path)?;
    index.vocab().write_dump(&config.path("paths.work").join("vocab.tsv"))?;
    Ok(())
}

fn filter_queries_cmd(config: &RunConfig) -> Outcome {
    require(&[config.path("paths.query_log")])?;
    let path = config.path("paths.query_log");
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<io::Result<_>>()
        .with_context(|| format!("reading {}", path.display()))?;
    let (kept, stats) = filter_queries(&lines);
    info!(
        "kept {} of {} queries ({} navigational, {} empty, {} duplicates)",
        kept.len(),
        stats.input,
        stats.navigational,
        stats.empty,
        stats.duplicates
    );
    let width = kept.len().max(1).to_string().len();
    write_file(&config.path("paths.queries"), |out| {
        for (i, q) in kept.iter().enumerate() {
            writeln!(out, "q{:0width$}\t{q}", i + 1)?;
        }
        Ok(())
    })?;
    Ok(())
}

fn gen_train(config: &RunConfig) -> Outcome {
    require(&inputs(config, &["paths.index", "paths.queries"]))?;
    let index = load_index(config)?;
    let queries = read_queries(&config.path("paths.queries"))?;
    let pipeline = config.pipeline_config();
    let set = generate_training_set(&index, &queries, &config.stopwords()?, &pipeline)?;
    info!(
        "{} training queries ({} without vocabulary terms, {} without matches)",
        set.len(),
        set.skipped.no_vocabulary_terms,
        set.skipped.no_matches
    );
    let training = config.path("paths.training");
    write_training_set(&training, index.vocab(), &set)?;
    let noise = noise_distribution(&set.unigram, config.f64("train.noise_exponent"))?;
    write_noise_table(&config.path("paths.noise"), index.vocab(), &noise)?;
    let stats = training_manifest(&set, &pipeline, queries.len());
    stats.save(&config.path("paths.work").join("training.stats"))?;
    Ok(())
}

fn train_cmd(config: &RunConfig) -> Outcome {
    require(&inputs(config, &["paths.index", "paths.training"]))?;
    let index = load_index(config)?;
    let set = read_training_set(&config.path("paths.training"), &index, &config.stopwords()?)?;
    let cfg = config.train_config();
    info!("training {} (d = {}) on {} queries", cfg.kind, cfg.dim, set.len());
    let outcome = train(&index, &set, &cfg)?;
    let prefix = config.path("paths.model");
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    outcome.model.save(&prefix, &cfg.manifest())?;
    let mut log = prefix.into_os_string();
    log.push(".loss.tsv");
    write_file(Path::new(&log), |out| {
        writeln!(out, "epoch\tloss")?;
        for (e, loss) in outcome.epoch_losses.iter().enumerate() {
            writeln!(out, "{}\t{loss}", e + 1)?;
        }
        Ok(())
    })?;
    Ok(())
}

/// Held-out queries with their in-vocabulary term ids; queries without any
/// are dropped with a warning.
fn heldout_terms(config: &RunConfig, index: &CorpusIndex) -> Result<Vec<(String, Vec<usize>)>, Failure> {
    let stop = config.stopwords()?;
    let queries = read_queries(&config.path("paths.heldout"))?;
    let mut out = Vec::with_capacity(queries.len());
    for (qid, text) in queries {
        let ids = index.vocab().lookup(&tokenize(&text, &stop));
        if ids.is_empty() {
            warn!("query {qid} has no vocabulary terms; skipped");
        } else {
            out.push((qid, ids));
        }
    }
    Ok(out)
}

fn expand(config: &RunConfig) -> Outcome {
    let mut needed = inputs(config, &["paths.index", "paths.heldout"]);
    needed.push(model_manifest(config));
    require(&needed)?;
    let index = load_index(config)?;
    let (model, _) = load_model(&config.path("paths.model"), index.vocab())?;
    let m = config.usize("expansion.m");
    let mut lists = Vec::new();
    for (qid, ids) in heldout_terms(config, &index)? {
        match term_distribution(&model, &ids, m) {
            Ok(mut list) => {
                list.query_id = qid;
                lists.push(list);
            }
            Err(e) => warn!("query {qid}: {e}; skipped"),
        }
    }
    write_file(&config.path("paths.work").join("expansion.tsv"), |out| {
        lists.iter().try_for_each(|l| l.write(out, index.vocab()))
    })?;
    Ok(())
}

fn search(config: &RunConfig) -> Outcome {
    let expand = config.bool("search.expand");
    let mut needed = inputs(config, &["paths.index", "paths.heldout"]);
    if expand {
        needed.push(model_manifest(config));
    }
    require(&needed)?;
    let index = load_index(config)?;
    let model = if expand {
        Some(load_model(&config.path("paths.model"), index.vocab())?.0)
    } else {
        None
    };
    let depth = config.usize("search.depth");
    let mu = config.f64("retrieval.mu");
    let cfg = config.expansion_config();
    let mut lists: Vec<RankedList> = Vec::new();
    for (qid, ids) in heldout_terms(config, &index)? {
        let list = match &model {
            Some(m) => kl_retrieve(&index, &expand_query(m, &ids, &cfg)?.model, depth, mu)?,
            None => ql_retrieve(&index, &ids, depth, mu)?,
        };
        lists.push(list.with_query_id(qid));
    }
    let tag = model.as_ref().map_or("ql", |m| m.kind.name());
    write_file(&config.path("paths.run"), |out| write_trec_run(out, &index, &lists, tag))?;
    Ok(())
}

fn query_terms(lookup: &TermLookup, text: &str, stop: &relemb::Stopwords) -> Vec<usize> {
    lookup.ids(&tokenize(text, stop))
}

fn classify_cmd(config: &RunConfig) -> Outcome {
    let mut needed = inputs(config, &["paths.categories", "paths.labels", "paths.heldout"]);
    needed.push(model_manifest(config));
    require(&needed)?;
    let (model, _) = EmbeddingModel::load(&config.path("paths.model"))?;
    let categories = Categories::read(&config.path("paths.categories"))?;
    let labeled = read_labeled_queries(&config.path("paths.labels"), &categories)?;
    let stop = config.stopwords()?;
    let lookup = TermLookup::new(&model);
    let training: Vec<(Vec<usize>, Vec<usize>)> = labeled
        .iter()
        .map(|q| (query_terms(&lookup, &q.text, &stop), q.labels.union()))
        .collect();
    let centroids = compute_centroids(&model, &training, categories.len());
    let t = config.usize("classify.t");
    let mut predictions = Vec::new();
    for (qid, text) in read_queries(&config.path("paths.heldout"))? {
        let p = classify(&model, &centroids, &query_terms(&lookup, &text, &stop), t)?;
        if p.flagged {
            warn!("query {qid} could not be projected; no labels assigned");
        }
        predictions.push((qid, p.labels));
    }
    write_file(&config.path("paths.work").join("predictions.tsv"), |out| {
        write_predictions(out, &predictions, &categories)
    })?;
    Ok(())
}

fn eval(config: &RunConfig) -> Outcome {
    require(&[config.path("paths.run"), config.path("paths.qrels")])?;
    let run = read_trec_run(&config.path("paths.run"))?;
    let qrels = Qrels::read(&config.path("paths.qrels"))?;
    let report = evaluate_run(&run, &qrels);
    if !report.skipped.is_empty() {
        warn!("{} queries without relevant documents were not scored", report.skipped.len());
    }
    println!("map\t{:.4}\nP_20\t{:.4}\nndcg_cut_20\t{:.4}", report.map(), report.p20(), report.ndcg20());
    let path = config.path("paths.work").join("metrics.txt");
    report.save(&path)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cv_expansion(config: &RunConfig) -> Outcome {
    let mut needed = inputs(config, &["paths.index", "paths.heldout", "paths.qrels"]);
    needed.push(model_manifest(config));
    require(&needed)?;
    let index = load_index(config)?;
    let (model, _) = load_model(&config.path("paths.model"), index.vocab())?;
    let queries = read_queries(&config.path("paths.heldout"))?;
    let qrels = Qrels::read(&config.path("paths.qrels"))?;
    let report = run_expansion_experiment(
        &model,
        &index,
        &queries,
        &config.stopwords()?,
        &qrels,
        &config.grid(),
        &config.experiment_options(),
    )?;
    for (qid, why) in &report.excluded {
        warn!("query {qid} excluded: {why}");
    }
    let system = model.kind.name();
    print!("{}", report.render_table(system));
    let body = report.render_lines(system);
    write_file(&config.path("paths.work").join("cv-expansion.txt"), |out| out.write_all(body.as_bytes()))?;
    Ok(())
}

fn cv_classify(config: &RunConfig) -> Outcome {
    let mut needed = inputs(config, &["paths.categories", "paths.labels"]);
    needed.push(model_manifest(config));
    require(&needed)?;
    let (model, _) = EmbeddingModel::load(&config.path("paths.model"))?;
    let categories = Categories::read(&config.path("paths.categories"))?;
    let labeled = read_labeled_queries(&config.path("paths.labels"), &categories)?;
    let report = cross_validate(&model, &labeled, categories.len(), &config.stopwords()?, &config.classify_options())?;
    if !report.flagged.is_empty() {
        warn!("{} queries could not be projected", report.flagged.len());
    }
    let body = report.render(model.kind.name());
    print!("{body}");
    let work = config.path("paths.work");
    write_file(&work.join("cv-classify.txt"), |out| out.write_all(body.as_bytes()))?;
    write_file(&work.join("cv-predictions.tsv"), |out| {
        write_predictions(out, &report.predictions, &categories)
    })?;
    Ok(())
}
