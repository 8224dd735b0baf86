use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

/// Overrides pointing every input at the bundled toy data and the work
/// directory at `work`, with small training settings.
fn toy_args(work: &Path) -> Vec<String> {
    let toy = toy_dir();
    let p = |name: &str| toy.join(name).display().to_string();
    [
        ("paths.work", work.display().to_string()),
        ("paths.corpus", p("corpus.tsv")),
        ("paths.query_log", p("query_log.txt")),
        ("paths.heldout", p("heldout_queries.tsv")),
        ("paths.qrels", p("qrels.txt")),
        ("paths.labels", p("labeled_queries.tsv")),
        ("paths.categories", p("categories.txt")),
        ("train.dim", "10".into()),
        ("train.epochs", "3".into()),
        ("train.batch_size", "8".into()),
        ("train.learning_rate", "1.0".into()),
    ]
    .into_iter()
    .flat_map(|(k, v)| ["--set".to_string(), format!("{k}={v}")])
    .collect()
}

fn relemb(command: &str, args: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relemb"))
        .arg(command)
        .args(args)
        .env_remove("RELEMB_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(command: &str, args: &[String]) -> Output {
    let out = relemb(command, args);
    assert!(out.status.success(), "{command} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn status(command: &str, args: &[String]) -> i32 {
    relemb(command, args).status.code().unwrap()
}

fn with(mut args: Vec<String>, key_value: &str) -> Vec<String> {
    args.push("--set".into());
    args.push(key_value.into());
    args
}

fn prepare(work: &Path) -> Vec<String> {
    let args = toy_args(work);
    for c in ["build-index", "filter-queries", "gen-train", "train"] {
        ok(c, &args);
    }
    args
}

fn manifest(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn train_writes_checkpoint_and_loss_log() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    prepare(&work);
    for f in ["model.manifest", "model.query.vec", "model.nodes.vec", "model.tree", "model.loss.tsv", "train.manifest"] {
        assert!(work.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(work.join("model.loss.tsv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], "epoch\tloss");
    assert_eq!(rows.len(), 4);
    for r in &rows[1..] {
        let loss: f64 = r.split('\t').nth(1).unwrap().parse().unwrap();
        assert!(loss.is_finite() && loss > 0.0);
    }
    let m = manifest(&work.join("model.manifest"));
    assert_eq!(m["kind"], "rlm");
}

#[test]
fn unset_keys_take_reference_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    let corpus = toy_dir().join("corpus.tsv").display().to_string();
    let args = vec![
        "--set".into(),
        format!("paths.work={}", work.display()),
        "--set".into(),
        format!("paths.corpus={corpus}"),
    ];
    ok("build-index", &args);
    let m = manifest(&work.join("build-index.manifest"));
    assert_eq!(m["retrieval.mu"], "1500");
    assert_eq!(m["retrieval.k"], "10");
    assert_eq!(m["train.dim"], "300");
    assert_eq!(m["paths.index"], format!("{}/index.bin", work.display()));
    assert!(work.join("index.bin").is_file());
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    let cfg = tmp.path().join("run.conf");
    let corpus = toy_dir().join("corpus.tsv");
    fs::write(
        &cfg,
        format!("# toy\npaths.work = {}\npaths.corpus = {}\nretrieval.mu = 1000\nretrieval.k = 5\n", work.display(), corpus.display()),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_relemb"))
        .args(["build-index", "--set", "retrieval.k=7"])
        .env("RELEMB_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&work.join("build-index.manifest"));
    assert_eq!(m["retrieval.mu"], "1000");
    assert_eq!(m["retrieval.k"], "7");
}

#[test]
fn cv_expansion_reports_each_fold_choice() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    let args = prepare(&work);
    let out = ok("cv-expansion", &args);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("fold 1: alpha = ") && table.contains("fold 2: alpha = "), "{table}");

    let report = fs::read_to_string(work.join("cv-expansion.txt")).unwrap();
    let value = |metric: &str| -> String {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{metric}\t")))
            .unwrap_or_else(|| panic!("{metric} missing:\n{report}"))
            .rsplit('\t')
            .next()
            .unwrap()
            .to_string()
    };
    for fold in 1..=2 {
        let alpha: f64 = value(&format!("fold{fold}_alpha")).parse().unwrap();
        let m: usize = value(&format!("fold{fold}_m")).parse().unwrap();
        assert!((1..=9).any(|i| (alpha - i as f64 / 10.0).abs() < 1e-12), "alpha {alpha}");
        assert!(m % 10 == 0 && (10..=100).contains(&m), "m {m}");
    }
    assert!(value("map").parse::<f64>().is_ok());
}

#[test]
fn search_eval_and_classification_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    let args = prepare(&work);
    ok("search", &args);
    let ql = fs::read_to_string(work.join("run.trec")).unwrap();
    assert!(ql.lines().all(|l| l.ends_with(" ql")));
    let expanded = with(args.clone(), "search.expand=true");
    ok("search", &expanded);
    let run = fs::read_to_string(work.join("run.trec")).unwrap();
    assert!(run.lines().next().unwrap().ends_with(" rlm"));
    ok("eval", &args);
    let metrics = fs::read_to_string(work.join("metrics.txt")).unwrap();
    assert!(metrics.lines().any(|l| l.starts_with("map\tall\t")));

    ok("expand", &args);
    let terms = fs::read_to_string(work.join("expansion.tsv")).unwrap();
    let first = terms.lines().next().unwrap().split('\t').next().unwrap().to_string();
    assert_eq!(terms.lines().filter(|l| l.starts_with(&format!("{first}\t"))).count(), 10);

    ok("classify", &args);
    assert!(work.join("predictions.tsv").is_file());
    let out = ok("cv-classify", &args);
    let body = String::from_utf8(out.stdout).unwrap();
    assert!(body.contains("fold5_t\trlm\t"), "{body}");
    assert!(work.join("cv-predictions.tsv").is_file());
}

#[test]
fn exit_statuses_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    let args = toy_args(&work);

    assert_eq!(status("frobnicate", &args), 2);
    assert_eq!(status("train", &with(args.clone(), "train.colour=blue")), 3);
    assert_eq!(status("train", &with(args.clone(), "retrieval.mu=lots")), 3);
    assert_eq!(status("train", &with(args.clone(), "expansion.alpha=2")), 3);
    assert_eq!(status("train", &with(args.clone(), "train.kind=glove")), 3);
    assert_eq!(status("build-index", &with(args.clone(), "paths.corpus=/nonexistent/corpus.tsv")), 4);
    assert_eq!(status("train", &args), 4);
    assert_eq!(status("build-index", &["--config".to_string(), "/nonexistent.conf".to_string()]), 4);

    fs::create_dir_all(&work).unwrap();
    fs::write(work.join("index.bin"), b"not an index").unwrap();
    fs::write(work.join("queries.tsv"), "q1\tsomething\n").unwrap();
    let out = relemb("gen-train", &args);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().filter(|l| l.starts_with("error:")).count(), 1, "{stderr}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    let run_all = || {
        let args = prepare(&work);
        for c in ["search", "eval", "expand", "classify", "cv-classify"] {
            ok(c, &args);
        }
        dir_bytes(&work)
    };
    let first = run_all();
    let second = run_all();
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (name, bytes) in &first {
        assert!(bytes == &second[name], "{name} changed between runs");
    }
}

#[test]
fn help_lists_every_command_and_key() {
    let out = Command::new(env!("CARGO_BIN_EXE_relemb")).arg("--help").output().unwrap();
    let help = String::from_utf8(out.stdout).unwrap();
    for c in ["build-index", "filter-queries", "gen-train", "train", "expand", "search", "classify", "eval", "cv-expansion", "cv-classify"] {
        assert!(help.contains(c), "{c} missing from --help");
    }
    let keys = String::from_utf8(Command::new(env!("CARGO_BIN_EXE_relemb")).arg("keys").output().unwrap().stdout).unwrap();
    for k in ["retrieval.mu", "train.dim", "expansion.alphas", "classify.averaging", "seed", "workers"] {
        assert!(keys.contains(k), "{k} missing from keys");
    }
}
