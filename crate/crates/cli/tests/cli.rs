use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use memex_core::corpus::FEATURES_FILE;
use memex_core::eval::{four_w_distribution, kl};
use memex_core::Corpus;
use tempfile::TempDir;

fn memex() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_memex"));
    c.env_remove("MEMEX_SEED").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    memex().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert_eq!(o.status.code(), Some(0), "memex {args:?}: {}", stderr(&o));
    stdout(&o)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic corpus under a fresh temp dir.
fn small_corpus(seed: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&[
        "--seed", seed, "gen", "--out", s(&corpus), "--users", "2", "--albums", "2", "--photos", "4",
        "--qas-per-photo", "2",
    ]);
    (dir, corpus)
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert!(stdout(&run(&["--help"])).contains("grad-check"));
}

#[test]
fn usage_errors_exit_one() {
    for args in [&["frobnicate"][..], &["gen", "--bogus"], &[]] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).contains("Usage"), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(run(&["--seed", "x", "gen"]).status.code(), Some(1));
}

#[test]
fn validation_errors_exit_one() {
    let (dir, corpus) = small_corpus("1");
    let missing = dir.path().join("nope");
    assert_eq!(run(&["stats", "--corpus", s(&missing)]).status.code(), Some(1));
    assert_eq!(run(&["gen"]).status.code(), Some(1), "missing --out");
    let o = run(&["search", "nobody", "beach", "--corpus", s(&corpus)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nobody"));
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    assert_eq!(run(&["eval", s(&bad), "--corpus", s(&corpus)]).status.code(), Some(1));
    fs::write(corpus.join("qas.json"), "[{").unwrap();
    assert_eq!(run(&["ingest", "--corpus", s(&corpus)]).status.code(), Some(1));
}

#[test]
fn write_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = run(&["gen", "--out", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn gen_is_deterministic_and_seeded() {
    let (_a, first) = small_corpus("5");
    let (_b, second) = small_corpus("5");
    let (_c, other) = small_corpus("6");
    assert_eq!(tree(&first), tree(&second));
    assert_ne!(tree(&first), tree(&other));

    let dir = tempfile::tempdir().unwrap();
    let env_seeded = dir.path().join("env");
    let out = memex()
        .args(["gen", "--out", s(&env_seeded), "--users", "2", "--albums", "2", "--photos", "4", "--qas-per-photo", "2"])
        .env("MEMEX_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(tree(&env_seeded), tree(&first));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let from_file = dir.path().join("from_file");
    let config = dir.path().join("memex.conf");
    fs::write(
        &config,
        format!("# small corpus\nseed = 5\nusers = 2\nalbums = 2\nphotos = 4\nqas_per_photo = 2\nout = {}\n", s(&from_file)),
    )
    .unwrap();
    ok(&["--config", s(&config), "gen"]);
    let (_a, reference) = small_corpus("5");
    assert_eq!(tree(&from_file), tree(&reference));

    let overridden = dir.path().join("overridden");
    ok(&["--config", s(&config), "--seed", "6", "gen", "--out", s(&overridden)]);
    let (_b, six) = small_corpus("6");
    assert_eq!(tree(&overridden), tree(&six));

    fs::write(&config, "colour = blue\n").unwrap();
    let o = run(&["--config", s(&config), "gen"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn search_ranks_the_only_matching_photo_first() {
    let (dir, corpus) = small_corpus("3");
    let loaded = Corpus::load_dir(&corpus).unwrap();
    let mut photos = loaded.photos().to_vec();
    photos[5].title = "Zeppelin over the harbour".into();
    let target = photos[5].photo_id.clone();
    let user = loaded.user_of(&photos[5]).to_string();
    let edited = Corpus::new(loaded.albums().to_vec(), photos, loaded.qas().to_vec()).unwrap();
    edited.write_dir(&corpus).unwrap();

    let text = ok(&["search", &user, "zeppelin", "--corpus", s(&corpus)]);
    let first = text.lines().next().unwrap();
    assert!(first.contains(&target), "{text}");
    assert_eq!(text.lines().count(), 1, "{text}");

    let snapshot = dir.path().join("index.mxi");
    ok(&["index", "--corpus", s(&corpus), "--out", s(&snapshot)]);
    let json = ok(&["--json", "search", &user, "Zeppelins!", "--index", s(&snapshot)]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["results"][0]["photo_id"], target.as_str());
    assert_eq!(v["results"].as_array().unwrap().len(), 1);
}

#[test]
fn stats_reports_distribution_and_kl() {
    let (dir, corpus) = small_corpus("2");
    let reference = dir.path().join("reference.json");
    fs::write(&reference, r#"{"what": 0.4, "when": 0.2, "who": 0.2, "where": 0.2}"#).unwrap();
    let json = ok(&["--json", "stats", "--corpus", s(&corpus), "--reference", s(&reference)]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let loaded = Corpus::load_dir(&corpus).unwrap();
    let dist = four_w_distribution(loaded.qas()).unwrap();
    let want = kl(&dist.to_vec(), &[0.4, 0.2, 0.2, 0.2]).unwrap();
    assert!((v["kl"].as_f64().unwrap() - want).abs() < 1e-12);
    assert_eq!(v["counts"]["qas"], loaded.qas().len());
    let sum: f64 = ["what", "when", "who", "where"].iter().map(|k| v["four_w"][k].as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-12);

    let text = ok(&["stats", "--corpus", s(&corpus), "--reference", s(&reference)]);
    assert!(text.contains("KL(corpus || reference)"), "{text}");
}

#[test]
fn ingest_writes_a_canonical_copy() {
    let (dir, corpus) = small_corpus("4");
    let copy = dir.path().join("copy");
    ok(&["ingest", "--corpus", s(&corpus), "--out", s(&copy)]);
    assert_eq!(tree(&copy), tree(&corpus));
    assert!(copy.join(FEATURES_FILE).exists());
}

fn trained(kind: &str) -> (TempDir, PathBuf, PathBuf) {
    let (dir, corpus) = small_corpus("7");
    let ckpt = dir.path().join(format!("{kind}.ckpt"));
    ok(&["--seed", "7", "train", kind, "--corpus", s(&corpus), "--out", s(&ckpt), "--epochs", "2"]);
    (dir, corpus, ckpt)
}

#[test]
fn train_and_eval_agree() {
    let (_dir, corpus, ckpt) = trained("bow");
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["--json", "eval", s(&ckpt), "--corpus", s(&corpus)])).unwrap();
    assert_eq!(v["model"], "bow");
    let acc = v["report"]["overall"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(run(&["eval", s(&ckpt), "--corpus", s(&corpus), "--split", "dev"]).status.code(), Some(1));
    let o = run(&["ask", s(&ckpt), "u0", "--corpus", s(&corpus)]);
    assert_eq!(o.status.code(), Some(1), "ask needs memexnet");
}

fn ask(corpus: &Path, ckpt: &Path, user: &str, extra: &[&str], input: &str) -> Output {
    let mut child = memex()
        .args(extra)
        .args(["ask", s(ckpt), user, "--corpus", s(corpus)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn ask_reprompts_on_bad_input() {
    let (_dir, corpus, ckpt) = trained("memexnet");
    let user = Corpus::load_dir(&corpus).unwrap().users().next().unwrap().to_string();
    let input = "What did we see?\nlake\n\nbeach\nbeach\nforest\n\
                 What did we see?\nlake\nbeach\nforest\nmuseum\n\n";
    let o = ask(&corpus, &ckpt, &user, &[], input);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (out, err) = (stdout(&o), stderr(&o));
    assert!(err.contains("a choice cannot be empty"), "{err}");
    assert!(err.contains("cannot answer"), "{err}");
    assert_eq!(out.matches("answer: ").count(), 1, "{out}");
    assert!(out.contains("alpha"), "{out}");

    let o = ask(&corpus, &ckpt, &user, &["--json"], "Where were we?\nlake\nbeach\nforest\nmuseum\n");
    let line = stdout(&o);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    let chosen = v["chosen_index"].as_u64().unwrap() as usize;
    assert_eq!(v["chosen"], ["lake", "beach", "forest", "museum"][chosen]);

    let o = ask(&corpus, &ckpt, &user, &[], "Where were we?\nlake\nbeach\nforest\nmuseum\n");
    let plain = stdout(&o);
    let o = memex()
        .args(["ask", s(&ckpt), &user, "--corpus", s(&corpus), "--explain"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .and_then(|mut c| {
            c.stdin.take().unwrap().write_all(b"Where were we?\nlake\nbeach\nforest\nmuseum\n")?;
            c.wait_with_output()
        })
        .unwrap();
    let explained = stdout(&o);
    assert!(explained.starts_with(&plain) && explained.len() > plain.len());
    assert!(explained.contains("\"matches\""), "{explained}");

    assert_eq!(ask(&corpus, &ckpt, "nobody", &[], "").status.code(), Some(1));
}

#[test]
fn grad_check_command_passes() {
    let text = ok(&["--seed", "3", "grad-check", "lstm_att", "--per-param", "10"]);
    assert!(text.contains("lstm_att") && text.contains("ok"), "{text}");
    assert_eq!(run(&["grad-check", "nonsense"]).status.code(), Some(1));
}
