use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data/toy")
        .join(name)
        .display()
        .to_string()
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phononer"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["stats", "--input", "nowhere.conll"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(
        dir.path(),
        &[
            "predict",
            "--checkpoint",
            "none.ckpt",
            "--input",
            &toy("dev.conll"),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_configuration_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let dev = toy("dev.conll");
    assert_eq!(
        run(dir.path(), &["stats", "--input", &dev, "-s", "epochs=many"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        run(dir.path(), &["stats", "--input", &dev, "--no-such-flag"])
            .status
            .code(),
        Some(3)
    );
    std::fs::write(dir.path().join("run.cfg"), "epochs = 7\nbogus = 1\n").unwrap();
    let out = run(dir.path(), &["stats", "-c", "run.cfg", "--input", &dev]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.cfg:2"));
}

#[test]
fn invalid_corpus_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conll"), "a N O\nb N O extra more\n").unwrap();
    assert_eq!(
        run(dir.path(), &["stats", "--input", "bad.conll"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn config_file_and_flags_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.cfg"),
        "# toy run\nepochs = 12\nseed = 4\n",
    )
    .unwrap();
    let text = ok(
        dir.path(),
        &[
            "preprocess",
            "-c",
            "run.cfg",
            "--seed",
            "9",
            "--input",
            &toy("dev.conll"),
        ],
    );
    let header: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    assert_eq!(header[0], "# phononer preprocess");
    assert!(header.contains(&"# config epochs=12"));
    assert!(header.contains(&"# config seed=9"));
    assert!(header.contains(&"# config dropout=0.5"));
}

#[test]
fn evaluating_gold_against_itself_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let dev = toy("dev.conll");
    let text = ok(dir.path(), &["evaluate", "--input", &dev, "--gold", &dev]);
    let rows = body(&text);
    assert_eq!(
        rows[0].split_whitespace().collect::<Vec<_>>(),
        ["class", "precision", "recall", "F1", "support"]
    );
    let overall = rows.iter().find(|l| l.starts_with("overall")).unwrap();
    assert_eq!(overall.split_whitespace().nth(3), Some("100.00"));

    let json = ok(
        dir.path(),
        &[
            "evaluate",
            "--input",
            &dev,
            "--gold",
            &dev,
            "-s",
            "report-format=json",
        ],
    );
    let v: serde_json::Value = serde_json::from_str(&body(&json).join("\n")).unwrap();
    assert_eq!(v["config"]["report-format"], "json");
}

#[test]
fn train_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (train, dev, emb) = (toy("train.conll"), toy("dev.conll"), toy("embeddings.txt"));
    let short = ["--embeddings", emb.as_str(), "--epochs", "8"];
    let train_args = [
        &[
            "train",
            "--train",
            &train,
            "--dev",
            &dev,
            "--checkpoint",
            "m.ckpt",
            "--log",
            "log.jsonl",
        ],
        &short[..],
    ]
    .concat();
    ok(dir.path(), &train_args);
    let log = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["record"], "config");

    ok(
        dir.path(),
        &[
            &[
                "predict",
                "--checkpoint",
                "m.ckpt",
                "--input",
                &dev,
                "-o",
                "dev.pred",
            ],
            &short[..],
        ]
        .concat(),
    );
    let pred = std::fs::read_to_string(dir.path().join("dev.pred")).unwrap();
    assert!(pred.starts_with("# phononer predict\n"));
    let report = ok(
        dir.path(),
        &["evaluate", "--input", "dev.pred", "--gold", &dev],
    );
    let overall = body(&report)
        .into_iter()
        .find(|l| l.starts_with("overall"))
        .unwrap()
        .to_string();
    let f1: f64 = overall.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(f1 >= 90.0, "{overall}");
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["gradcheck"]);
    let lines: Vec<&str> = body(&text);
    assert_eq!(lines.len(), 9);
    assert!(lines.iter().all(|l| l.ends_with("ok")));
}

#[test]
fn help_exits_0() {
    let out = run(&PathBuf::from("."), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}
