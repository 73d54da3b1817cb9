use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wat_core::alliance::read_scores_csv;
use wat_core::corpus::load_corpus;
use wat_core::pipeline::ConfusionMatrix;

fn wat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wat"))
        .args(args)
        .env_remove("WAT_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = wat(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.contains("config_digest="),
        "{args:?} printed no digest:\n{stdout}"
    );
    stdout
}

fn code(args: &[&str]) -> i32 {
    wat(args).status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn first_line(p: &Path) -> String {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}

#[test]
fn gen_corpus_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for p in [&a, &b] {
        ok(&[
            "gen-corpus",
            "--class-counts",
            "495,373,71,12",
            "--turns",
            "60",
            "--seed",
            "1",
            "--out",
            &s(p),
        ]);
    }
    assert_eq!(load_corpus(&a).unwrap().len(), 951);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(first_line(&a).starts_with("# config_digest="));
    let c = dir.path().join("c.jsonl");
    let stdout = ok(&["gen-corpus", "--sessions-per-class", "4", "--out", &s(&c)]);
    assert_eq!(load_corpus(&c).unwrap().len(), 16);
    assert!(stdout.contains("anxiety: 4"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("x"));
    assert_eq!(
        code(&["gen-corpus", "--class-counts", "1,2,3", "--out", &out]),
        2
    );
    assert_eq!(
        code(&["gen-corpus", "--class-counts", "0,0,0,0", "--out", &out]),
        2
    );
    assert_eq!(
        code(&[
            "gen-corpus",
            "--sessions-per-class",
            "2",
            "--bogus",
            "--out",
            &out
        ]),
        2
    );
    assert_eq!(
        code(&[
            "train",
            "--corpus",
            &out,
            "--iters",
            "0",
            "--out-checkpoint",
            &out,
            "--log",
            &out
        ]),
        2
    );
    assert_eq!(code(&["frobnicate"]), 2);
}

#[test]
fn score_rows_and_zero_text() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    fs::write(
        &corpus,
        concat!(
            r#"{"session_id":"a","condition":"anxiety","turns":["#,
            r#"{"speaker":"patient","text":"I worry all the time"},{"speaker":"therapist","text":"tell me more"},"#,
            r#"{"speaker":"patient","text":"my heart races"},{"speaker":"therapist","text":"when"},"#,
            r#"{"speaker":"patient","text":"at night"}]}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("s.csv");
    ok(&["score", "--corpus", &s(&corpus), "--out", &s(&out)]);
    assert!(first_line(&out).starts_with("# config_digest="));
    let rows = read_scores_csv(fs::read_to_string(&out).unwrap().as_bytes()).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows
        .iter()
        .flat_map(|r| &r.scores)
        .all(|v| (-1.0..=1.0).contains(v)));
    let empty = rows
        .iter()
        .find(|r| r.pair_index == 2 && r.rater.as_str() == "therapist")
        .unwrap();
    assert_eq!(empty.scores, vec![0.0; 36]);
}

#[test]
fn train_eval_round_trip_and_digest_check() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| s(&dir.path().join(n));
    ok(&[
        "gen-corpus",
        "--sessions-per-class",
        "5",
        "--turns",
        "10",
        "--seed",
        "2",
        "--out",
        &p("c.jsonl"),
    ]);
    let stdout = ok(&[
        "train",
        "--corpus",
        &p("c.jsonl"),
        "--model",
        "rnn",
        "--features",
        "wa_score",
        "--turns",
        "therapist",
        "--iters",
        "40",
        "--eval-every",
        "20",
        "--out-checkpoint",
        &p("m.json"),
        "--log",
        &p("log.csv"),
    ]);
    assert!(
        stdout.contains("lr=0.001 momentum=0.9 iters=40"),
        "{stdout}"
    );
    assert!(first_line(dir.path().join("log.csv").as_path()).starts_with("# config_digest="));
    let log = fs::read_to_string(p("log.csv")).unwrap();
    assert!(log.contains("iteration,loss,val_accuracy"));

    let stdout = ok(&[
        "eval",
        "--checkpoint",
        &p("m.json"),
        "--corpus",
        &p("c.jsonl"),
        "--confusion",
        &p("cm.csv"),
    ]);
    assert!(
        stdout.contains("accuracy=") && stdout.contains("failure="),
        "{stdout}"
    );
    let cm = ConfusionMatrix::from_csv(&fs::read_to_string(p("cm.csv")).unwrap()).unwrap();
    assert_eq!(cm.total(), 1000);

    let original = fs::read_to_string(p("m.json")).unwrap();
    let tampered = original
        .replacen("\"max_len\": 50", "\"max_len\": 49", 1)
        .replacen("\"max_len\":50", "\"max_len\":49", 1);
    assert_ne!(tampered, original);
    fs::write(p("bad.json"), tampered).unwrap();
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            &p("bad.json"),
            "--corpus",
            &p("c.jsonl")
        ]),
        1
    );
}

#[test]
fn train_defaults_are_documented() {
    let help = String::from_utf8(wat(&["train", "--help"]).stdout).unwrap();
    for needle in ["[default: 0.001]", "[default: 0.9]", "[default: 50000]"] {
        assert!(help.contains(needle), "missing {needle} in\n{help}");
    }
}

#[test]
fn ablate_parallel_matches_serial() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| s(&dir.path().join(n));
    ok(&[
        "gen-corpus",
        "--sessions-per-class",
        "3",
        "--turns",
        "6",
        "--seed",
        "4",
        "--out",
        &p("c.jsonl"),
    ]);
    for (jobs, out) in [("1", "serial"), ("4", "parallel")] {
        ok(&[
            "ablate",
            "--corpus",
            &p("c.jsonl"),
            "--iters",
            "10",
            "--eval-samples",
            "100",
            "--test-fraction",
            "0.34",
            "--jobs",
            jobs,
            "--out-dir",
            &p(out),
        ]);
    }
    let summary = |d: &str| fs::read_to_string(dir.path().join(d).join("summary.csv")).unwrap();
    let strip = |t: String| -> Vec<String> {
        t.lines()
            .map(|l| {
                l.rsplit_once(',')
                    .map(|(a, _)| a.to_string())
                    .unwrap_or_default()
            })
            .collect()
    };
    let (a, b) = (summary("serial"), summary("parallel"));
    assert!(a.starts_with("# config_digest="));
    assert_eq!(a.lines().next(), b.lines().next());
    assert_eq!(strip(a.clone()), strip(b));
    assert_eq!(a.lines().count(), 2 + 27);
    let table = fs::read_to_string(dir.path().join("serial").join("summary.txt")).unwrap();
    assert_eq!(table.lines().filter(|l| l.contains(" (")).count(), 9);
}

#[test]
fn serve_embed_port_in_use_exits_1() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port().to_string();
    assert_eq!(code(&["serve-embed", "--port", &port]), 1);
}
