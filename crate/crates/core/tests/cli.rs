mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn niqqud() -> Command {
    Command::new(env!("CARGO_BIN_EXE_niqqud"))
}

fn run(args: &[&str]) -> Output {
    niqqud().args(args).output().unwrap()
}

fn run_stdin(args: &[&str], input: &str) -> Output {
    let mut child = niqqud()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // The process may exit before reading its input.
    let _ = child.stdin.take().unwrap().write_all(input.as_bytes());
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn train_small(out: &Path) -> Output {
    let corpus = common::fixture_root();
    run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--premodern-epochs",
        "1",
        "--modern-epochs",
        "1",
        "--embed-dim",
        "16",
        "--hidden-dim",
        "16",
        "--batch-size",
        "16",
        "--seed",
        "3",
    ])
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["train", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--gold", "x"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_dot_eval() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.nkdm");
    let o = train_small(&model);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(model.exists());
    // A validation split exists in the fixtures, so a report is printed.
    assert!(stdout(&o).lines().last().unwrap().starts_with("MACRO\t"));

    let o = run_stdin(&["dot", "--model", model.to_str().unwrap()], "המטוס נחת ברכות\nabc\n");
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(niqqud::codec::strip_diacritics(&out), "המטוס נחת ברכות\nabc\n");
    assert!(o.stderr.is_empty());

    let input = dir.path().join("in.txt");
    let output = dir.path().join("out.txt");
    std::fs::write(&input, "שלום עולם").unwrap();
    let o = run(&[
        "dot",
        "--model",
        model.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(niqqud::codec::strip_diacritics(&std::fs::read_to_string(&output).unwrap()), "שלום עולם");

    let gold = common::fixture_root().join("test");
    let o = run(&["eval", "--gold", gold.to_str().unwrap(), "--model", model.to_str().unwrap(), "--counts"]);
    assert_eq!(o.status.code(), Some(0));
    let report = stdout(&o);
    let first: Vec<&str> = report.lines().next().unwrap().split('\t').collect();
    assert_eq!(first.len(), 9);
    assert!(report.lines().last().unwrap().starts_with("MACRO\t"));
}

#[test]
fn eval_gold_against_itself() {
    let gold = common::fixture_root().join("validation");
    let o = run(&["eval", "--gold", gold.to_str().unwrap(), "--pred", gold.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for line in stdout(&o).lines() {
        assert!(line.ends_with("\t100.00\t100.00\t100.00\t100.00"), "{line}");
    }
}

#[test]
fn data_and_checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.nkdm");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let o = run_stdin(&["dot", "--model", bad.to_str().unwrap()], "שלום");
    assert_eq!(o.status.code(), Some(4));
    assert!(o.stdout.is_empty());
    assert!(!o.stderr.is_empty());

    let missing = dir.path().join("missing.nkdm");
    assert_eq!(run(&["dot", "--model", missing.to_str().unwrap()]).status.code(), Some(4));

    // Same file name, different letters.
    let gold = dir.path().join("gold");
    let pred = dir.path().join("pred");
    std::fs::create_dir_all(&gold).unwrap();
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::write(gold.join("a.txt"), "שָׁלוֹם").unwrap();
    std::fs::write(pred.join("a.txt"), "שָׁלוֹן").unwrap();
    let o = run(&["eval", "--gold", gold.to_str().unwrap(), "--pred", pred.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(run(&["stats", "--corpus", empty.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn stats_and_gradcheck() {
    let o = run(&["stats", "--corpus", common::fixture_root().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().nth(2).unwrap().starts_with("modern\t12\t"));

    let o = run(&["gradcheck", "--dims", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().last().unwrap().starts_with("ok: "));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("plan.conf");
    std::fs::write(&cfg, "# tiny run\nembed_dim = 8\nhidden_dim = 8\nmodern_epochs = 1\npremodern_epochs = 0\nbatch_size = 32\n").unwrap();
    let model = dir.path().join("m");
    let corpus = common::fixture_root();
    let o = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--hidden-dim",
        "12",
        "--residual",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, config, _) = niqqud::network::load_checkpoint(&model).unwrap();
    assert_eq!((config.embed_dim, config.hidden_dim, config.residual), (8, 12, true));

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
