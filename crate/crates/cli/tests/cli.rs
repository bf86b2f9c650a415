use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn folvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_folvec")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).display().to_string()
}

fn path(dir: &Path, name: &str) -> (PathBuf, String) {
    let p = dir.join(name);
    let s = p.display().to_string();
    (p, s)
}

#[test]
fn unify_prints_verdict_and_unifier() {
    let o = folvec(&["oracle", "unify", "f(g(X),Y)", "f(Z,h(zero))"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "1\n{Z -> g(X), Y -> h(zero)}\n");
}

#[test]
fn oracles_print_zero_or_one() {
    let cases: [(&[&str], &str); 5] = [
        (&["oracle", "subformula", "p & q", "q"], "1\n"),
        (&["oracle", "alpha_equiv", "![X]: p(X)", "![Y]: p(Y)"], "1\n"),
        (&["oracle", "modus_ponens", "![X]: ((p(X) => q(X)) & p(X))", "![X]: q(X)"], "1\n"),
        (&["oracle", "well_formed", "((p"], "0\n"),
        (&["oracle", "unify", "f(X,X)", "f(a,b)"], "0\n"),
    ];
    for (args, expected) in cases {
        let o = folvec(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}");
        assert_eq!(stdout(&o), expected, "{args:?}");
    }
}

#[test]
fn parse_accepts_fixture_and_reports_bad_line() {
    let o = folvec(&["parse", &fixture("sets.p")]);
    assert_eq!(o.status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let (bad, bad_s) = path(dir.path(), "bad.p");
    std::fs::write(&bad, "p(X)\n(p & \n").unwrap();
    let o = folvec(&["parse", &bad_s]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
}

#[test]
fn missing_input_is_an_io_failure() {
    let o = folvec(&["parse", "/nonexistent/corpus.p"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(folvec(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(folvec(&["--help"]).status.code(), Some(0));
}

#[test]
fn gen_with_zero_examples_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let (out, out_s) = path(dir.path(), "empty.jsonl");
    let o = folvec(&["gen", "well_formed", "--corpus", &fixture("sets.p"), "--n", "0", "--seed", "1", "--out", &out_s]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(&out).unwrap().len(), 0);
}

#[test]
fn gen_is_reproducible_and_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, a_s) = path(dir.path(), "a.jsonl");
    let (b, b_s) = path(dir.path(), "b.jsonl");
    for out in [&a_s, &b_s] {
        let o = folvec(&["gen", "alpha_equiv", "--corpus", &fixture("sets.p"), "--n", "40", "--seed", "4", "--out", out]);
        assert_eq!(o.status.code(), Some(0));
    }
    let first = std::fs::read(&a).unwrap();
    assert_eq!(first, std::fs::read(&b).unwrap());
    assert_eq!(first.iter().filter(|&&c| c == b'\n').count(), 40);

    let o = folvec(&["gen", "alpha_equiv", "--corpus", &fixture("sets.p"), "--n", "4", "--out", &a_s]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, cfg_s) = path(dir.path(), "run.json");
    std::fs::write(&cfg, r#"{"stepz": 3}"#).unwrap();
    let (_, out_s) = path(dir.path(), "m.ckpt");
    let o = folvec(&["train-ae", "--mode", "recursive", "--corpus", &fixture("sets.p"), "--out", &out_s, "--config", &cfg_s, "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepz"));
}

#[test]
fn training_without_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out_s) = path(dir.path(), "m.ckpt");
    let o = folvec(&["train-ae", "--mode", "recursive", "--corpus", &fixture("sets.p"), "--out", &out_s, "--steps", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_for_one_architecture() {
    let o = folvec(&["gradcheck", "--arch", "cnn"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

/// Deepmath blocks with enough premises of each class for a split.
fn premise_file(blocks: usize) -> String {
    let mut text = String::new();
    for i in 0..blocks {
        text.push_str(&format!("C p(c{i})\n+ ![X]: (q(X) => p(X))\n- r(c{i})\n\n"));
    }
    text
}

#[test]
fn small_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("sets.p");
    let (ckpt, ckpt_s) = path(dir.path(), "ae.ckpt");
    let o = folvec(&[
        "train-ae", "--mode", "recursive", "--corpus", &corpus, "--out", &ckpt_s, "--dim", "16", "--layers", "2", "--steps", "5",
        "--seed", "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ckpt.exists());

    let (decode, decode_s) = path(dir.path(), "decode.csv");
    let o = folvec(&["eval-decode", "--ckpt", &ckpt_s, "--corpus", &corpus, "--out", &decode_s]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(&decode).unwrap();
    assert!(csv.starts_with("arch,mode,dataset,formula_acc,symbol_acc"));
    assert!(csv.lines().nth(1).unwrap().starts_with("cnn,recursive,sets,"));

    let (_, data_s) = path(dir.path(), "alpha.jsonl");
    assert_eq!(folvec(&["gen", "alpha_equiv", "--corpus", &corpus, "--n", "40", "--seed", "2", "--out", &data_s]).status.code(), Some(0));
    let (report, report_s) = path(dir.path(), "report.csv");
    let o = folvec(&["train-cls", "--ckpt", &ckpt_s, "--data", &data_s, "--seed", "1", "--steps", "20", "--out", &report_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(&report).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("alpha_equiv,cnn,recursive,"));

    let (premises, premises_s) = path(dir.path(), "premises.txt");
    std::fs::write(&premises, premise_file(30)).unwrap();
    let (_, out_s) = path(dir.path(), "premise.csv");
    let o = folvec(&["premise", "--ckpt", &ckpt_s, "--data", &premises_s, "--steps", "20", "--out", &out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let (probe, probe_s) = path(dir.path(), "probe.csv");
    let o = folvec(&["probe", "--ckpt", &ckpt_s, "--corpus", &corpus, "--target", "quantifier-count", "--out", &probe_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&probe).unwrap().starts_with("probe,target,accuracy"));
}

#[test]
fn corpus_writes_parseable_distinct_formulas() {
    let dir = tempfile::tempdir().unwrap();
    let (out, out_s) = path(dir.path(), "toy.p");
    let o = folvec(&["corpus", "--n", "50", "--max-depth", "3", "--seed", "11", "--out", &out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: std::collections::HashSet<&str> = text.lines().collect();
    assert_eq!(lines.len(), text.lines().count());
    assert!(!lines.is_empty() && lines.len() <= 50);
    assert_eq!(folvec(&["parse", &out_s]).status.code(), Some(0));
}
