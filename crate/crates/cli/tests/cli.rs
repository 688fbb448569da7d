use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn echoagent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echoagent")).args(args).env_remove("ECHOAGENT_CONFIG").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset: 128 px at 1 mm keeps each run fast.
fn small_dataset(dir: &Path) {
    let o = echoagent(&["gen-fixtures", "dataset", s(dir), "--size", "128", "--spacing", "1.0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn build_kb_prints_every_anatomy() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert_eq!(code(&echoagent(&["gen-fixtures", "corpus", s(&corpus)])), 0);
    let kb = dir.path().join("kb.json");
    let o = echoagent(&["build-kb", s(&corpus), "--out", s(&kb)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 14);
    for l in &lines {
        let (_, n) = l.rsplit_once(": ").unwrap();
        assert!(n.parse::<usize>().unwrap() > 0, "{l}");
    }
    assert!(kb.exists());
    let lv: usize = lines.iter().find_map(|l| l.strip_prefix("left ventricle: ")).unwrap().parse().unwrap();

    let o = echoagent(&["--kb", s(&kb), "--json", "query-kb", "ejection fraction", "--anatomy", "left ventricle", "--k", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["hits"].as_array().unwrap().len(), lv.min(3));
}

#[test]
fn build_kb_on_empty_corpus_warns() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = echoagent(&["build-kb", s(&empty), "--out", s(&dir.path().join("kb.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn build_kb_to_unwritable_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    echoagent(&["gen-fixtures", "corpus", s(&corpus)]);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = echoagent(&["build-kb", s(&corpus), "--out", s(&blocker.join("kb.json"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("cannot write"));
}

#[test]
fn run_study_outcomes_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let rec = dir.path().join("rec-01");
    let trace = dir.path().join("t.jsonl");
    let o = echoagent(&["run-study", s(&rec), "-q", "Is the ejection fraction normal?", "--trace", s(&trace)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("answer: Normal"), "{}", stdout(&o));
    let events: Vec<Value> = std::fs::read_to_string(&trace).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events.first().unwrap()["event_kind"], "resolve");
    assert_eq!(events.last().unwrap()["event_kind"], "conclusion");

    // study directories instead of the record directory
    let o = echoagent(&[
        "--json",
        "run-study",
        s(&rec.join("a2c")),
        s(&rec.join("a4c")),
        "-q",
        "Is EF normal?",
        "--trace",
        s(&trace),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["answer"], "Normal");

    let o = echoagent(&["run-study", s(&rec), "-q", "banana", "--trace", s(&trace)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = echoagent(&["run-study", s(&dir.path().join("missing")), "-q", "Is EF normal?", "--trace", s(&trace)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = echoagent(&["run-study", s(&rec)]);
    assert_eq!(code(&o), 1, "usage error");
}

#[test]
fn tool_contract_violation_exits_3() {
    let o = echoagent(&["tools", "invoke", "grade_ef", "--inputs", r#"{"ef_percent": "high"}"#]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = echoagent(&["tools", "invoke", "no_such_tool"]);
    assert_eq!(code(&o), 3);
    let o = echoagent(&["tools", "invoke", "grade_ef", "--inputs", r#"{"ef_percent": 45}"#]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["outputs"]["grade"], "MildlyReduced");
}

#[test]
fn evaluate_report_to_stdout_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data);
    let o = echoagent(&["evaluate", s(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["dataset_size"], 12);
    assert_eq!(v["overall_acc"], 100.0);
    assert!(stderr(&o).contains("overall acc"));

    let report = dir.path().join("report.json");
    let traces = dir.path().join("traces");
    let o = echoagent(&["evaluate", s(&data), "--report", s(&report), "--traces", s(&traces), "--sequential"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let w: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(w, v);
    assert_eq!(std::fs::read_dir(&traces).unwrap().count(), 12);
}

#[test]
fn evaluate_rejects_bad_layout() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("broken");
    std::fs::create_dir(&rec).unwrap();
    std::fs::write(rec.join("record.json"), r#"{"id": "broken", "a2c": "a2c"}"#).unwrap();
    let o = echoagent(&["evaluate", s(dir.path())]);
    assert_ne!(code(&o), 0);

    let empty = tempfile::tempdir().unwrap();
    let o = echoagent(&["evaluate", s(empty.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn config_file_paths_are_relative_to_it() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fixtures");
    echoagent(&["gen-fixtures", "corpus", s(&fx.join("corpus"))]);
    std::fs::write(
        dir.path().join("echo.toml"),
        "[paths]\nkb = \"kb.json\"\nfixtures = \"fixtures\"\nout = \"out\"\n\n[thresholds]\nk = 6\n",
    )
    .unwrap();
    let cfg = dir.path().join("echo.toml");
    let o = echoagent(&["--config", s(&cfg), "build-kb"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("kb.json").exists());

    std::fs::write(dir.path().join("bad.toml"), "[thresholds]\np_stop = 2.0\n").unwrap();
    let o = echoagent(&["--config", s(&dir.path().join("bad.toml")), "tools", "list"]);
    assert_eq!(code(&o), 1);
}
