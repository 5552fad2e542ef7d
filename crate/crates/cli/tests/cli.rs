use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gvqa_core::harness::synthetic_dataset;
use gvqa_core::records::{read_jsonl, write_jsonl};
use gvqa_core::{DatasetRecord, Prediction};
use tempfile::TempDir;

fn gvqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvqa"))
        .args(args)
        .env_remove("GVQA_BACKEND_URL")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
    dataset: PathBuf,
    records: Vec<DatasetRecord>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("dataset.jsonl");
        let records = synthetic_dataset(n, 11);
        write_jsonl(&dataset, &records).unwrap();
        Self { dir, dataset, records }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, tag: &str, extra: &[&str]) -> (Output, PathBuf, PathBuf) {
        let out = self.path(&format!("pred_{tag}.jsonl"));
        let tr = self.path(&format!("tr_{tag}.jsonl"));
        let mut args = vec!["run", "--dataset", s(&self.dataset), "--out", s(&out), "--transcripts", s(&tr)];
        args.extend_from_slice(extra);
        (gvqa(&args), out, tr)
    }
}

#[test]
fn run_then_fuse_reproduces_predictions() {
    let ws = Workspace::new(25);
    let config = ws.write("run.toml", "seed = 5\nfusion_k = 4\n");
    let report = ws.path("report.json");
    let (output, pred, tr) = ws.run("a", &["--config", s(&config), "--report", s(&report)]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("25 questions, 0 failed"), "{stdout}");
    assert!(report.exists() && report.with_extension("txt").exists());

    let replayed = ws.path("replayed.jsonl");
    let output = gvqa(&["fuse", "--transcripts", s(&tr), "--config", s(&config), "--out", s(&replayed)]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(std::fs::read(&pred).unwrap(), std::fs::read(&replayed).unwrap());
}

#[test]
fn worker_count_does_not_change_output() {
    let ws = Workspace::new(30);
    let (a, pred_a, _) = ws.run("w1", &["--workers", "1", "--seed", "2"]);
    let (b, pred_b, _) = ws.run("w4", &["--workers", "4", "--seed", "2"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(std::fs::read(pred_a).unwrap(), std::fs::read(pred_b).unwrap());
}

#[test]
fn path_and_task_flags_shape_the_output() {
    let ws = Workspace::new(5);
    let (output, pred, _) = ws.run("p3", &["--paths", "3"]);
    assert!(output.status.success());
    let preds: Vec<Prediction> = read_jsonl(&pred).unwrap();
    for p in &preds {
        let per_path = p.per_path.as_ref().unwrap();
        assert_eq!(per_path.len(), 1);
        assert_eq!(u8::from(per_path[0].path), 3);
    }

    let (output, pred, _) = ws.run("qa", &["--task", "qa"]);
    assert!(output.status.success());
    let preds: Vec<Prediction> = read_jsonl(&pred).unwrap();
    assert!(preds.iter().all(|p| p.answer.is_some() && p.spans.is_empty()));
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let ws = Workspace::new(10);
    let preds: Vec<Prediction> = ws
        .records
        .iter()
        .map(|r| Prediction {
            qid: r.qid.clone(),
            answer: r.answer,
            spans: r.spans.iter().map(|s| [s[0], s[1], 1.0]).collect(),
            per_path: None,
            error: None,
        })
        .collect();
    let pred = ws.path("gt.jsonl");
    write_jsonl(&pred, &preds).unwrap();
    let report = ws.path("eval.json");
    let output = gvqa(&[
        "eval",
        "--dataset",
        s(&ws.dataset),
        "--pred",
        s(&pred),
        "--report",
        s(&report),
        "--iou-thresholds",
        "0.5,0.9",
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["acc_gqa"], 100.0);
    assert_eq!(json["m_iou"], 100.0);
    assert_eq!(json["r_iou"]["0.9"], 100.0);
    assert!(json["r_iou"].get("0.3").is_none());

    // An empty predictions file scores zero rather than failing.
    let empty = ws.write("empty.jsonl", "");
    let output = gvqa(&["eval", "--dataset", s(&ws.dataset), "--pred", s(&empty), "--report", s(&report)]);
    assert!(output.status.success());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["acc_qa"], 0.0);
    assert_eq!(json["m_iop"], 0.0);
}

#[test]
fn simulate_writes_seven_rows_deterministically() {
    let ws = Workspace::new(1);
    let a = ws.path("sim_a.json");
    let b = ws.path("sim_b.json");
    for (path, workers) in [(&a, "1"), (&b, "3")] {
        let output = gvqa(&[
            "simulate",
            "--n",
            "20",
            "--seeds",
            "1,2",
            "--noise",
            "span_jitter=0.15,conf_noise=0.1,answer_acc=0.75",
            "--report",
            s(path),
            "--workers",
            workers,
        ]);
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 7);
    assert_eq!(json["cells"][0]["per_seed"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_arguments_exit_with_two() {
    let ws = Workspace::new(2);
    assert_eq!(gvqa(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(ws.run("x", &["--paths", "4"]).0.status.code(), Some(2));
    assert_eq!(ws.run("x", &["--task", "chat"]).0.status.code(), Some(2));
    assert_eq!(ws.run("x", &["--set", "no_such_key=1"]).0.status.code(), Some(2));
    assert_eq!(
        gvqa(&["simulate", "--noise", "span_jitter=-1", "--report", s(&ws.path("r.json"))]).status.code(),
        Some(2)
    );
    let missing = ws.path("missing.jsonl");
    let output = gvqa(&["run", "--dataset", s(&missing), "--out", s(&ws.path("o")), "--transcripts", s(&ws.path("t"))]);
    assert_eq!(output.status.code(), Some(2));
    let bad = ws.write("bad.jsonl", "{\"qid\": \"a\"}\n");
    let output = gvqa(&["eval", "--dataset", s(&bad), "--pred", s(&bad), "--report", s(&ws.path("r.json"))]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unreachable_backend_is_a_systemic_failure() {
    let ws = Workspace::new(3);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = ws.write(
        "remote.toml",
        &format!("backend = \"remote\"\nbackend_url = \"http://127.0.0.1:{port}\"\nretries = 0\n"),
    );
    let (output, _, _) = ws.run("remote", &["--config", s(&config)]);
    assert_eq!(output.status.code(), Some(1), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stderr).contains("every record failed"));
}
