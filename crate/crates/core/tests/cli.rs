//! Command-line behaviour, in process and through the binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use seqroute::bench::cli::run;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("seqroute").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        r#"
name = "small"
out_dir = "out"
train_tasks = 12
test_tasks = 10
workers = 2

[world]
families = 1
chain_min = 2
chain_max = 2

[router]
d_model = 16
heads = 2
layers = 1
d_ff = 32

[encoder]
name = "hash-trigram"
dim = 32

[train]
budget = 36
questions = 12

[train.optimizer]
kind = "adam"
learning_rate = 0.001
"#,
    )
    .unwrap();
    path
}

#[test]
fn convert_dag_prints_sequence_and_masks() {
    let dag = configs().join("star_dag.json");
    let (code, out, _) = cli(&["convert-dag", dag.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(out, "[analyst, researcher, judge]\n[[], [1], [1, 2]]\n");
}

#[test]
fn eval_without_checkpoint_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let (code, _, err) = cli(&["eval", "--config", config.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("checkpoint.json"), "{err}");
}

#[test]
fn bad_configs_and_usage_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "nmae = \"typo\"\n").unwrap();
    assert_eq!(cli(&["train", "--config", bad.to_str().unwrap()]).0, 1);
    assert_eq!(cli(&["train", "--config", dir.path().join("absent.toml").to_str().unwrap()]).0, 1);
    assert_eq!(cli(&["frobnicate"]).0, 1);
    assert_eq!(cli(&["--help"]).0, 0);
}

#[test]
fn train_eval_route_and_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let c = config.to_str().unwrap();
    let (code, out, err) = cli(&["train", "--config", c]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("checkpoint"));
    let out_dir = dir.path().join("out");
    for f in ["train_report.json", "train_trajectories.jsonl", "checkpoint.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }

    let (code, out, err) = cli(&["eval", "--config", c]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("learned policy: accuracy"), "{out}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["tasks"], 10);
    let lines = std::fs::read_to_string(out_dir.join("eval_trajectories.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10);
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/recompute_metrics.py");
    match Command::new("python3")
        .arg(script)
        .arg(out_dir.join("eval_trajectories.jsonl"))
        .arg("--report")
        .arg(out_dir.join("eval_report.json"))
        .output()
    {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("python3 unavailable, metric recompute skipped: {e}"),
    }

    let first = lines.lines().next().unwrap();
    let id = serde_json::from_str::<serde_json::Value>(first).unwrap()["question_id"].as_str().unwrap().to_string();
    let (code, out, err) = cli(&["route", "--config", c, "--task", &id]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("step 1:") && out.contains("answer:"), "{out}");
    assert_eq!(cli(&["route", "--config", c, "--query", "Which findings matter?"]).0, 1);

    let (code, out, err) = cli(&["compare", "--config", c, "--topologies", "chain,star,learned"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 3, "{out}");
    let csv = std::fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn binary_runs_and_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_seqroute");
    let ok = Command::new(bin).args(["convert-dag"]).arg(configs().join("star_dag.json")).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("[analyst, researcher, judge]"));
    let missing = Command::new(bin).args(["convert-dag", "no/such/dag.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("no/such/dag.json"));
}
