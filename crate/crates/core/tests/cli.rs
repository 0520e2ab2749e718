use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "pool.knn.count=1",
    "pool.md.count=1",
    "pool.hbos.count=1",
    "ga.population=6",
    "ga.generations=3",
    "gan.epochs=2",
    "gan.hidden=16",
    "meta.rf.trees=5",
    "mc.trials=2",
    "lints.windows=10",
];

fn adsel(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_adsel"));
    cmd.args(args).env_remove("RAMSES_SEED");
    if let Some(s) = env_seed {
        cmd.env("RAMSES_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn synth(dir: &Path, kind: &str, length: &str) -> PathBuf {
    let out = adsel(
        &["synth", "--kind", kind, "--length", length, "--count", "4", "--seed", "3", "--out", dir.to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.join(format!("synth_{kind}_3.csv"));
    assert!(path.exists());
    path
}

fn small_args<'a>(cmd: &'a str, data: &'a str, out: &'a str) -> Vec<&'a str> {
    let mut args = vec![cmd, "--data", data, "--out", out];
    for s in SMALL {
        args.extend(["--set", s]);
    }
    args
}

fn selection_line(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join("selection.jsonl")).unwrap();
    text.lines().next().unwrap().to_string()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(adsel(&["select"], None).status.code(), Some(1));
    assert_eq!(adsel(&["bogus"], None).status.code(), Some(1));
    let out = adsel(&["select", "--data", "x.csv", "--set", "ga.nope=1"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ga.nope"));
    assert_eq!(adsel(&["select", "--data", "x.csv"], Some("abc")).status.code(), Some(1));
}

#[test]
fn missing_data_exits_two() {
    let out = adsel(&["select", "--data", "/no/such/series.csv"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn aggregate_unanimous_rankings() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("r.jsonl");
    std::fs::write(&input, "[\"b\",\"a\",\"c\"]\n{\"ids\":[\"b\",\"a\",\"c\"]}\n\n[\"b\",\"a\",\"c\"]\n").unwrap();
    let out = adsel(&["aggregate", "--rankings", input.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["record"], "consensus");
    assert_eq!(v["ranking"]["ids"], serde_json::json!(["b", "a", "c"]));
    assert_eq!(v["converged"], true);
}

#[test]
fn select_writes_records_and_honors_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "point", "600");
    let data = data.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");

    let mut args = small_args("select", data, a.to_str().unwrap());
    args.extend(["--seed", "9"]);
    assert_eq!(adsel(&args, None).status.code(), Some(0));
    let args = small_args("select", data, b.to_str().unwrap());
    assert_eq!(adsel(&args, Some("9")).status.code(), Some(0));
    // --seed beats the environment
    let mut args = small_args("select", data, c.to_str().unwrap());
    args.extend(["--seed", "9"]);
    assert_eq!(adsel(&args, Some("1")).status.code(), Some(0));

    let line = selection_line(&a);
    assert_eq!(line, selection_line(&b));
    assert_eq!(line, selection_line(&c));
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["record"], "selection");
    assert_eq!(v["selection"]["seed"], 9);
    assert_eq!(v["selection"]["final_ranking"]["ids"].as_array().unwrap().len(), 3);
    let timing = std::fs::read_to_string(a.join("selection.jsonl")).unwrap();
    let timing: serde_json::Value = serde_json::from_str(timing.lines().nth(1).unwrap()).unwrap();
    assert_eq!(timing["record"], "timing");
    assert!(timing["durations"]["ga"].is_number());
}

#[test]
fn stream_emits_one_decision_per_window() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "collective", "500");
    let out = dir.path().join("run");
    let mut args = small_args("stream", data.to_str().unwrap(), out.to_str().unwrap());
    args.extend(["--set", "online.reopt=off", "--seed", "2"]);
    let res = adsel(&args, None);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let text = std::fs::read_to_string(out.join("decisions.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let (summary, decisions) = lines.split_last().unwrap();
    assert_eq!(summary["record"], "summary");
    assert_eq!(summary["summary"]["windows"].as_u64().unwrap() as usize, decisions.len());
    assert_eq!(summary["summary"]["reoptimizations"], 0);
    for d in decisions {
        assert_eq!(d["record"], "window");
        let branch = d["designated"].as_str().unwrap();
        assert_eq!(d["final"], d[branch]);
    }
    assert!(out.join("selection.jsonl").exists());
}
