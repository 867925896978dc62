use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmssl::ablate::Comparison;
use mmssl::formats::read_dataset;
use mmssl::run::Summary;
use serde_json::Value;

fn mmssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmssl")).args(args).env("NO_COLOR", "1").output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "gen": {"n": 200, "test_n": 100, "missing": [{"modality": 0, "rate": 0.5, "pattern": {"rotation": {"period": 4}}}]},
  "train": {"epochs": 10, "hidden": 8, "feature_dim": 8},
  "reconstruct": {"k": 2}
}"#;

fn generate_small(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = write(dir, "small.json", SMALL);
    let data = dir.join("data.json");
    let out = mmssl(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (cfg, data)
}

#[test]
fn generate_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.json");
    let out = mmssl(&["generate", "--out", s(&data)]);
    assert!(out.status.success());
    let d = read_dataset(&data).unwrap();
    assert_eq!(d.len(), 2000);
    assert_eq!(d.labeled_ids().len(), 200);
    assert!(String::from_utf8_lossy(&out.stdout).contains("2000 samples"));
    let test = read_dataset(&dir.path().join("d.test.json")).unwrap();
    assert_eq!(test.len(), test.labeled_ids().len());
}

#[test]
fn generate_full_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"gen": {"n": 100, "labeling_rate": 1.0}}"#);
    let data = dir.path().join("d.json");
    assert!(mmssl(&["generate", "--config", s(&cfg), "--out", s(&data)]).status.success());
    let d = read_dataset(&data).unwrap();
    assert_eq!(d.labeled_ids().len(), 100);
    assert!(d.unlabeled_ids().is_empty());
}

#[test]
fn bad_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"gen": {"labelling_rate": 0.5}}"#);
    let out = mmssl(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("d.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("labelling_rate"));
}

#[test]
fn invalid_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"train": {"batch_size": 1}}"#);
    let out = mmssl(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("d.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmssl(&["train", "--data", s(&dir.path().join("none.json")), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_schema_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.json", r#"{"version": 1, "C": 2, "samples": []}"#);
    let out = mmssl(&["train", "--data", s(&data), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_artifacts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = generate_small(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for run in [&a, &b] {
        let out = mmssl(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(run), "--seed", "7"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ma = fs::read(a.join("metrics.jsonl")).unwrap();
    assert_eq!(ma, fs::read(b.join("metrics.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.json")).unwrap(), fs::read(b.join("checkpoint.json")).unwrap());

    let text = String::from_utf8(ma).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 10);
    let keys: Vec<&str> = lines[0].as_object().unwrap().keys().map(String::as_str).collect();
    let mut expected =
        ["epoch", "l_cls", "l_pl", "l_con", "l_recover", "l_all", "tau", "sigma_u", "accept_rate", "eval"];
    expected.sort_unstable();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, expected);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"].as_u64(), Some(i as u64));
    }

    let summary: Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert!(summary["timing"]["wall_seconds"].is_f64());
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["config"]["train"]["seed"], 7);
    assert_eq!(summary["config"]["train"]["batch_size"], 8);
    assert_eq!(summary["config"]["augment"]["strong_mask_frac"], 0.25);
    let s = Summary::read(&a).unwrap();
    assert!(s.accuracy().is_some());
}

#[test]
fn ablate_grid_counts_and_medians() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{
      "gen": {"n": 200, "test_n": 100, "missing": [{"modality": 0, "rate": 0.5}]},
      "train": {"epochs": 2, "hidden": 8, "feature_dim": 8},
      "reconstruct": {"k": 2},
      "ablate": {"adaptive_threshold": [true, false], "seeds": [1, 2]}
    }"#,
    );
    let out_dir = dir.path().join("grid");
    let out = mmssl(&["ablate", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let runs: Vec<PathBuf> = ["adaptive+con+subspace_map", "fixed+con+subspace_map"]
        .iter()
        .flat_map(|v| [1, 2].map(|seed| out_dir.join("runs").join(v).join(format!("seed{seed}"))))
        .collect();
    assert!(runs.iter().all(|r| r.join("summary.json").exists()));
    assert_eq!(fs::read_dir(out_dir.join("runs")).unwrap().count(), 2);

    let csv = fs::read_to_string(out_dir.join("comparison.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).filter(|l| !l.contains(",median,")).collect();
    assert_eq!(rows.len(), 4);
    let medians = fs::read_to_string(out_dir.join("medians.csv")).unwrap();
    assert_eq!(medians.lines().next().unwrap(), "metric,adaptive+con+subspace_map,fixed+con+subspace_map");

    let cmp: Comparison = serde_json::from_str(&fs::read_to_string(out_dir.join("comparison.json")).unwrap()).unwrap();
    assert!(cmp.complete);
    for (v, chunk) in cmp.variants.iter().zip(runs.chunks(2)) {
        let accs: Vec<f64> = chunk.iter().map(|r| Summary::read(r).unwrap().accuracy().unwrap()).collect();
        assert_eq!(v.median.accuracy, Some((accs[0] + accs[1]) / 2.0));
    }
    let acc_row: Vec<f64> =
        medians.lines().nth(1).unwrap().split(',').skip(1).map(|x| x.parse().unwrap()).collect();
    assert_eq!(acc_row, cmp.variants.iter().map(|v| v.median.accuracy.unwrap()).collect::<Vec<_>>());
}

#[test]
fn ablate_failure_keeps_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{
      "gen": {"n": 100, "labeling_rate": 0.05, "test_n": 50},
      "train": {"epochs": 1, "hidden": 8, "feature_dim": 8},
      "reconstruct": {"k": 6},
      "ablate": {"mode": ["zero_fill", "subspace_map"], "workers": 1}
    }"#,
    );
    let out_dir = dir.path().join("grid");
    let out = mmssl(&["ablate", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    let cmp: Comparison = serde_json::from_str(&fs::read_to_string(out_dir.join("comparison.json")).unwrap()).unwrap();
    assert!(!cmp.complete);
    assert_eq!(cmp.variants[0].runs.len(), 1);
    assert!(cmp.variants[1].runs.is_empty());
    assert!(out_dir.join("runs/adaptive+con+zero_fill/seed0/summary.json").exists());
}

#[test]
fn plot_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = generate_small(dir.path());
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    for (run, seed) in [(&a, "1"), (&b, "2")] {
        assert!(mmssl(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(run), "--seed", seed])
            .status
            .success());
    }
    let plots = dir.path().join("plots");
    let out = mmssl(&["plot", "--out", s(&plots), "--metric", "accuracy", s(&a), s(&b)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(plots.join("curves.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for metric in ["accuracy", "l_all", "tau_1"] {
        assert_eq!(rows.iter().filter(|r| r[0] == "run_a" && r[2] == metric).count(), 10);
    }
    let jsonl = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    for (line, json) in jsonl.lines().enumerate() {
        let v: Value = serde_json::from_str(json).unwrap();
        let row = rows.iter().find(|r| r[0] == "run_a" && r[1] == line.to_string() && r[2] == "l_all").unwrap();
        assert_eq!(row[3].parse::<f64>().unwrap().to_bits(), v["l_all"].as_f64().unwrap().to_bits());
    }

    let svg = fs::read_to_string(plots.join("accuracy.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains(">run_a</text>") && svg.contains(">run_b</text>"));
    assert!(!svg.contains("href") && !svg.contains("<script"));
}

#[test]
fn plot_without_runs_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mmssl(&["plot", "--out", s(dir.path())]).status.code(), Some(2));
}
