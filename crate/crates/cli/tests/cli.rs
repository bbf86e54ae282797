use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn decolite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decolite"))
        .args(args)
        .env_remove("DECO_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string());
            }
        }
    }
    out
}

fn manifests(root: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(root.join("manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn recorded(root: &Path) -> BTreeSet<String> {
    let mut set: BTreeSet<String> = manifests(root)
        .iter()
        .flat_map(|m| m["artifacts"].as_array().unwrap().clone())
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    set.insert("manifest.jsonl".into());
    set
}

fn ensemble(out: &Path, kind: &str) -> Output {
    decolite(&[
        "ensemble", "--dataset", "synthetic", "--kind", kind, "--size", "2", "--epochs", "3", "--batch-size", "8",
        "--out", s(out),
    ])
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let o = decolite(&["train", "--dataset", "synthetic", "--epochs", "2", "--seeds", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let seed = out.join("synthetic/base-1/seed3");
    assert!(seed.join("model.ckpt").is_file());
    let log = std::fs::read_to_string(seed.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");
    let m = &manifests(&out)[0];
    assert_eq!(m["command"], "train");
    assert_eq!(m["seeds"], serde_json::json!([3]));
    assert_eq!(m["config"]["epochs"], "2");
    assert_eq!(files_under(&out), recorded(&out));
}

#[test]
fn ensemble_evaluate_diversity_and_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let o = ensemble(&out, "deco");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("Deco-LITETime-2"));
    let run = out.join("synthetic/deco-2");
    let score: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("ensemble_accuracy.json")).unwrap()).unwrap();
    assert_eq!(score["member_accuracy"].as_array().unwrap().len(), 2);

    let results = dir.path().join("results.csv");
    let common = ["--dataset", "synthetic", "--kind", "deco", "--size", "2", "--out", s(&out)];
    let mut eval = vec!["evaluate"];
    eval.extend(common);
    eval.extend(["--results", s(&results)]);
    let o = decolite(&eval);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let evaluated: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(evaluated["ensemble_accuracy"], score["ensemble_accuracy"]);
    let table = std::fs::read_to_string(&results).unwrap();
    assert!(table.starts_with("dataset,Deco-LITETime-2\nsynthetic,"), "{table}");

    let mut div = vec!["diversity"];
    div.extend(common);
    let o = decolite(&div);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["stats_seed0.json", "stats_seed1.json", "fid.json", "filter_distances.csv", "embedding.csv"] {
        assert!(run.join("diversity").join(f).is_file(), "{f}");
    }
    assert_eq!(manifests(&out).len(), 3);
    let mut expected = recorded(&out);
    expected.remove(&results.display().to_string());
    let mut found = files_under(&out);
    found.retain(|f| !f.ends_with("results.csv"));
    assert_eq!(found, expected);
}

#[test]
fn repeated_runs_give_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ensemble(out, "base");
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["ensemble_accuracy.json", "seed0/model.ckpt", "seed1/model.ckpt"] {
        let read = |root: &PathBuf| std::fs::read(root.join("synthetic/base-2").join(f)).unwrap();
        assert_eq!(read(&a), read(&b), "{f}");
    }
}

#[test]
fn mcm_on_hand_table() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results.csv");
    std::fs::write(&results, "dataset,A,B\nd1,0.9,0.8\nd2,0.8,0.8\nd3,0.7,0.6\n").unwrap();
    let out = dir.path().join("out");
    let o = decolite(&["mcm", "--results", s(&results), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("A vs B: mean diff +0.0667, W/T/L 2/1/0"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(out.join("mcm/pairwise.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    assert!(out.join("mcm/report.json").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&decolite(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&decolite(&["train", "--alpha", "2", "--dataset", "synthetic"])), 1);
    assert_eq!(code(&decolite(&["--help"])), 0);

    let o = decolite(&["train", "--dataset", "Missing", "--out", s(&out)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("DECO_DATA_ROOT"));
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = decolite(&["train", "--dataset", "Missing", "--data-root", s(&empty), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let cfg = dir.path().join("hot.cfg");
    std::fs::write(&cfg, "lr = 1e300\nepochs = 3\n").unwrap();
    let o = decolite(&["train", "--dataset", "synthetic", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn smoke_passes_and_names_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("smoke");
    let o = decolite(&["smoke", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("9/9 checks passed"));
    assert_eq!(files_under(&out), recorded(&out));
    let again = decolite(&["smoke", "--out", s(&dir.path().join("again"))]);
    assert_eq!(stdout(&again), stdout(&o));

    let bad = dir.path().join("bad");
    let o = decolite(&["smoke", "--out", s(&bad), "--inject-fault", "checkpoint"]);
    assert_eq!(code(&o), 1);
    let text = stdout(&o);
    let line = text.lines().find(|l| l.contains("checkpoint-roundtrip")).unwrap();
    assert!(line.starts_with("FAIL"), "{text}");
    assert!(text.contains("8/9 checks passed"));
}
