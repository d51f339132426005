use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nmce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmce")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY_RUN: &str = r#"
seed = 3

[data]
generator = "double-spiral"
radius = 15.0
noise_sigma = 0.05
eval_per_class = 40

[model]
hidden_widths = [16]
activation = { kind = "elu" }
feature_dim = 4

[[stages]]
objective = "tcr"
lr = 1e-3
weight_decay = 1e-6
epsilon = 0.1
lambda = 10.0
batch_size = 32
steps = 4
aug_sigma = 0.05

[[stages]]
objective = "nmce"
lr = 1e-3
weight_decay = 1e-6
epsilon = 0.1
lambda = 10.0
batch_size = 32
steps = 3
aug_sigma = 0.05
"#;

fn train_tiny(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("tiny.toml");
    fs::write(&cfg, TINY_RUN).unwrap();
    let out = dir.join("run");
    let o = nmce(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--log-every", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn gen_data_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n).to_str().unwrap().to_owned();
    for (name, seed) in [("a.csv", "5"), ("b.csv", "5"), ("c.csv", "6")] {
        let o = nmce(&["gen-data", "random-mlp", "--n", "30", "--seed", seed, "--out", &path(name)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |n: &str| fs::read(path(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
    let text = String::from_utf8(read("a.csv")).unwrap();
    assert!(text.starts_with("x0,x1,x2,x3,x4,x5,x6,x7,x8,x9,x10,x11,label\n"));
    assert_eq!(text.lines().count(), 61);
    assert!(dir.path().join("a.meta.toml").exists());
}

#[test]
fn gen_data_rejects_unknown_generator() {
    let o = nmce(&["gen-data", "triple-helix"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown generator"), "{}", stderr(&o));
}

#[test]
fn gen_data_rejects_flags_of_the_other_generator() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = nmce(&["gen-data", "double-spiral", "--ambient-dim", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

#[test]
fn train_without_config_prints_usage() {
    let o = nmce(&["train"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn train_reports_bad_config_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, TINY_RUN.replacen("epsilon = 0.1", "epsilon = -1.0", 1)).unwrap();
    let o = nmce(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("stages[0].epsilon"), "{}", stderr(&o));
}

#[test]
fn train_writes_artifacts_and_eval_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path());
    for f in [
        "config.toml",
        "checkpoint.json",
        "history.csv",
        "eval_data.csv",
        "metrics.txt",
        "embeddings.csv",
        "spectra.csv",
        "manifest.json",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "step,loss,total_rate,cluster_rate,constraint_d");
    assert_eq!(lines.len(), 1 + 4 + 3);
    assert!(lines[1].split(',').nth(3).unwrap().is_empty());
    assert!(!lines[7].split(',').nth(3).unwrap().is_empty());

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["stage_wall_clock_secs"].as_array().unwrap().len(), 2);

    let ckpt = run.join("checkpoint.json");
    let data = run.join("eval_data.csv");
    let mut metrics = Vec::new();
    for name in ["e1", "e2"] {
        let out = dir.path().join(name);
        let o = nmce(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        metrics.push(fs::read(out.join("metrics.txt")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
    assert_eq!(metrics[0], fs::read(run.join("metrics.txt")).unwrap());
    let text = String::from_utf8(metrics[0].clone()).unwrap();
    assert!(text.starts_with("acc: ") && text.contains("n_points: 80\n"), "{text}");
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path());
    let data = dir.path().join("wide.csv");
    let o = nmce(&["gen-data", "random-mlp", "--n", "5", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let o = nmce(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("e").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("12") && err.contains('2'), "{err}");
}

#[test]
fn export_writes_component_retrievals() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path());
    let out = dir.path().join("x");
    let o = nmce(&[
        "export",
        "--checkpoint",
        run.join("checkpoint.json").to_str().unwrap(),
        "--data",
        run.join("eval_data.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--components",
        "2",
        "--per-component",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("components.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("cluster,component,sigma,rank,index"));
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 5);
        assert!(cells[3].parse::<usize>().unwrap() < 3);
        assert!(cells[4].parse::<usize>().unwrap() < 80);
    }
    assert!(out.join("embeddings.csv").exists());
}

#[test]
fn check_passes_and_fault_injection_fails() {
    let o = nmce(&["check", "--max-partition-points", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = nmce(&["check", "--max-partition-points", "5", "--inject-fault"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
