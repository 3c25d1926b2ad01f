use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use latentcomm::experiment::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latentcomm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed: 3,
        ..ExperimentConfig::default()
    };
    c.generator.n_samples = 1200;
    c.training.epochs = 8;
    c.training.restarts = 1;
    c.harness.train_samples = 600;
    c.harness.adapter_tasks = 50;
    c.harness.adapter_steps = 20;
    c.harness.episodes = 8;
    c.sweep.dims = vec![8];
    c.sweep.seeds = vec![2, 1];
    c.sweep.epochs = BTreeMap::from([(8, 4)]);
    c
}

/// Small settings so every command finishes in seconds.
fn write_config(dir: &Path) -> PathBuf {
    save(dir, "cfg.json", &small_config())
}

fn save(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_writes_dataset_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("data");
    ok(&["gen", "--config", p(&cfg), "--out", p(&out)]);
    for f in ["states.bin", "latents.bin", "meta.json", "config.resolved.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(fs::metadata(out.join("states.bin")).unwrap().len(), 1200 * 6 * 4);
}

#[test]
fn train_and_eval_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let data = tmp.path().join("data");
    let model = tmp.path().join("model");
    let eval = tmp.path().join("eval");
    ok(&["gen", "--config", p(&cfg), "--out", p(&data)]);
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&model)]);
    let log = fs::read_to_string(model.join("trainlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 8);
    ok(&[
        "eval",
        "--config",
        p(&cfg),
        "--model",
        p(&model.join("model.json")),
        "--data",
        p(&data),
        "--out",
        p(&eval),
        "--svg",
    ]);
    let heatmap = fs::read_to_string(eval.join("heatmap.csv")).unwrap();
    assert_eq!(heatmap.lines().count(), 3 + 1);
    assert!(fs::read_to_string(eval.join("heatmap.svg")).unwrap().starts_with("<svg"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert!(report["mcc"].as_f64().is_some());
}

/// Runs each command twice into the same directory, wiping it in between.
#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let data = tmp.path().join("data");
    let model = tmp.path().join("model");
    ok(&["gen", "--config", p(&cfg), "--out", p(&data)]);
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&model)]);
    let model_file = model.join("model.json");
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("config", vec![]),
        ("gen", vec![]),
        ("train", vec!["--data", p(&data)]),
        ("eval", vec!["--data", p(&data), "--model", p(&model_file), "--svg"]),
        ("simulate", vec![]),
        ("sweep", vec!["--jobs", "2"]),
    ];
    for (name, extra) in commands {
        let out = tmp.path().join(name);
        let mut args = vec![name, "--config", p(&cfg), "--out", p(&out)];
        args.extend(extra);
        ok(&args);
        let first = files(&out);
        fs::remove_dir_all(&out).unwrap();
        ok(&args);
        assert!(!first.is_empty());
        assert_eq!(first, files(&out), "{name}");
    }
}

#[test]
fn same_output_directory_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("sim");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    let first = files(&out);
    ok(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(first, files(&out));
    let names: Vec<String> = first.iter().map(|(f, _)| f.display().to_string()).collect();
    for f in ["traces.jsonl", "episodes_summary.csv", "model.json", "simulation.json", "config.resolved.json"] {
        assert!(names.iter().any(|n| n == f), "{f} missing");
    }
}

#[test]
fn sweep_curve_is_sorted_and_resume_reuses_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("sweep");
    ok(&["sweep", "--config", p(&cfg), "--out", p(&out), "--jobs", "2"]);
    let curve = fs::read_to_string(out.join("mcc_curve.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "dim,seed,mcc,support_f1,status");
    assert!(lines[1].starts_with("8,1,"));
    assert!(lines[2].starts_with("8,2,"));
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));

    let report = out.join("dim8-seed1").join("report.json");
    let before = fs::metadata(&report).unwrap().modified().unwrap();
    fs::remove_file(out.join("dim8-seed2").join("report.json")).unwrap();
    ok(&["sweep", "--config", p(&cfg), "--out", p(&out), "--resume"]);
    assert_eq!(fs::metadata(&report).unwrap().modified().unwrap(), before);
    assert!(out.join("dim8-seed2").join("report.json").is_file());
    assert_eq!(fs::read_to_string(out.join("mcc_curve.csv")).unwrap(), curve);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let missing = tmp.path().join("nowhere");
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--config", p(&cfg)]).status.code(), Some(2));
    let out = run(&["train", "--config", p(&cfg), "--data", p(&missing), "--out", p(&tmp.path().join("t"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(run(&["gen", "--config", p(&missing)]).status.code(), Some(2));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"generator": {"block_dims": [3, 3], "groups": [{"agents": [5], "count": 2}]}}"#).unwrap();
    assert_eq!(run(&["gen", "--config", p(&bad), "--out", p(&tmp.path().join("g"))]).status.code(), Some(2));

    let mut c = small_config();
    c.training.adam.lr = 1e30;
    let diverge = save(tmp.path(), "diverge.json", &c);
    let data = tmp.path().join("data");
    ok(&["gen", "--config", p(&cfg), "--out", p(&data)]);
    let out = tmp.path().join("div");
    let res = run(&["train", "--config", p(&diverge), "--data", p(&data), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("trainlog.csv").is_file());
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
