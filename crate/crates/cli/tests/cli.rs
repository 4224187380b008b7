use std::path::Path;
use std::process::{Command, Output};

fn harlstm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harlstm"))
        .args(args)
        .env_remove("HARLSTM_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("small.toml");
    std::fs::write(
        &p,
        format!(
            "[dataset.source]\nkind = \"synthetic\"\nsubjects = 3\nduration_seconds = 15.0\n\n[model]\nnum_filters = 16\n\n[train]\nepochs = 1\nbatch_size = 32\n{extra}"
        ),
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn train_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = harlstm(&[
        "train",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "config.toml",
        "checkpoint.bin",
        "trace.jsonl",
        "metrics.json",
        "metrics.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let trace = std::fs::read_to_string(out.join("trace.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = trace
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].get("config").is_some());
    assert_eq!(lines[2]["epoch"], 2);
    assert!(lines[2]["validation"]["macro_f1"].is_number());

    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["holdout_subject"], "s3");
    let rows = data_rows(&out.join("metrics.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        names,
        ["c0", "c1", "c2", "macro avg", "weighted avg", "accuracy"]
    );
    let csv_text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv_text.starts_with("# "));
}

#[test]
fn invalid_overlap_is_a_usage_error() {
    let o = harlstm(&["show-config", "--overlap", "1.0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`overlap`"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_and_bad_config_exit_two() {
    assert_eq!(harlstm(&["train", "--no-such-flag"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[train]\nepoch = 3\n").unwrap();
    let o = harlstm(&["show-config", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "[train]\nepochs = 3\nbatch_size = 7\n").unwrap();
    let o = harlstm(&[
        "show-config",
        "--config",
        p.to_str().unwrap(),
        "--epochs",
        "5",
    ]);
    assert!(o.status.success());
    let resolved: toml::Table = stdout(&o).parse().unwrap();
    assert_eq!(resolved["train"]["epochs"].as_integer(), Some(5));
    assert_eq!(resolved["train"]["batch_size"].as_integer(), Some(7));
    assert_eq!(
        resolved["train"]["optimizer"]["learning_rate"].as_float(),
        Some(1e-4)
    );
}

#[test]
fn kernel_follows_sampling_rate_unless_set() {
    let o = harlstm(&["show-config", "--hz", "100"]);
    let resolved: toml::Table = stdout(&o).parse().unwrap();
    assert_eq!(resolved["model"]["kernel_len"].as_integer(), Some(21));
    assert_eq!(resolved["window_samples"].as_integer(), Some(100));
    assert_eq!(resolved["stride"].as_integer(), Some(40));
}

#[test]
fn preset_and_explicit_window_flags() {
    let o = harlstm(&["show-config", "--preset", "opportunity", "--hz", "60"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kernel_len"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("k.toml");
    std::fs::write(&p, "[model]\nkernel_len = 5\n").unwrap();
    let o = harlstm(&[
        "show-config",
        "--config",
        p.to_str().unwrap(),
        "--preset",
        "opportunity",
        "--hz",
        "60",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved: toml::Table = stdout(&o).parse().unwrap();
    assert_eq!(resolved["window"]["window_seconds"].as_float(), Some(0.5));
    assert_eq!(resolved["window"]["overlap"].as_float(), Some(0.5));
    assert_eq!(resolved["window_samples"].as_integer(), Some(30));
    assert_eq!(resolved["stride"].as_integer(), Some(15));
}

#[test]
fn loso_grid_small() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("grid");
    let o = harlstm(&[
        "loso-grid",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seeds",
        "1,2",
        "--hidden",
        "128",
        "--lstm-layers",
        "1,2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&out.join("cells.csv")).len(), 12);
    assert_eq!(data_rows(&out.join("runtime.csv")).len(), 12);

    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    let h_rows: Vec<&str> = summary
        .lines()
        .filter(|l| l.split_whitespace().next() == Some("128") && l.contains("131584"))
        .collect();
    assert_eq!(h_rows.len(), 1, "{summary}");

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let comparisons = report["report"]["comparisons"].as_array().unwrap();
    assert_eq!(comparisons.len(), 1);
    assert_eq!(comparisons[0]["param_delta"], 8 * 128 * 128 + 4 * 128);
    assert!(report["report"]["cells"][0]["timing"].is_null());
}

#[test]
fn resume_reuses_matching_cells_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("grid");
    let base = [
        "loso-grid",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seeds",
        "1",
        "--hidden",
        "8",
    ];
    let first = harlstm(&base);
    assert!(first.status.success(), "{}", stderr(&first));
    let report = std::fs::read(out.join("report.json")).unwrap();

    let cached: Vec<_> = std::fs::read_dir(out.join("cells")).unwrap().collect();
    assert_eq!(cached.len(), 2 * 3);
    std::fs::remove_file(out.join("cells/L2_h8_seed1_fold0.json")).unwrap();

    let mut resume = base.to_vec();
    resume.push("--resume");
    let o = harlstm(&resume);
    assert!(o.status.success(), "{}", stderr(&o));
    let computed = stderr(&o)
        .lines()
        .filter(|l| l.starts_with("cell "))
        .count();
    assert_eq!(computed, 1, "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("report.json")).unwrap(), report);

    let mut changed = resume.clone();
    changed.extend(["--epochs", "2"]);
    let o = harlstm(&changed);
    assert!(o.status.success());
    let computed = stderr(&o)
        .lines()
        .filter(|l| l.starts_with("cell "))
        .count();
    assert_eq!(computed, 6, "cells from another config must not be reused");
}

#[test]
fn analyze_prints_reductions() {
    let o = harlstm(&["analyze"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let reduction =
        |h: &str| -> f64 { rows.iter().find(|r| r[1] == h).unwrap()[5].parse().unwrap() };
    assert_eq!(format!("{:.1}", 100.0 * reduction("128")), "57.1");
    assert_eq!(format!("{:.1}", 100.0 * reduction("1024")), "65.3");
    assert_eq!(rows[0][..5], ["64", "128", "98816", "230400", "131584"]);
}

#[test]
fn analyze_writes_csv_and_rejects_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = harlstm(&[
        "analyze",
        "--s",
        "16",
        "--h",
        "1024",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let rows = data_rows(&dir.path().join("cost_model.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(
        rows[0][..5],
        ["16", "1024", "4263936", "12656640", "8392704"]
    );
    let r: f64 = rows[0][5].parse().unwrap();
    assert!((r - (1.0 - 4263936.0 / 12656640.0)).abs() < 1e-15);
    assert_eq!(harlstm(&["analyze", "--h", ""]).status.code(), Some(2));
}

#[test]
fn bench_warns_on_single_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = harlstm(&[
        "bench",
        "--out",
        out.to_str().unwrap(),
        "--repetitions",
        "1",
        "--warmup",
        "0",
        "--batches",
        "1",
        "--batch-size",
        "8",
        "--hidden",
        "16",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: a single repetition"));
    let csv_text = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let hash_line = csv_text
        .lines()
        .find(|l| l.starts_with("# config_sha256 = "))
        .unwrap();
    assert_eq!(hash_line.len(), "# config_sha256 = ".len() + 64);
    assert!(csv_text.contains("# machine = "));
    let rows = data_rows(&out.join("bench.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(
        rows[0][1],
        (4 * 192 * 16 + 4 * 16 + 4 * 16 * 16).to_string()
    );
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("bench.json")).unwrap()).unwrap();
    assert_eq!(
        json["config_sha256"].as_str().unwrap(),
        &hash_line["# config_sha256 = ".len()..]
    );
}

#[test]
fn error_kinds_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s).to_string_lossy().into_owned();

    let o = harlstm(&["train", "--data", &d("missing.csv"), "--out", &d("a")]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    std::fs::write(
        d("broken.csv"),
        "subject,label,x\ns1,walk,0.1\ns1,walk,oops\n",
    )
    .unwrap();
    let o = harlstm(&["train", "--data", &d("broken.csv"), "--out", &d("b")]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));

    let o = harlstm(&[
        "synth",
        "--out",
        &d("one"),
        "--subjects",
        "1",
        "--duration",
        "10",
    ]);
    assert!(o.status.success());
    let o = harlstm(&["train", "--data", &d("one/dataset.csv"), "--out", &d("c")]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));

    let cfg = small_config(dir.path(), "\n[train.optimizer]\nlearning_rate = 1e30\n");
    let o = harlstm(&["train", "--config", &cfg, "--out", &d("e"), "--epochs", "3"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"));
}

#[test]
fn synth_round_trips_through_train() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = harlstm(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--subjects",
        "2",
        "--duration",
        "10",
        "--seed",
        "4",
    ]);
    assert!(o.status.success());
    let spec: toml::Table = std::fs::read_to_string(data.join("dataset.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(spec["seed"].as_integer(), Some(4));
    let csv_path = data.join("dataset.csv");
    let o = harlstm(&[
        "train",
        "--data",
        csv_path.to_str().unwrap(),
        "--out",
        dir.path().join("t").to_str().unwrap(),
        "--epochs",
        "1",
        "--holdout",
        "s1",
        "--hidden",
        "8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("holdout s1"));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_harlstm"))
        .args(["analyze"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_harlstm"))
        .args(["synth", "--subjects", "2", "--duration", "5"])
        .env("HARLSTM_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("dataset.csv").is_file());
}

#[test]
fn explicit_window_flag_clears_preset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.toml");
    std::fs::write(&p, "[window]\npreset = \"opportunity\"\n").unwrap();
    let o = harlstm(&[
        "show-config",
        "--config",
        p.to_str().unwrap(),
        "--window-seconds",
        "2.0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved: toml::Table = stdout(&o).parse().unwrap();
    assert_eq!(resolved["window"]["window_seconds"].as_float(), Some(2.0));
    assert_eq!(resolved["window"]["overlap"].as_float(), Some(0.6));
    assert_eq!(resolved["window_samples"].as_integer(), Some(100));
}
