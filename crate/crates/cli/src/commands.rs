use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use harlstm::data::{segment, write_csv as write_dataset, ChannelStats, RawDataset};
use harlstm::eval::{
    benchmark_runtime, run_grid, Cell, CellKey, EvaluationReport, GridInputs, LstmCostModel,
    MetricsRecord, AGGREGATED_METRICS,
};
use harlstm::model::save_checkpoint_with;
use harlstm::train::{evaluate, train_epochs, TrainingTrace};
use harlstm::{DeepConvLstm, Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, ReportFormat, ResolvedConfig};
use crate::output::{comment_block, num, write_atomic, write_csv, write_json};
use crate::{AnalyzeArgs, BenchArgs, Common, GridArgs, SynthArgs, TrainArgs};

/// Defaults, then `--config`, then flags.
pub fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    apply_flags(&mut cfg, c);
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_flags(cfg: &mut ExperimentConfig, c: &Common) {
    if let Some(out) = &c.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seeds = vec![seed];
    }
    if !c.seeds.is_empty() {
        cfg.seeds = c.seeds.clone();
    }
    if !c.hidden.is_empty() {
        cfg.grid.hidden_units = c.hidden.clone();
        cfg.model.hidden_units = c.hidden[0];
    }
    if !c.lstm_layers.is_empty() {
        cfg.grid.lstm_layers = c.lstm_layers.clone();
        cfg.model.lstm_layers = c.lstm_layers[0];
    }
    if let Some(j) = c.jobs {
        cfg.grid.jobs = j;
    }
    if !c.format.is_empty() {
        cfg.output.formats = c.format.clone();
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = c.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(p) = c.preset {
        cfg.window.preset = Some(p);
    }
    if let Some(s) = c.window_seconds {
        cfg.window.seconds = s;
        cfg.window.preset = None;
    }
    if let Some(o) = c.overlap {
        cfg.window.overlap = o;
        cfg.window.preset = None;
    }
    if let Some(hz) = c.hz {
        cfg.dataset.sampling_rate_hz = hz;
    }
    if let Some(path) = &c.data {
        cfg.dataset.source = DataSource::Csv {
            path: path.clone(),
            subject_column: "subject".into(),
            label_column: "label".into(),
            channel_columns: None,
            class_table: None,
        };
    }
}

fn wants(cfg: &ExperimentConfig, f: ReportFormat) -> bool {
    cfg.output.formats.contains(&f)
}

fn single(values: &[usize], field: &str) -> Result<()> {
    if values.len() > 1 {
        return Err(Error::config(field, "train takes a single value"));
    }
    Ok(())
}

fn write_config(dir: &Path, resolved: &ResolvedConfig) -> Result<()> {
    write_atomic(&dir.join("config.toml"), resolved.to_toml().as_bytes())
}

pub fn show_config(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let resolved = match cfg.dataset.synth_spec() {
        Some(s) => cfg.resolve(s.channels, s.classes)?,
        None => cfg.resolve_for(&cfg.dataset.load()?)?,
    };
    print!("{}", resolved.to_toml());
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let DataSource::Synthetic {
        subjects,
        classes,
        channels,
        duration_seconds,
        noise,
        seed,
    } = &mut cfg.dataset.source
    {
        if let Some(v) = a.subjects {
            *subjects = v;
        }
        if let Some(v) = a.classes {
            *classes = v;
        }
        if let Some(v) = a.channels {
            *channels = v;
        }
        if let Some(v) = a.duration {
            *duration_seconds = v;
        }
        if let Some(v) = a.noise {
            *noise = v;
        }
        if let Some(v) = a.common.seed {
            *seed = v;
        }
    } else {
        return Err(Error::config(
            "dataset.source",
            "synth needs a synthetic source",
        ));
    }
    let spec = cfg.dataset.synth_spec().unwrap();
    let raw = harlstm::data::synth_generate(&spec)?;
    let dir = &cfg.output.dir;
    let mut buf = Vec::new();
    write_dataset(&raw, &mut buf)?;
    write_atomic(&dir.join("dataset.csv"), &buf)?;
    write_atomic(
        &dir.join("dataset.toml"),
        toml::to_string(&spec).expect("spec serializes").as_bytes(),
    )?;
    println!(
        "wrote {} subjects x {} samples to {}",
        raw.subjects.len(),
        spec.samples_per_subject(),
        dir.join("dataset.csv").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainMetricsFile<'a> {
    config: serde_json::Value,
    holdout_subject: &'a str,
    train_windows: usize,
    validation_windows: usize,
    epochs: usize,
    final_loss: f64,
    lstm_params: usize,
    total_params: usize,
    metrics: &'a MetricsRecord,
}

fn metrics_rows(m: &MetricsRecord, class_names: &[String]) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            vec![
                name.clone(),
                num(m.precision[c]),
                num(m.recall[c]),
                num(m.f1[c]),
                m.support[c].to_string(),
            ]
        })
        .collect();
    let n: u64 = m.support.iter().sum();
    rows.push(vec![
        "macro avg".into(),
        num(m.macro_precision),
        num(m.macro_recall),
        num(m.macro_f1),
        n.to_string(),
    ]);
    rows.push(vec![
        "weighted avg".into(),
        num(m.weighted_precision),
        num(m.weighted_recall),
        num(m.weighted_f1),
        n.to_string(),
    ]);
    rows.push(vec![
        "accuracy".into(),
        String::new(),
        String::new(),
        num(m.accuracy),
        n.to_string(),
    ]);
    rows
}

fn write_trace(path: &Path, resolved: &ResolvedConfig, trace: &TrainingTrace) -> Result<()> {
    let mut buf = serde_json::to_vec(&serde_json::json!({ "config": resolved.to_json() }))?;
    buf.push(b'\n');
    trace.write_jsonl(&mut buf)?;
    write_atomic(path, &buf)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    single(&a.common.hidden, "hidden_units")?;
    single(&a.common.lstm_layers, "lstm_layers")?;
    if let Some(h) = &a.holdout {
        cfg.holdout_subject = Some(h.clone());
    }
    let raw = cfg.dataset.load()?;
    let resolved = cfg.resolve_for(&raw)?;
    if raw.subjects.len() < 2 {
        return Err(Error::Protocol(
            "train holds out one subject and needs at least 2".into(),
        ));
    }
    let holdout = match &cfg.holdout_subject {
        Some(id) => raw
            .subject_index(id)
            .ok_or_else(|| Error::config("holdout_subject", format!("unknown subject `{id}`")))?,
        None => raw.subjects.len() - 1,
    };
    let train_subjects: Vec<usize> = (0..raw.subjects.len()).filter(|&s| s != holdout).collect();
    let stats = ChannelStats::fit(&raw, &train_subjects, cfg.normalization)?;
    let windows = segment(&raw, &resolved.window)?;
    for w in &windows.warnings {
        eprintln!("warning: {w}");
    }
    let train_set = stats.apply_windows(&windows.subset(&windows.indices_for(&train_subjects)));
    let val_set = stats.apply_windows(&windows.subset(&windows.indices_for(&[holdout])));
    if val_set.is_empty() {
        return Err(Error::Data(format!(
            "holdout subject {} has no windows",
            raw.subjects[holdout].subject
        )));
    }

    let run = &resolved.train;
    let mut model = DeepConvLstm::<f32>::build(&resolved.model, run.seed)?;
    let trace = train_epochs(&mut model, &train_set, Some(&val_set), run, |e| {
        let f1 =
            |m: &Option<harlstm::train::EpochMetrics>| m.as_ref().map_or(f64::NAN, |m| m.macro_f1);
        eprintln!(
            "epoch {:>3}  loss {:.4}  train F1 {:.4}  val F1 {:.4}  {:.2}s",
            e.epoch,
            e.loss,
            f1(&e.train),
            f1(&e.validation),
            e.epoch_seconds
        );
        ControlFlow::Continue(())
    })?;
    let metrics = evaluate(&model, &val_set, run.batch_size)?;

    let dir = &cfg.output.dir;
    write_config(dir, &resolved)?;
    let mut ckpt = Vec::new();
    save_checkpoint_with(&model, Some(resolved.to_json()), &mut ckpt)?;
    write_atomic(&dir.join("checkpoint.bin"), &ckpt)?;
    write_trace(&dir.join("trace.jsonl"), &resolved, &trace)?;
    let holdout_id = &raw.subjects[holdout].subject;
    if wants(&cfg, ReportFormat::Structured) {
        write_json(
            &dir.join("metrics.json"),
            &TrainMetricsFile {
                config: resolved.to_json(),
                holdout_subject: holdout_id,
                train_windows: train_set.len(),
                validation_windows: val_set.len(),
                epochs: trace.epochs.len(),
                final_loss: trace.last().map_or(f64::NAN, |e| e.loss),
                lstm_params: model.lstm_params(),
                total_params: model.total_params(),
                metrics: &metrics,
            },
        )?;
    }
    if wants(&cfg, ReportFormat::Csv) {
        write_csv(
            &dir.join("metrics.csv"),
            &comment_block(&resolved.to_toml()),
            &["class", "precision", "recall", "f1", "support"],
            &metrics_rows(&metrics, &raw.class_names),
        )?;
    }
    println!(
        "holdout {holdout_id}: macro F1 {:.4}, accuracy {:.4}; artifacts in {}",
        metrics.macro_f1,
        metrics.accuracy,
        dir.display()
    );
    Ok(())
}

/// Per-cell cache entry used by `--resume`.
#[derive(Serialize, Deserialize)]
struct CachedCell {
    config_hash: String,
    cell: Cell,
}

pub const CELL_COLUMNS: [&str; 18] = [
    "lstm_layers",
    "hidden_units",
    "seed",
    "fold",
    "validation_subject",
    "train_windows",
    "validation_windows",
    "epochs",
    "final_loss",
    "lstm_params",
    "total_params",
    "accuracy",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "weighted_precision",
    "weighted_recall",
    "weighted_f1",
];

fn cell_rows(report: &EvaluationReport) -> Vec<Vec<String>> {
    report
        .cells
        .iter()
        .map(|c| {
            let m = &c.metrics;
            vec![
                c.key.lstm_layers.to_string(),
                c.key.hidden_units.to_string(),
                c.key.seed.to_string(),
                c.key.fold.to_string(),
                c.validation_subject.clone(),
                c.train_windows.to_string(),
                c.validation_windows.to_string(),
                c.epochs.to_string(),
                num(c.final_loss),
                c.lstm_params.to_string(),
                c.total_params.to_string(),
                num(m.accuracy),
                num(m.macro_precision),
                num(m.macro_recall),
                num(m.macro_f1),
                num(m.weighted_precision),
                num(m.weighted_recall),
                num(m.weighted_f1),
            ]
        })
        .collect()
}

fn aggregate_table(report: &EvaluationReport) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = [
        "lstm_layers",
        "hidden_units",
        "lstm_params",
        "cells",
        "metric",
        "mean",
        "seed_std",
        "run_std",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(report.grid.seeds.iter().map(|s| format!("seed_{s}")));
    let mut rows = Vec::new();
    for v in &report.variants {
        for name in AGGREGATED_METRICS {
            let a = &v.metrics[name];
            let mut row = vec![
                v.lstm_layers.to_string(),
                v.hidden_units.to_string(),
                v.lstm_params.to_string(),
                v.cells.to_string(),
                name.to_string(),
                num(a.mean),
                num(a.seed_std),
                num(a.run_std),
            ];
            row.extend(a.per_seed.iter().map(|&x| num(x)));
            rows.push(row);
        }
    }
    (header, rows)
}

fn summary_text(report: &EvaluationReport, resolved: &ResolvedConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "1-layer vs 2-layer LSTM (macro F1 averaged over folds and seeds)"
    );
    let _ = writeln!(
        s,
        "subjects: {}  seeds: {:?}  window: {} samples, stride {}",
        report.subjects.len(),
        report.grid.seeds,
        report.window_samples,
        report.stride
    );
    let _ = writeln!(s, "config sha256: {}", resolved.hash());
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:>6}  {:>10}  {:>10}  {:>9}  {:>10}  {:>12}  {:>13}",
        "h", "F1 1L", "F1 2L", "dF1 2L-1L", "better", "param delta", "runtime 1L/2L"
    );
    for c in &report.comparisons {
        let d = c.macro_f1_2l - c.macro_f1_1l;
        let better = if d > 0.0 {
            "2-layer"
        } else if d < 0.0 {
            "1-layer"
        } else {
            "tie"
        };
        let ratio = c
            .runtime_ratio
            .map_or("n/a".to_string(), |r| format!("{r:.3}"));
        let _ = writeln!(
            s,
            "{:>6}  {:>10.4}  {:>10.4}  {:>+9.4}  {:>10}  {:>12}  {:>13}",
            c.hidden_units, c.macro_f1_1l, c.macro_f1_2l, d, better, c.param_delta, ratio
        );
    }
    if report.comparisons.is_empty() {
        let _ = writeln!(s, "(grid has no hidden size with both layer counts)");
    }
    let mut ranked: Vec<_> = report.variants.iter().collect();
    ranked.sort_by(|a, b| {
        b.metrics["macro_f1"]
            .mean
            .total_cmp(&a.metrics["macro_f1"].mean)
    });
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:>7}  {:>6}  {:>10}  {:>9}  {:>9}",
        "layers", "h", "macro F1", "run std", "seed std"
    );
    for v in ranked {
        let f = &v.metrics["macro_f1"];
        let _ = writeln!(
            s,
            "{:>7}  {:>6}  {:>10.4}  {:>9.4}  {:>9.4}",
            v.lstm_layers, v.hidden_units, f.mean, f.run_std, f.seed_std
        );
    }
    s
}

fn cell_cache_path(dir: &Path, key: &CellKey) -> PathBuf {
    dir.join(format!("{}.json", key.slug()))
}

pub fn loso_grid(a: &GridArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let raw: RawDataset = cfg.dataset.load()?;
    let resolved = cfg.resolve_for(&raw)?;
    let grid = cfg.grid_spec();
    let dir = cfg.output.dir.clone();
    let cache = dir.join("cells");
    if !a.resume && cache.exists() {
        std::fs::remove_dir_all(&cache)?;
    }
    std::fs::create_dir_all(&cache)?;
    let hash = resolved.hash();
    let total =
        grid.hidden_units.len() * grid.lstm_layers.len() * grid.seeds.len() * raw.subjects.len();

    let reuse = |key: &CellKey| -> Option<Cell> {
        if !a.resume {
            return None;
        }
        let text = std::fs::read_to_string(cell_cache_path(&cache, key)).ok()?;
        let cached: CachedCell = serde_json::from_str(&text).ok()?;
        (cached.config_hash == hash && cached.cell.key == *key).then_some(cached.cell)
    };
    let on_cell = |cell: &Cell| {
        eprintln!(
            "cell {} (of {total}): validation {} macro F1 {:.4}",
            cell.key.slug(),
            cell.validation_subject,
            cell.metrics.macro_f1
        );
        let entry = CachedCell {
            config_hash: hash.clone(),
            cell: cell.clone(),
        };
        if let Err(e) = write_json(&cell_cache_path(&cache, &cell.key), &entry) {
            eprintln!("warning: could not cache cell {}: {e}", cell.key.slug());
        }
    };
    let inputs = GridInputs {
        raw: &raw,
        window: resolved.window,
        normalization: cfg.normalization,
        model: resolved.model.clone(),
        train: resolved.train.clone(),
    };
    let report = run_grid(&inputs, &grid, &reuse, &on_cell)?;

    write_config(&dir, &resolved)?;
    if wants(&cfg, ReportFormat::Structured) {
        write_json(
            &dir.join("report.json"),
            &serde_json::json!({
                "config": resolved.to_json(),
                "report": report.without_timing(),
            }),
        )?;
    }
    if wants(&cfg, ReportFormat::Csv) {
        let comment = comment_block(&resolved.to_toml());
        write_csv(
            &dir.join("cells.csv"),
            &comment,
            &CELL_COLUMNS,
            &cell_rows(&report),
        )?;
        let (header, rows) = aggregate_table(&report);
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&dir.join("aggregates.csv"), &comment, &header, &rows)?;
    }
    let runtime_rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            let t = c.timing.as_ref();
            vec![
                c.key.lstm_layers.to_string(),
                c.key.hidden_units.to_string(),
                c.key.seed.to_string(),
                c.key.fold.to_string(),
                t.map_or(String::new(), |t| num(t.mean_epoch_seconds)),
                t.map_or(String::new(), |t| num(t.train_seconds)),
            ]
        })
        .collect();
    write_csv(
        &dir.join("runtime.csv"),
        &comment_block(&resolved.to_toml()),
        &[
            "lstm_layers",
            "hidden_units",
            "seed",
            "fold",
            "mean_epoch_seconds",
            "train_seconds",
        ],
        &runtime_rows,
    )?;
    let summary = summary_text(&report, &resolved);
    write_atomic(&dir.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

pub const COST_COLUMNS: [&str; 6] = ["s", "h", "p1", "p2", "delta", "reduction"];

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    if a.h.is_empty() || a.s.is_empty() {
        return Err(Error::config("h", "needs at least one s and one h value"));
    }
    let mut rows = Vec::new();
    let mut reductions = Vec::new();
    for &s in &a.s {
        for &h in &a.h {
            let c = LstmCostModel::new(s as u64, h as u64)?;
            reductions.push(c.reduction);
            rows.push(vec![
                s.to_string(),
                h.to_string(),
                c.p1.to_string(),
                c.p2.to_string(),
                c.delta.to_string(),
                num(c.reduction),
            ]);
        }
    }
    let mean = reductions.iter().sum::<f64>() / reductions.len() as f64;
    let comment = format!("# s = {:?}\n# h = {:?}\n", a.s, a.h);
    let mut table = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut table);
        w.write_record(COST_COLUMNS)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    print!("{}", String::from_utf8_lossy(&table));
    println!("# mean reduction over grid: {:.2}%", 100.0 * mean);
    if let Some(dir) = &a.out {
        write_csv(&dir.join("cost_model.csv"), &comment, &COST_COLUMNS, &rows)?;
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if !a.common.hidden.is_empty() {
        cfg.bench.hidden_units = a.common.hidden.clone();
    }
    if let Some(r) = a.repetitions {
        cfg.bench.repetitions = r;
    }
    if let Some(w) = a.warmup {
        cfg.bench.warmup = w;
    }
    if let Some(b) = a.batches {
        cfg.bench.batches_per_epoch = b;
    }
    if let Some(b) = a.common.batch_size {
        cfg.bench.batch_size = b;
    }
    if let Some(s) = a.common.seed {
        cfg.bench.seed = s;
    }
    let (channels, classes) = match cfg.dataset.synth_spec() {
        Some(s) => (s.channels, s.classes),
        None => {
            let raw = cfg.dataset.load()?;
            (raw.channels(), raw.num_classes())
        }
    };
    let resolved = cfg.resolve(channels, classes)?;
    let table = benchmark_runtime(&resolved.model, &cfg.bench)?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    let hash = resolved.hash();
    let dir = &cfg.output.dir;
    write_config(dir, &resolved)?;
    if wants(&cfg, ReportFormat::Structured) {
        write_json(
            &dir.join("bench.json"),
            &serde_json::json!({
                "config": resolved.to_json(),
                "config_sha256": hash,
                "table": table,
            }),
        )?;
    }
    let m = &table.machine;
    let comment = format!(
        "# config_sha256 = {hash}\n# machine = {} {} {} cpus {}\n# repetitions = {} warmup = {} batches_per_epoch = {} batch_size = {}\n",
        m.os,
        m.arch,
        m.logical_cpus,
        m.cpu_model.as_deref().unwrap_or("unknown"),
        cfg.bench.repetitions,
        cfg.bench.warmup,
        cfg.bench.batches_per_epoch,
        cfg.bench.batch_size,
    );
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.hidden_units.to_string(),
                r.lstm_params_1l.to_string(),
                r.lstm_params_2l.to_string(),
                num(r.median_epoch_seconds_1l),
                num(r.median_epoch_seconds_2l),
                num(r.ratio),
                num(r.saving),
            ]
        })
        .collect();
    let header = [
        "hidden_units",
        "lstm_params_1l",
        "lstm_params_2l",
        "median_epoch_seconds_1l",
        "median_epoch_seconds_2l",
        "ratio_1l_2l",
        "saving",
    ];
    if wants(&cfg, ReportFormat::Csv) {
        write_csv(&dir.join("bench.csv"), &comment, &header, &rows)?;
    }
    print!("{comment}");
    println!(
        "{:>6}  {:>12}  {:>12}  {:>8}  {:>7}",
        "h", "1L s/epoch", "2L s/epoch", "1L/2L", "saving"
    );
    for r in &table.rows {
        println!(
            "{:>6}  {:>12.4}  {:>12.4}  {:>8.3}  {:>6.1}%",
            r.hidden_units,
            r.median_epoch_seconds_1l,
            r.median_epoch_seconds_2l,
            r.ratio,
            100.0 * r.saving
        );
    }
    Ok(())
}
