use std::collections::BTreeMap;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{loso_folds, MetricsRecord};
use crate::data::{segment, ChannelStats, Normalization, RawDataset, WindowSpec, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{DeepConvLstm, ModelConfig};
use crate::train::{evaluate, train_epochs, TrainRunConfig};

/// Axes of a leave-one-subject-out experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub hidden_units: Vec<usize>,
    pub lstm_layers: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            hidden_units: vec![128, 256, 512, 1024],
            lstm_layers: vec![1, 2],
            seeds: vec![1, 2, 3, 4, 5],
            jobs: 1,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units.is_empty() || self.hidden_units.contains(&0) {
            return Err(Error::config(
                "hidden_units",
                "needs at least one positive value",
            ));
        }
        if self.lstm_layers.is_empty() || self.lstm_layers.iter().any(|&l| l != 1 && l != 2) {
            return Err(Error::config("lstm_layers", "values must be 1 or 2"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "needs at least one seed"));
        }
        if self.jobs == 0 {
            return Err(Error::config("jobs", "must be at least 1"));
        }
        Ok(())
    }
}

/// Coordinates of one grid cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub lstm_layers: usize,
    pub hidden_units: usize,
    pub seed: u64,
    /// Index of the held-out subject.
    pub fold: usize,
}

impl CellKey {
    pub fn slug(&self) -> String {
        format!(
            "L{}_h{}_seed{}_fold{}",
            self.lstm_layers, self.hidden_units, self.seed, self.fold
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub mean_epoch_seconds: f64,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub key: CellKey,
    pub validation_subject: String,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub lstm_params: usize,
    pub total_params: usize,
    pub metrics: MetricsRecord,
    pub timing: Option<CellTiming>,
}

/// Aggregate of one scalar metric over a variant's cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    /// Mean over folds of the per-fold seed means.
    pub mean: f64,
    /// Mean over folds of the per-fold seed standard deviations.
    pub seed_std: f64,
    /// Standard deviation over seeds of the fold-averaged value.
    pub run_std: f64,
    /// Fold-averaged value per seed, in seed order.
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub lstm_layers: usize,
    pub hidden_units: usize,
    pub lstm_params: usize,
    pub total_params: usize,
    pub cells: usize,
    pub metrics: BTreeMap<String, MetricAggregate>,
}

/// 1-layer vs 2-layer comparison at one hidden size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerComparison {
    pub hidden_units: usize,
    pub macro_f1_1l: f64,
    pub macro_f1_2l: f64,
    pub param_delta: usize,
    /// Mean epoch time 1-layer / 2-layer, when timing was recorded.
    pub runtime_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub grid: GridSpec,
    pub subjects: Vec<String>,
    pub window_samples: usize,
    pub stride: usize,
    pub cells: Vec<Cell>,
    pub variants: Vec<VariantSummary>,
    pub comparisons: Vec<LayerComparison>,
}

/// Scalar metrics that get aggregated, by name.
pub const AGGREGATED_METRICS: [&str; 7] = [
    "accuracy",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "weighted_precision",
    "weighted_recall",
    "weighted_f1",
];

pub fn metric_value(m: &MetricsRecord, name: &str) -> Option<f64> {
    Some(match name {
        "accuracy" => m.accuracy,
        "macro_precision" => m.macro_precision,
        "macro_recall" => m.macro_recall,
        "macro_f1" => m.macro_f1,
        "weighted_precision" => m.weighted_precision,
        "weighted_recall" => m.weighted_recall,
        "weighted_f1" => m.weighted_f1,
        _ => return None,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Per-variant aggregates and 1L/2L comparisons recomputed from `cells`.
pub fn aggregate(cells: &[Cell], grid: &GridSpec) -> (Vec<VariantSummary>, Vec<LayerComparison>) {
    let mut variants = Vec::new();
    for &layers in &grid.lstm_layers {
        for &h in &grid.hidden_units {
            let mine: Vec<&Cell> = cells
                .iter()
                .filter(|c| c.key.lstm_layers == layers && c.key.hidden_units == h)
                .collect();
            if mine.is_empty() {
                continue;
            }
            let mut folds: Vec<usize> = mine.iter().map(|c| c.key.fold).collect();
            folds.sort_unstable();
            folds.dedup();
            let mut metrics = BTreeMap::new();
            for name in AGGREGATED_METRICS {
                let value = |c: &&Cell| metric_value(&c.metrics, name).unwrap();
                let per_fold: Vec<Vec<f64>> = folds
                    .iter()
                    .map(|&f| {
                        grid.seeds
                            .iter()
                            .filter_map(|&s| {
                                mine.iter()
                                    .find(|c| c.key.fold == f && c.key.seed == s)
                                    .map(value)
                            })
                            .collect()
                    })
                    .collect();
                let fold_means: Vec<f64> = per_fold.iter().map(|v| mean(v)).collect();
                let fold_stds: Vec<f64> = per_fold.iter().map(|v| std_dev(v)).collect();
                let per_seed: Vec<f64> = grid
                    .seeds
                    .iter()
                    .filter_map(|&s| {
                        let v: Vec<f64> =
                            mine.iter().filter(|c| c.key.seed == s).map(value).collect();
                        (!v.is_empty()).then(|| mean(&v))
                    })
                    .collect();
                metrics.insert(
                    name.to_string(),
                    MetricAggregate {
                        mean: mean(&fold_means),
                        seed_std: mean(&fold_stds),
                        run_std: std_dev(&per_seed),
                        per_seed,
                    },
                );
            }
            variants.push(VariantSummary {
                lstm_layers: layers,
                hidden_units: h,
                lstm_params: mine[0].lstm_params,
                total_params: mine[0].total_params,
                cells: mine.len(),
                metrics,
            });
        }
    }
    let mut comparisons = Vec::new();
    for &h in &grid.hidden_units {
        let find = |l: usize| {
            variants
                .iter()
                .find(|v| v.lstm_layers == l && v.hidden_units == h)
        };
        if let (Some(one), Some(two)) = (find(1), find(2)) {
            let epoch_time = |l: usize| -> Option<f64> {
                let times: Option<Vec<f64>> = cells
                    .iter()
                    .filter(|c| c.key.lstm_layers == l && c.key.hidden_units == h)
                    .map(|c| c.timing.as_ref().map(|t| t.mean_epoch_seconds))
                    .collect();
                times.map(|t| mean(&t))
            };
            comparisons.push(LayerComparison {
                hidden_units: h,
                macro_f1_1l: one.metrics["macro_f1"].mean,
                macro_f1_2l: two.metrics["macro_f1"].mean,
                param_delta: two.lstm_params - one.lstm_params,
                runtime_ratio: epoch_time(1).zip(epoch_time(2)).map(|(a, b)| a / b),
            });
        }
    }
    (variants, comparisons)
}

impl EvaluationReport {
    /// Report with every wall-clock field removed, so equal runs compare equal.
    pub fn without_timing(&self) -> EvaluationReport {
        let mut out = self.clone();
        for c in &mut out.cells {
            c.timing = None;
        }
        for c in &mut out.comparisons {
            c.runtime_ratio = None;
        }
        out
    }
}

/// Everything a grid run needs besides the axes.
#[derive(Clone, Debug)]
pub struct GridInputs<'a> {
    pub raw: &'a RawDataset,
    pub window: WindowSpec,
    pub normalization: Normalization,
    pub model: ModelConfig,
    pub train: TrainRunConfig,
}

/// Trains and scores one cell on already segmented windows.
pub fn run_cell(
    inputs: &GridInputs<'_>,
    windows: &WindowedDataset,
    key: &CellKey,
    fold_train: &[usize],
) -> Result<Cell> {
    let stats = ChannelStats::fit(inputs.raw, fold_train, inputs.normalization)?;
    let train_set = stats.apply_windows(&windows.subset(&windows.indices_for(fold_train)));
    let val_set = stats.apply_windows(&windows.subset(&windows.indices_for(&[key.fold])));
    let model_cfg = ModelConfig {
        lstm_layers: key.lstm_layers,
        hidden_units: key.hidden_units,
        ..inputs.model.clone()
    };
    let train_cfg = TrainRunConfig {
        seed: key.seed,
        ..inputs.train.clone()
    };
    let wrap = |e: Error| Error::Cell {
        lstm_layers: key.lstm_layers,
        hidden_units: key.hidden_units,
        seed: key.seed,
        subject: windows.subjects[key.fold].clone(),
        source: Box::new(e),
    };
    if val_set.is_empty() {
        return Err(wrap(Error::Data(
            "validation subject has no windows".into(),
        )));
    }
    let mut model = DeepConvLstm::<f32>::build(&model_cfg, key.seed).map_err(wrap)?;
    let trace = train_epochs(&mut model, &train_set, None, &train_cfg, |_| {
        ControlFlow::Continue(())
    })
    .map_err(wrap)?;
    let metrics = evaluate(&model, &val_set, train_cfg.batch_size).map_err(wrap)?;
    let last = trace.last().expect("at least one epoch");
    Ok(Cell {
        key: key.clone(),
        validation_subject: windows.subjects[key.fold].clone(),
        train_windows: train_set.len(),
        validation_windows: val_set.len(),
        epochs: trace.epochs.len(),
        final_loss: last.loss,
        lstm_params: model.lstm_params(),
        total_params: model.total_params(),
        metrics,
        timing: Some(CellTiming {
            mean_epoch_seconds: last.elapsed_seconds / trace.epochs.len() as f64,
            train_seconds: last.elapsed_seconds,
        }),
    })
}

/// Full leave-one-subject-out grid: every (layers, h, seed, fold) cell.
///
/// Normalization statistics are refit on each fold's training subjects.
/// `reuse` may supply finished cells (for resumed runs) and `on_cell` sees
/// every newly computed one. Cell order in the report is fixed by the grid
/// axes, independent of `jobs`.
pub fn run_grid(
    inputs: &GridInputs<'_>,
    grid: &GridSpec,
    reuse: &(dyn Fn(&CellKey) -> Option<Cell> + Sync),
    on_cell: &(dyn Fn(&Cell) + Sync),
) -> Result<EvaluationReport> {
    grid.validate()?;
    inputs.train.validate()?;
    let windows = segment(inputs.raw, &inputs.window)?;
    let folds = loso_folds(inputs.raw.subjects.len())?;
    let inputs = GridInputs {
        model: ModelConfig {
            window_samples: windows.window_samples,
            channels: windows.channels,
            num_classes: windows.num_classes,
            ..inputs.model.clone()
        },
        ..inputs.clone()
    };
    inputs.model.validate()?;

    let mut keys = Vec::new();
    for &lstm_layers in &grid.lstm_layers {
        for &hidden_units in &grid.hidden_units {
            for &seed in &grid.seeds {
                for fold in &folds {
                    keys.push(CellKey {
                        lstm_layers,
                        hidden_units,
                        seed,
                        fold: fold.validation,
                    });
                }
            }
        }
    }
    let work = |key: &CellKey| -> Result<Cell> {
        if let Some(cell) = reuse(key) {
            return Ok(cell);
        }
        let cell = run_cell(&inputs, &windows, key, &folds[key.fold].train)?;
        on_cell(&cell);
        Ok(cell)
    };
    let cells: Vec<Cell> = if grid.jobs == 1 {
        keys.iter().map(work).collect::<Result<_>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(grid.jobs)
            .build()
            .map_err(|e| Error::config("jobs", e.to_string()))?
            .install(|| keys.par_iter().map(work).collect::<Result<_>>())?
    };
    let (variants, comparisons) = aggregate(&cells, grid);
    Ok(EvaluationReport {
        grid: grid.clone(),
        subjects: windows.subjects.clone(),
        window_samples: windows.window_samples,
        stride: windows.stride,
        cells,
        variants,
        comparisons,
    })
}
