//! Leave-one-subject-out evaluation, classification metrics, the LSTM
//! parameter cost model and the layer-count runtime benchmark.

mod bench;
mod cost;
mod folds;
mod grid;
mod metrics;

pub use bench::{
    benchmark_runtime, median, BenchSpec, MachineDescriptor, RuntimeRow, RuntimeTable,
};
pub use cost::{lstm_cost, LstmCostModel};
pub use folds::{loso_folds, Fold};
pub use grid::{
    aggregate, mean, metric_value, run_cell, run_grid, std_dev, Cell, CellKey, CellTiming,
    EvaluationReport, GridInputs, GridSpec, LayerComparison, MetricAggregate, VariantSummary,
    AGGREGATED_METRICS,
};
pub use metrics::{compute_metrics, MetricsRecord};
