//! Mini-batch training loop and per-epoch traces.

use std::io::Write;
use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MetricsRecord};
use crate::model::{argmax_rows, DeepConvLstm};
use crate::optim::{class_weights, AdamConfig, AdamState};
use crate::tensor::{Scalar, Tape, Tensor};

// Stream ids carved out of the run seed; shuffles use `epoch`.
const DROPOUT_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    /// `w_c = N / (K·n_c)` from the training labels.
    #[default]
    InverseFrequency,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub loss_weighting: LossWeighting,
    pub optimizer: AdamConfig,
    /// Score the whole training set after every epoch.
    pub train_metrics: bool,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 100,
            seed: 1,
            shuffle: true,
            loss_weighting: LossWeighting::InverseFrequency,
            optimizer: AdamConfig::default(),
            train_metrics: true,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        self.optimizer.validate()
    }
}

/// Averaged scores kept in the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Weighted cross-entropy in eval mode (no dropout).
    pub loss: f64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl EpochMetrics {
    fn new(m: &MetricsRecord, loss: f64) -> Self {
        Self {
            loss,
            accuracy: m.accuracy,
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            macro_f1: m.macro_f1,
            weighted_f1: m.weighted_f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub batches: usize,
    /// Mean of the per-batch weighted losses.
    pub loss: f64,
    pub train: Option<EpochMetrics>,
    pub validation: Option<EpochMetrics>,
    /// Wall-clock of the optimization loop alone.
    pub epoch_seconds: f64,
    /// Cumulative optimization time.
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingTrace {
    /// One JSON object per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Same records with timing fields zeroed.
    pub fn without_timing(&self) -> TrainingTrace {
        TrainingTrace {
            epochs: self
                .epochs
                .iter()
                .map(|e| EpochRecord {
                    epoch_seconds: 0.0,
                    elapsed_seconds: 0.0,
                    ..e.clone()
                })
                .collect(),
        }
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Gathers windows `indices` into a `[B, s_w, C]` buffer.
fn gather<T: Scalar>(data: &WindowedDataset, indices: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(indices.len() * data.window_len());
    for &i in indices {
        out.extend(data.window(i).iter().map(|&v| T::lit(v)));
    }
    out
}

/// Eval-mode class predictions in dataset order.
pub fn predict<T: Scalar>(
    model: &DeepConvLstm<T>,
    data: &WindowedDataset,
    batch_size: usize,
) -> Result<Vec<usize>> {
    Ok(scores(model, data, batch_size, None)?.0)
}

pub fn evaluate<T: Scalar>(
    model: &DeepConvLstm<T>,
    data: &WindowedDataset,
    batch_size: usize,
) -> Result<MetricsRecord> {
    let pred = predict(model, data, batch_size)?;
    compute_metrics(&data.labels, &pred, data.num_classes)
}

/// Predictions plus the weighted cross-entropy when `weights` is given.
fn scores<T: Scalar>(
    model: &DeepConvLstm<T>,
    data: &WindowedDataset,
    batch_size: usize,
    weights: Option<&[f64]>,
) -> Result<(Vec<usize>, f64)> {
    let order: Vec<usize> = (0..data.len()).collect();
    let mut pred = Vec::with_capacity(data.len());
    let (mut num, mut den) = (0.0, 0.0);
    for chunk in order.chunks(batch_size.max(1)) {
        let logits = model.logits(&gather(data, chunk), chunk.len())?;
        if let Some(w) = weights {
            let k = logits.shape()[1];
            for (row, &i) in logits.data().chunks_exact(k).zip(chunk) {
                let z: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
                let t = data.labels[i];
                num += w[t] * (lse - z[t]);
                den += w[t];
            }
        }
        pred.extend(argmax_rows(&logits));
    }
    Ok((pred, if den > 0.0 { num / den } else { f64::NAN }))
}

fn epoch_metrics<T: Scalar>(
    model: &DeepConvLstm<T>,
    data: &WindowedDataset,
    batch_size: usize,
    weights: &[f64],
) -> Result<EpochMetrics> {
    let (pred, loss) = scores(model, data, batch_size, Some(weights))?;
    let m = compute_metrics(&data.labels, &pred, data.num_classes)?;
    Ok(EpochMetrics::new(&m, loss))
}

/// Trains `model` in place, calling `on_epoch` after every epoch.
///
/// Shuffles come from stream `epoch` of the run seed and dropout masks from a
/// separate stream, so equal `(model, data, cfg)` give identical parameters.
pub fn train_epochs<T: Scalar>(
    model: &mut DeepConvLstm<T>,
    train: &WindowedDataset,
    validation: Option<&WindowedDataset>,
    cfg: &TrainRunConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainingTrace> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set has no windows".into()));
    }
    let mc = model.config();
    if train.window_samples != mc.window_samples
        || train.channels != mc.channels
        || train.num_classes != mc.num_classes
    {
        return Err(Error::Dimension {
            op: "train_epochs",
            lhs: vec![train.window_samples, train.channels, train.num_classes],
            rhs: vec![mc.window_samples, mc.channels, mc.num_classes],
        });
    }
    let weights_f64 = match cfg.loss_weighting {
        LossWeighting::InverseFrequency => class_weights(&train.labels, train.num_classes)?,
        LossWeighting::Uniform => vec![1.0; train.num_classes],
    };
    let weights: Vec<T> = weights_f64.iter().map(|&w| T::lit(w)).collect();
    let shape = [1, mc.window_samples, mc.channels];
    let mut optimizer = AdamState::<T>::new(cfg.optimizer.clone());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);

    let mut trace = TrainingTrace::default();
    let mut elapsed = 0.0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            order.sort_unstable();
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let input = Tensor::new([chunk.len(), 1, shape[1], shape[2]], gather(train, chunk))?;
            let targets: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let x = tape.constant(input);
            let logits = model.forward(&mut tape, &vars, x, true, &mut dropout_rng)?;
            let loss = tape.softmax_cross_entropy(logits, &targets, &weights)?;
            let value = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                });
            }
            tape.backward(loss)?;
            model.zero_grad();
            model.accumulate_grads(&tape, &vars);
            optimizer.step(&mut model.params_mut())?;
            loss_sum += value;
            batches += 1;
        }
        let epoch_seconds = started.elapsed().as_secs_f64();
        elapsed += epoch_seconds;
        let train_scores = if cfg.train_metrics {
            Some(epoch_metrics(model, train, cfg.batch_size, &weights_f64)?)
        } else {
            None
        };
        let val_scores = match validation {
            Some(v) if !v.is_empty() => {
                Some(epoch_metrics(model, v, cfg.batch_size, &weights_f64)?)
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            batches,
            loss: loss_sum / batches as f64,
            train: train_scores,
            validation: val_scores,
            epoch_seconds,
            elapsed_seconds: elapsed,
        };
        let flow = on_epoch(&record);
        trace.epochs.push(record);
        if flow.is_break() {
            break;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{segment, synth_generate, SynthSpec, WindowSpec};
    use crate::model::ModelConfig;

    fn small_model() -> ModelConfig {
        ModelConfig {
            num_conv_layers: 2,
            num_filters: 4,
            kernel_len: 5,
            hidden_units: 8,
            num_classes: 3,
            channels: 3,
            window_samples: 50,
            ..ModelConfig::default()
        }
    }

    fn data() -> WindowedDataset {
        let raw = synth_generate(&SynthSpec {
            subjects: 1,
            duration_seconds: 12.0,
            ..SynthSpec::default()
        })
        .unwrap();
        segment(&raw, &WindowSpec::new(1.0, 0.6)).unwrap()
    }

    fn run(cfg: &TrainRunConfig) -> (DeepConvLstm<f32>, TrainingTrace) {
        let mut model = DeepConvLstm::build(&small_model(), cfg.seed).unwrap();
        let trace = train_epochs(
            &mut model,
            &data(),
            None,
            cfg,
            |_| ControlFlow::Continue(()),
        )
        .unwrap();
        (model, trace)
    }

    #[test]
    fn batch_count_arithmetic() {
        let d = data();
        let cfg = TrainRunConfig {
            epochs: 2,
            batch_size: d.len() + 5,
            ..TrainRunConfig::default()
        };
        let (_, trace) = run(&cfg);
        assert!(trace.epochs.iter().all(|e| e.batches == 1));
        let cfg = TrainRunConfig {
            epochs: 1,
            batch_size: 7,
            ..TrainRunConfig::default()
        };
        assert_eq!(run(&cfg).1.epochs[0].batches, d.len().div_ceil(7));
    }

    #[test]
    fn repeat_runs_are_bitwise_identical() {
        let cfg = TrainRunConfig {
            epochs: 2,
            batch_size: 8,
            seed: 3,
            ..TrainRunConfig::default()
        };
        let (m1, t1) = run(&cfg);
        let (m2, t2) = run(&cfg);
        assert_eq!(m1, m2);
        assert_eq!(t1.without_timing(), t2.without_timing());
    }

    #[test]
    fn elapsed_is_monotone_and_positive() {
        let cfg = TrainRunConfig {
            epochs: 3,
            batch_size: 16,
            ..TrainRunConfig::default()
        };
        let (_, trace) = run(&cfg);
        let mut prev = 0.0;
        for e in &trace.epochs {
            assert!(e.epoch_seconds > 0.0);
            assert!(e.elapsed_seconds > prev);
            prev = e.elapsed_seconds;
        }
    }

    #[test]
    fn hook_can_stop_early() {
        let cfg = TrainRunConfig {
            epochs: 10,
            batch_size: 16,
            ..TrainRunConfig::default()
        };
        let mut model = DeepConvLstm::<f32>::build(&small_model(), 1).unwrap();
        let trace = train_epochs(&mut model, &data(), None, &cfg, |e| {
            if e.epoch == 2 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert_eq!(trace.epochs.len(), 2);
    }

    #[test]
    fn divergence_reports_location() {
        let cfg = TrainRunConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainRunConfig::default()
        };
        let mut model = DeepConvLstm::<f32>::build(&small_model(), 1).unwrap();
        model.classifier.bias.value.data_mut()[0] = f32::NAN;
        match train_epochs(&mut model, &data(), None, &cfg, |_| {
            ControlFlow::Continue(())
        }) {
            Err(Error::Divergence { epoch, batch }) => assert_eq!((epoch, batch), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = TrainRunConfig {
            batch_size: 0,
            ..TrainRunConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn trace_jsonl_has_one_line_per_epoch() {
        let cfg = TrainRunConfig {
            epochs: 2,
            batch_size: 32,
            ..TrainRunConfig::default()
        };
        let (_, trace) = run(&cfg);
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: EpochRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, trace.epochs[0]);
    }
}
