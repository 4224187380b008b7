use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeepConvLstm, ModelConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Tape, Tensor};

/// Paired 1-layer / 2-layer epoch timing on a fixed synthetic batch stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSpec {
    pub hidden_units: Vec<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            hidden_units: vec![128, 1024],
            repetitions: 5,
            warmup: 1,
            batches_per_epoch: 4,
            batch_size: 100,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineDescriptor {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub cpu_model: Option<String>,
}

impl MachineDescriptor {
    pub fn current() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        });
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub hidden_units: usize,
    pub lstm_params_1l: usize,
    pub lstm_params_2l: usize,
    pub median_epoch_seconds_1l: f64,
    pub median_epoch_seconds_2l: f64,
    /// `median_1l / median_2l`
    pub ratio: f64,
    /// `1 - ratio`
    pub saving: f64,
    pub epochs_1l: Vec<f64>,
    pub epochs_2l: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeTable {
    pub spec: BenchSpec,
    pub machine: MachineDescriptor,
    pub rows: Vec<RuntimeRow>,
    pub warnings: Vec<String>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Runner {
    model: DeepConvLstm<f32>,
    optimizer: AdamState<f32>,
    rng: ChaCha8Rng,
}

impl Runner {
    fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self {
            model: DeepConvLstm::build(config, seed)?,
            optimizer: AdamState::new(AdamConfig::default()),
            rng,
        })
    }

    /// Seconds for one pass over `batches`.
    fn epoch(&mut self, batches: &[(Tensor<f32>, Vec<usize>)], weights: &[f32]) -> Result<f64> {
        let started = Instant::now();
        for (input, labels) in batches {
            let mut tape = Tape::new();
            let vars = self.model.bind(&mut tape);
            let x = tape.constant(input.clone());
            let logits = self
                .model
                .forward(&mut tape, &vars, x, true, &mut self.rng)?;
            let loss = tape.softmax_cross_entropy(logits, labels, weights)?;
            tape.backward(loss)?;
            self.model.zero_grad();
            self.model.accumulate_grads(&tape, &vars);
            self.optimizer.step(&mut self.model.params_mut())?;
        }
        Ok(started.elapsed().as_secs_f64())
    }
}

/// Times training epochs of `base` with 1 and 2 LSTM layers at every hidden
/// size. Warmup epochs are discarded and the remaining repetitions alternate
/// between the two models so drift hits both equally. Only the optimization
/// loop is timed.
pub fn benchmark_runtime(base: &ModelConfig, spec: &BenchSpec) -> Result<RuntimeTable> {
    if spec.hidden_units.is_empty() {
        return Err(Error::config("hidden_units", "needs at least one value"));
    }
    if spec.repetitions == 0 || spec.batches_per_epoch == 0 || spec.batch_size == 0 {
        return Err(Error::config(
            "repetitions",
            "repetitions, batches_per_epoch and batch_size must be at least 1",
        ));
    }
    base.validate()?;
    let mut warnings = Vec::new();
    if spec.repetitions == 1 {
        warnings.push("a single repetition gives a noisy median; use 5 or more".to_string());
    }
    let mut data_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let batches: Vec<(Tensor<f32>, Vec<usize>)> = (0..spec.batches_per_epoch)
        .map(|_| {
            let x = Tensor::from_fn(
                [spec.batch_size, 1, base.window_samples, base.channels],
                |_| data_rng.random_range(-1.0f32..1.0),
            );
            let y = (0..spec.batch_size)
                .map(|_| data_rng.random_range(0..base.num_classes))
                .collect();
            (x, y)
        })
        .collect();
    let weights = vec![1.0f32; base.num_classes];

    let mut rows = Vec::new();
    for &h in &spec.hidden_units {
        let cfg = |layers| ModelConfig {
            hidden_units: h,
            lstm_layers: layers,
            ..base.clone()
        };
        let mut one = Runner::new(&cfg(1), spec.seed)?;
        let mut two = Runner::new(&cfg(2), spec.seed)?;
        for _ in 0..spec.warmup {
            one.epoch(&batches, &weights)?;
            two.epoch(&batches, &weights)?;
        }
        let mut t1 = Vec::with_capacity(spec.repetitions);
        let mut t2 = Vec::with_capacity(spec.repetitions);
        for rep in 0..spec.repetitions {
            if rep % 2 == 0 {
                t1.push(one.epoch(&batches, &weights)?);
                t2.push(two.epoch(&batches, &weights)?);
            } else {
                t2.push(two.epoch(&batches, &weights)?);
                t1.push(one.epoch(&batches, &weights)?);
            }
        }
        let (m1, m2) = (median(&t1), median(&t2));
        rows.push(RuntimeRow {
            hidden_units: h,
            lstm_params_1l: one.model.lstm_params(),
            lstm_params_2l: two.model.lstm_params(),
            median_epoch_seconds_1l: m1,
            median_epoch_seconds_2l: m2,
            ratio: m1 / m2,
            saving: 1.0 - m1 / m2,
            epochs_1l: t1,
            epochs_2l: t2,
        });
    }
    Ok(RuntimeTable {
        spec: spec.clone(),
        machine: MachineDescriptor::current(),
        rows,
        warnings,
    })
}
