//! DeepConvLSTM with a one- or two-layer LSTM head.
//!
//! Data flow for a batch `[B, 1, s_w, C]`:
//!
//! 1. `num_conv_layers` temporal convolutions (`(k,1)` kernels, valid, ReLU),
//!    giving `[B, F, T', C]` with `T' = s_w - num_conv_layers·(k-1)`;
//! 2. regrouped time-major into `[T'·B, F·C]`, feature index `f·C + c`;
//! 3. the LSTM stack (the second layer consumes the first layer's full
//!    hidden sequence);
//! 4. the hidden state at the last step, dropout (training only), dense
//!    classifier to `[B, K]` logits.

mod checkpoint;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvLayer, ConvVars, DenseLayer, DenseVars, LstmLayer, LstmVars, Param};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_with_header, save_checkpoint, save_checkpoint_with,
    CheckpointHeader, CHECKPOINT_VERSION,
};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_conv_layers: usize,
    pub num_filters: usize,
    pub kernel_len: usize,
    pub lstm_layers: usize,
    pub hidden_units: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub channels: usize,
    pub window_samples: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_conv_layers: 4,
            num_filters: 64,
            kernel_len: 11,
            lstm_layers: 1,
            hidden_units: 128,
            dropout: 0.5,
            num_classes: 2,
            channels: 3,
            window_samples: 50,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_conv_layers", self.num_conv_layers),
            ("num_filters", self.num_filters),
            ("kernel_len", self.kernel_len),
            ("hidden_units", self.hidden_units),
            ("channels", self.channels),
            ("window_samples", self.window_samples),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(1..=2).contains(&self.lstm_layers) {
            return Err(Error::config(
                "lstm_layers",
                format!("must be 1 or 2, got {}", self.lstm_layers),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least 2 classes"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(
                "dropout",
                format!("rate {} outside [0, 1)", self.dropout),
            ));
        }
        let shrink = self.num_conv_layers * (self.kernel_len - 1);
        if self.window_samples <= shrink {
            return Err(Error::config(
                "window_samples",
                format!(
                    "{} samples leave no time steps after {} convolutions of length {}; use a longer window or a smaller kernel_len",
                    self.window_samples, self.num_conv_layers, self.kernel_len
                ),
            ));
        }
        Ok(())
    }

    /// Sequence length seen by the LSTM.
    pub fn post_conv_steps(&self) -> usize {
        self.window_samples
            .saturating_sub(self.num_conv_layers * (self.kernel_len.max(1) - 1))
    }

    /// Feature extent of the first LSTM layer's input.
    pub fn lstm_input_size(&self) -> usize {
        self.num_filters * self.channels
    }
}

/// One entry of [`DeepConvLstm::parameter_inventory`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryEntry {
    pub layer: String,
    pub tensor: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepConvLstm<T> {
    config: ModelConfig,
    pub convs: Vec<ConvLayer<T>>,
    pub lstms: Vec<LstmLayer<T>>,
    pub classifier: DenseLayer<T>,
}

/// Parameter handles of one forward pass, in [`DeepConvLstm::params`] order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    convs: Vec<ConvVars>,
    lstms: Vec<LstmVars>,
    classifier: DenseVars,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend([c.kernels, c.bias]);
        }
        for l in &self.lstms {
            out.extend([l.weight_ih, l.weight_hh, l.bias]);
        }
        out.extend([self.classifier.weight, self.classifier.bias]);
        out
    }
}

impl<T: Scalar> DeepConvLstm<T> {
    /// Builds a Glorot-initialized model; equal `(config, seed)` pairs give
    /// bitwise identical parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(config.num_conv_layers);
        let mut in_ch = 1;
        for _ in 0..config.num_conv_layers {
            convs.push(ConvLayer::new(
                in_ch,
                config.num_filters,
                config.kernel_len,
                &mut rng,
            ));
            in_ch = config.num_filters;
        }
        let mut lstms = vec![LstmLayer::new(
            config.lstm_input_size(),
            config.hidden_units,
            &mut rng,
        )];
        if config.lstm_layers == 2 {
            lstms.push(LstmLayer::new(
                config.hidden_units,
                config.hidden_units,
                &mut rng,
            ));
        }
        let classifier = DenseLayer::new(config.hidden_units, config.num_classes, &mut rng);
        Ok(Self {
            config: config.clone(),
            convs,
            lstms,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Learnable tensors paired with stable names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.kernels", i + 1), &c.kernels));
            out.push((format!("conv{}.bias", i + 1), &c.bias));
        }
        for (i, l) in self.lstms.iter().enumerate() {
            out.push((format!("lstm{}.weight_ih", i + 1), &l.weight_ih));
            out.push((format!("lstm{}.weight_hh", i + 1), &l.weight_hh));
            out.push((format!("lstm{}.bias", i + 1), &l.bias));
        }
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        out
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.kernels);
            out.push(&mut c.bias);
        }
        for l in &mut self.lstms {
            out.push(&mut l.weight_ih);
            out.push(&mut l.weight_hh);
            out.push(&mut l.bias);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_inventory(&self) -> Vec<InventoryEntry> {
        self.named_params()
            .into_iter()
            .map(|(name, p)| {
                let (layer, tensor) = name.split_once('.').unwrap();
                InventoryEntry {
                    layer: layer.to_string(),
                    tensor: tensor.to_string(),
                    shape: p.shape().to_vec(),
                    count: p.len(),
                }
            })
            .collect()
    }

    pub fn total_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Learnable parameters inside the LSTM stack only.
    pub fn lstm_params(&self) -> usize {
        self.lstms.iter().map(|l| l.param_count()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ModelVars {
        ModelVars {
            convs: self.convs.iter().map(|c| c.bind(tape)).collect(),
            lstms: self.lstms.iter().map(|l| l.bind(tape)).collect(),
            classifier: self.classifier.bind(tape),
        }
    }

    /// Records the forward pass of `input: [B, 1, s_w, C]` and returns
    /// `[B, K]` logits.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        input: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let cfg = &self.config;
        let batch = match *tape.shape(input) {
            [b, 1, s, c] if s == cfg.window_samples && c == cfg.channels => b,
            ref other => {
                return Err(Error::Dimension {
                    op: "model_forward",
                    lhs: other.to_vec(),
                    rhs: vec![0, 1, cfg.window_samples, cfg.channels],
                })
            }
        };
        let mut x = input;
        for (layer, v) in self.convs.iter().zip(&vars.convs) {
            x = layer.forward(tape, v, x)?;
        }
        let steps = tape.shape(x)[2];
        // [B, F, T', C] -> [T', B, F, C] -> [T'·B, F·C]
        let seq = tape.permute(x, &[2, 0, 1, 3])?;
        let mut seq = tape.reshape(seq, &[steps * batch, cfg.lstm_input_size()])?;

        let mut last = None;
        for (idx, (layer, v)) in self.lstms.iter().zip(&vars.lstms).enumerate() {
            let out = layer.forward_time_major(tape, v, seq, batch)?;
            if idx + 1 < self.lstms.len() {
                seq = out.sequence(tape)?;
            }
            last = Some(out.h_last);
        }
        let features = last.expect("at least one LSTM layer");
        let features = tape.dropout(features, cfg.dropout, training, rng)?;
        self.classifier.forward(tape, &vars.classifier, features)
    }

    /// Adds the gradients recorded on `tape` into every [`Param::grad`].
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, vars: &ModelVars) {
        for (c, v) in self.convs.iter_mut().zip(&vars.convs) {
            c.accumulate_grads(tape, v);
        }
        for (l, v) in self.lstms.iter_mut().zip(&vars.lstms) {
            l.accumulate_grads(tape, v);
        }
        self.classifier.accumulate_grads(tape, &vars.classifier);
    }

    /// Eval-mode logits for a batch of windows laid out `[B, s_w, C]`.
    pub fn logits(&self, windows: &[T], batch: usize) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let input = Tensor::new(
            [batch, 1, cfg.window_samples, cfg.channels],
            windows.to_vec(),
        )?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(input);
        // Eval mode never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = self.forward(&mut tape, &vars, x, false, &mut rng)?;
        Ok(tape.value(logits).clone())
    }
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
