//! Fixtures shared by the criterion benches.

use harlstm::{AdamConfig, AdamState, DeepConvLstm, ModelConfig, Result, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[-1, 1)` windows shaped `[batch, 1, window_samples, channels]`
/// with uniform labels.
pub fn random_batch(config: &ModelConfig, batch: usize, seed: u64) -> (Tensor<f32>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn([batch, 1, config.window_samples, config.channels], |_| {
        rng.random_range(-1.0f32..1.0)
    });
    let y = (0..batch)
        .map(|_| rng.random_range(0..config.num_classes))
        .collect();
    (x, y)
}

/// One model, its optimizer and a fixed minibatch.
pub struct TrainStep {
    pub model: DeepConvLstm<f32>,
    optimizer: AdamState<f32>,
    rng: ChaCha8Rng,
    input: Tensor<f32>,
    labels: Vec<usize>,
    weights: Vec<f32>,
}

impl TrainStep {
    pub fn new(config: &ModelConfig, batch: usize, seed: u64) -> Result<Self> {
        let (input, labels) = random_batch(config, batch, seed);
        Ok(Self {
            model: DeepConvLstm::build(config, seed)?,
            optimizer: AdamState::new(AdamConfig::default()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            input,
            labels,
            weights: vec![1.0; config.num_classes],
        })
    }

    /// Forward, backward and one Adam update. Returns the loss.
    pub fn step(&mut self) -> Result<f32> {
        let mut tape = Tape::new();
        let vars = self.model.bind(&mut tape);
        let x = tape.constant(self.input.clone());
        let logits = self
            .model
            .forward(&mut tape, &vars, x, true, &mut self.rng)?;
        let loss = tape.softmax_cross_entropy(logits, &self.labels, &self.weights)?;
        tape.backward(loss)?;
        self.model.zero_grad();
        self.model.accumulate_grads(&tape, &vars);
        self.optimizer.step(&mut self.model.params_mut())?;
        Ok(tape.value(loss).data()[0])
    }

    /// Eval-mode logits for the fixed batch.
    pub fn infer(&self) -> Result<Tensor<f32>> {
        self.model.logits(self.input.data(), self.labels.len())
    }
}
