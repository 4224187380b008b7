use rand::Rng;

use super::{glorot_uniform, Param};
use crate::error::Result;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Fully connected classifier head: `x · Wᵀ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `[K, in]`
    pub weight: Param<T>,
    /// `[K]`
    pub bias: Param<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(glorot_uniform([outputs, inputs], inputs, outputs, rng)),
            bias: Param::new(Tensor::zeros([outputs])),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `K·in + K`
    pub fn param_count(&self) -> usize {
        self.outputs() * self.inputs() + self.outputs()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> DenseVars {
        DenseVars {
            weight: self.weight.bind(tape),
            bias: self.bias.bind(tape),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &DenseVars, x: Var) -> Result<Var> {
        let z = tape.matmul_nt(x, vars.weight)?;
        tape.add_bias(z, vars.bias)
    }

    pub fn accumulate_grads(&mut self, tape: &Tape<T>, vars: &DenseVars) {
        self.weight.accumulate_from(tape, vars.weight);
        self.bias.accumulate_from(tape, vars.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(layer: &DenseLayer<f64>, x: Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let vars = layer.bind(&mut tape);
        let x = tape.constant(x);
        let y = layer.forward(&mut tape, &vars, x).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn identity_and_bias_only() {
        let eye = Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let layer = DenseLayer::from_parts(eye, Tensor::zeros([3]));
        let x = Tensor::new([2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        assert_eq!(run(&layer, x.clone()), x);

        let layer = DenseLayer::from_parts(
            Tensor::zeros([2, 3]),
            Tensor::new([2], vec![1.0, 2.0]).unwrap(),
        );
        let y = run(&layer, x);
        assert_eq!(y.data(), &[1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn matches_explicit_recomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = DenseLayer::<f64>::new(4, 3, &mut rng);
        layer.bias.value = Tensor::new([3], vec![0.1, -0.2, 0.3]).unwrap();
        let x = Tensor::from_fn([5, 4], |i| ((i * 7) % 11) as f64 / 11.0 - 0.5);
        let y = run(&layer, x.clone());
        let w = &layer.weight.value;
        for r in 0..5 {
            for k in 0..3 {
                let mut acc = layer.bias.value.data()[k];
                for c in 0..4 {
                    acc += x.at(&[r, c]) * w.at(&[k, c]);
                }
                assert!((y.at(&[r, k]) - acc).abs() < 1e-12);
            }
        }
        assert_eq!(layer.param_count(), 15);
    }

    #[test]
    fn feature_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = DenseLayer::<f64>::new(4, 3, &mut rng);
        let mut tape = Tape::new();
        let vars = layer.bind(&mut tape);
        let x = tape.constant(Tensor::zeros([2, 5]));
        assert!(layer.forward(&mut tape, &vars, x).is_err());
    }
}
