use rand::Rng;

use super::{glorot_uniform, Param};
use crate::error::Result;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Temporal convolution `(k, 1)` followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// `[Cout, Cin, k, 1]`
    pub kernels: Param<T>,
    /// `[Cout]`
    pub bias: Param<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub kernels: Var,
    pub bias: Var,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel_len: usize,
        rng: &mut R,
    ) -> Self {
        let kernels = glorot_uniform(
            [out_channels, in_channels, kernel_len, 1],
            in_channels * kernel_len,
            out_channels * kernel_len,
            rng,
        );
        Self {
            kernels: Param::new(kernels),
            bias: Param::new(Tensor::zeros([out_channels])),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn kernel_len(&self) -> usize {
        self.kernels.shape()[2]
    }

    /// `Cout·Cin·k + Cout`
    pub fn param_count(&self) -> usize {
        self.out_channels() * self.in_channels() * self.kernel_len() + self.out_channels()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ConvVars {
        ConvVars {
            kernels: self.kernels.bind(tape),
            bias: self.bias.bind(tape),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &ConvVars, x: Var) -> Result<Var> {
        let y = tape.conv2d_valid(x, vars.kernels, vars.bias)?;
        tape.relu(y)
    }

    pub fn accumulate_grads(&mut self, tape: &Tape<T>, vars: &ConvVars) {
        self.kernels.accumulate_from(tape, vars.kernels);
        self.bias.accumulate_from(tape, vars.bias);
    }
}
