//! Parameterized layers of the DeepConvLSTM.
//!
//! Every layer owns its parameters as [`Param`]s. A forward pass first binds
//! the parameters onto a [`Tape`](crate::Tape) as gradient-tracking leaves and
//! then records the layer math against those handles.

mod conv;
mod dense;
mod init;
mod lstm;

pub use conv::{ConvLayer, ConvVars};
pub use dense::{DenseLayer, DenseVars};
pub use init::{glorot_bound, glorot_uniform};
pub use lstm::{LstmLayer, LstmOutput, LstmVars, GATE_ORDER};

use crate::tensor::{Scalar, Tape, Tensor, Var};

/// A learnable tensor plus its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub(crate) fn bind(&self, tape: &mut Tape<T>) -> Var {
        tape.leaf(self.value.clone(), true)
    }

    /// Adds the gradient the tape accumulated on `var` (if any).
    pub fn accumulate_from(&mut self, tape: &Tape<T>, var: Var) {
        if let Some(g) = tape.grad(var) {
            for (a, &d) in self.grad.iter_mut().zip(g) {
                *a = *a + d;
            }
        }
    }
}
