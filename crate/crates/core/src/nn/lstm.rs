use rand::Rng;

use super::{glorot_uniform, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Row-block order of the stacked gate matrices.
pub const GATE_ORDER: [&str; 4] = ["input", "forget", "cell", "output"];

/// Single LSTM layer with one bias vector per gate.
///
/// Parameter count is `4·(s·h + h² + h)` for input extent `s` and hidden size
/// `h`. Initial hidden and cell states are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<T> {
    /// `[4h, s]`, gate blocks in [`GATE_ORDER`].
    pub weight_ih: Param<T>,
    /// `[4h, h]`
    pub weight_hh: Param<T>,
    /// `[4h]`
    pub bias: Param<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub weight_ih: Var,
    pub weight_hh: Var,
    pub bias: Var,
}

/// Per-step hidden states (`[B, h]` each) plus the final `(h_T, c_T)`.
#[derive(Clone, Debug)]
pub struct LstmOutput {
    pub steps: Vec<Var>,
    pub h_last: Var,
    pub c_last: Var,
}

impl LstmOutput {
    /// Hidden states stacked time-major: `[T·B, h]`.
    pub fn sequence<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<Var> {
        tape.concat_rows(&self.steps)
    }

    /// Hidden states as `[B, T, h]`.
    pub fn batch_major<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<Var> {
        let seq = self.sequence(tape)?;
        let (b, h) = (tape.shape(self.h_last)[0], tape.shape(self.h_last)[1]);
        let seq = tape.reshape(seq, &[self.steps.len(), b, h])?;
        tape.permute(seq, &[1, 0, 2])
    }
}

impl<T: Scalar> LstmLayer<T> {
    pub fn new<R: Rng + ?Sized>(input_size: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            weight_ih: Param::new(glorot_uniform(
                [4 * hidden, input_size],
                input_size,
                4 * hidden,
                rng,
            )),
            weight_hh: Param::new(glorot_uniform(
                [4 * hidden, hidden],
                hidden,
                4 * hidden,
                rng,
            )),
            bias: Param::new(Tensor::zeros([4 * hidden])),
        }
    }

    pub fn from_parts(weight_ih: Tensor<T>, weight_hh: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let h = weight_hh.shape()[1];
        if weight_ih.rank() != 2
            || weight_ih.shape()[0] != 4 * h
            || weight_hh.shape() != [4 * h, h]
            || bias.shape() != [4 * h]
        {
            return Err(Error::Dimension {
                op: "lstm_from_parts",
                lhs: weight_ih.shape().to_vec(),
                rhs: weight_hh.shape().to_vec(),
            });
        }
        Ok(Self {
            weight_ih: Param::new(weight_ih),
            weight_hh: Param::new(weight_hh),
            bias: Param::new(bias),
        })
    }

    pub fn input_size(&self) -> usize {
        self.weight_ih.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.weight_hh.shape()[1]
    }

    /// `4·s·h + 4h + 4h²`
    pub fn param_count(&self) -> usize {
        let (s, h) = (self.input_size(), self.hidden());
        4 * (s * h + h * h + h)
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> LstmVars {
        LstmVars {
            weight_ih: self.weight_ih.bind(tape),
            weight_hh: self.weight_hh.bind(tape),
            bias: self.bias.bind(tape),
        }
    }

    pub fn accumulate_grads(&mut self, tape: &Tape<T>, vars: &LstmVars) {
        self.weight_ih.accumulate_from(tape, vars.weight_ih);
        self.weight_hh.accumulate_from(tape, vars.weight_hh);
        self.bias.accumulate_from(tape, vars.bias);
    }

    /// Runs over a batch-major sequence `x: [B, T, s]`.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &LstmVars, x: Var) -> Result<LstmOutput> {
        let (b, t, s) = match *tape.shape(x) {
            [b, t, s] => (b, t, s),
            ref other => {
                return Err(Error::Dimension {
                    op: "lstm_forward",
                    lhs: other.to_vec(),
                    rhs: vec![self.input_size()],
                })
            }
        };
        let xt = tape.permute(x, &[1, 0, 2])?;
        let xt = tape.reshape(xt, &[t * b, s])?;
        self.forward_time_major(tape, vars, xt, b)
    }

    /// Runs over a time-major sequence flattened to `[T·B, s]`.
    pub fn forward_time_major(
        &self,
        tape: &mut Tape<T>,
        vars: &LstmVars,
        x: Var,
        batch: usize,
    ) -> Result<LstmOutput> {
        let (rows, s) = match *tape.shape(x) {
            [r, s] => (r, s),
            ref other => {
                return Err(Error::Dimension {
                    op: "lstm_forward",
                    lhs: other.to_vec(),
                    rhs: vec![self.input_size()],
                })
            }
        };
        if s != self.input_size() || batch == 0 || rows % batch != 0 || rows == 0 {
            return Err(Error::Dimension {
                op: "lstm_forward",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![batch, self.input_size()],
            });
        }
        let steps_n = rows / batch;
        let h = self.hidden();

        // Input projections for all steps at once: [T·B, 4h].
        let xw = tape.matmul_nt(x, vars.weight_ih)?;
        let xw = tape.add_bias(xw, vars.bias)?;

        let mut h_prev = tape.constant(Tensor::zeros([batch, h]));
        let mut c_prev = tape.constant(Tensor::zeros([batch, h]));
        let mut steps = Vec::with_capacity(steps_n);
        for t in 0..steps_n {
            let x_part = tape.rows(xw, t * batch, batch)?;
            let h_part = tape.matmul_nt(h_prev, vars.weight_hh)?;
            let gates = tape.add(x_part, h_part)?;
            let i = tape.cols(gates, 0, h)?;
            let i = tape.sigmoid(i)?;
            let f = tape.cols(gates, h, h)?;
            let f = tape.sigmoid(f)?;
            let g = tape.cols(gates, 2 * h, h)?;
            let g = tape.tanh(g)?;
            let o = tape.cols(gates, 3 * h, h)?;
            let o = tape.sigmoid(o)?;
            let keep = tape.mul(f, c_prev)?;
            let write = tape.mul(i, g)?;
            let c = tape.add(keep, write)?;
            let c_act = tape.tanh(c)?;
            let h_new = tape.mul(o, c_act)?;
            steps.push(h_new);
            h_prev = h_new;
            c_prev = c;
        }
        Ok(LstmOutput {
            steps,
            h_last: h_prev,
            c_last: c_prev,
        })
    }
}
