use rand::Rng;

use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct ConvDims {
    batch: usize,
    in_channels: usize,
    out_channels: usize,
    time: usize,
    width: usize,
    kernel: usize,
}

impl ConvDims {
    fn out_time(&self) -> usize {
        self.time - self.kernel + 1
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddBias {
        a: Var,
        bias: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Dropout {
        a: Var,
        mask: Vec<T>,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        cols: Vec<T>,
        dims: ConvDims,
    },
    Permute {
        a: Var,
        map: Vec<usize>,
    },
    Reshape(Var),
    Rows {
        a: Var,
        start: usize,
    },
    Cols {
        a: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
        row_weights: Vec<T>,
        weight_sum: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::AddBias { .. } => "add_bias",
            Op::Mul { .. } => "mul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Dropout { .. } => "dropout",
            Op::Conv2d { .. } => "conv2d_valid",
            Op::Permute { .. } => "permute",
            Op::Reshape(_) => "reshape",
            Op::Rows { .. } => "rows",
            Op::Cols { .. } => "cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::Sum(_) => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Accumulated gradient; only populated for leaves.
    grad: Option<Vec<T>>,
}

/// Reverse-mode computation tape.
///
/// Operations are appended in evaluation order, so the node list is already
/// topologically sorted. [`Tape::backward`] walks it once in reverse and
/// accumulates into the gradients of leaves created with `requires_grad`.
/// Calling `backward` again without [`Tape::zero_grad`] adds to the existing
/// leaf gradients.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// Fail any operation whose output contains NaN or infinity.
    pub fn with_finite_check(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [m, n] => Ok((m, n)),
            ref other => Err(Error::Dimension {
                op,
                lhs: other.to_vec(),
                rhs: vec![],
            }),
        }
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m,k] · b[n,k]ᵀ`, the layout used for `x · Wᵀ` with `W` stored
    /// output-major.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        let (m, k) = self.matrix_dims(a, op)?;
        let (br, bc) = self.matrix_dims(b, op)?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            false,
        );
        let value = Tensor::new([m, n], out)?;
        self.push(value, Op::MatMul { a, b, trans_b }, &[a, b])
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor {
            shape: x.shape().to_vec(),
            data,
        }
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        Tensor {
            shape: x.shape().to_vec(),
            data: x.data().iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.zip_map(a, b, |p, q| p + q);
        self.push(value, Op::Add { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.zip_map(a, b, |p, q| p * q);
        self.push(value, Op::Mul { a, b }, &[a, b])
    }

    /// Adds `bias[n]` to every length-`n` row of `a` (last axis broadcast).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(a).last().unwrap();
        if self.shape(bias) != [n] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).data();
        for row in value.data_mut().chunks_exact_mut(n) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v = *v + bv;
            }
        }
        self.push(value, Op::AddBias { a, bias }, &[a, bias])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, |p| p.tanh());
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, |p| if p > T::zero() { p } else { T::zero() });
        self.push(value, Op::Relu(a), &[a])
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; otherwise the
    /// input is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config("dropout", format!("rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let x = self.value(a);
        let value = Tensor {
            shape: x.shape().to_vec(),
            data: x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        };
        self.push(value, Op::Dropout { a, mask }, &[a])
    }

    /// Valid (unpadded, stride 1) convolution along the time axis.
    ///
    /// `input` is `[B, Cin, T, W]`, `kernels` `[Cout, Cin, k, 1]`, `bias`
    /// `[Cout]`; the result is `[B, Cout, T-k+1, W]`. The sensor axis `W` is
    /// never mixed.
    pub fn conv2d_valid(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (batch, in_channels, time, width) = match *self.shape(input) {
            [b, c, t, w] => (b, c, t, w),
            ref s => {
                return Err(Error::Dimension {
                    op: "conv2d_valid",
                    lhs: s.to_vec(),
                    rhs: self.shape(kernels).to_vec(),
                })
            }
        };
        let (out_channels, kernel) = match *self.shape(kernels) {
            [co, ci, k, 1] if ci == in_channels => (co, k),
            ref s => {
                return Err(Error::Dimension {
                    op: "conv2d_valid",
                    lhs: self.shape(input).to_vec(),
                    rhs: s.to_vec(),
                })
            }
        };
        if self.shape(bias) != [out_channels] {
            return Err(Error::Dimension {
                op: "conv2d_valid",
                lhs: self.shape(kernels).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        if time < kernel {
            return Err(Error::WindowTooShort { time, kernel });
        }
        let dims = ConvDims {
            batch,
            in_channels,
            out_channels,
            time,
            width,
            kernel,
        };
        let n = dims.out_time() * width;
        let rows = in_channels * kernel;
        let cols_n = batch * n;

        // cols[(ci, j), (b, n)] = input[b, ci, j * W + n]
        let x = self.value(input).data();
        let mut cols = vec![T::zero(); rows * cols_n];
        let plane = time * width;
        for ci in 0..in_channels {
            for j in 0..kernel {
                let row = &mut cols[(ci * kernel + j) * cols_n..][..cols_n];
                for b in 0..batch {
                    let src = &x[(b * in_channels + ci) * plane + j * width..][..n];
                    row[b * n..(b + 1) * n].copy_from_slice(src);
                }
            }
        }

        let mut tmp = vec![T::zero(); out_channels * cols_n];
        T::gemm(
            out_channels,
            rows,
            cols_n,
            self.value(kernels).data(),
            false,
            &cols,
            false,
            &mut tmp,
            false,
        );
        let bias_v = self.value(bias).data();
        let mut out = vec![T::zero(); batch * out_channels * n];
        for co in 0..out_channels {
            for b in 0..batch {
                let dst = &mut out[(b * out_channels + co) * n..][..n];
                let src = &tmp[co * cols_n + b * n..][..n];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bias_v[co];
                }
            }
        }
        let value = Tensor::new([batch, out_channels, dims.out_time(), width], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                bias,
                cols,
                dims,
            },
            &[input, kernels, bias],
        )
    }

    /// Axis permutation; `axes[i]` names the input axis that becomes output
    /// axis `i`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes
                .iter()
                .all(|&ax| ax < shape.len() && !std::mem::replace(&mut seen[ax], true));
        if !valid {
            return Err(Error::Dimension {
                op: "permute",
                lhs: shape,
                rhs: axes.to_vec(),
            });
        }
        let mut in_strides = vec![1; shape.len()];
        for i in (0..shape.len().saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let strides: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
        let total = numel(&shape);
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; shape.len()];
        let mut offset = 0usize;
        for _ in 0..total {
            map.push(offset);
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                offset += strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                offset -= strides[d] * out_shape[d];
                idx[d] = 0;
            }
        }
        let x = self.value(a).data();
        let data = map.iter().map(|&i| x[i]).collect();
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::Permute { a, map }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape(a), &[a])
    }

    /// Contiguous row block `a[start..start+len, :]` of a matrix.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "rows")?;
        if len == 0 || start + len > m {
            return Err(Error::Dimension {
                op: "rows",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let value = Tensor::new([len, n], data)?;
        self.push(value, Op::Rows { a, start }, &[a])
    }

    /// Column block `a[:, start..start+len]` of a matrix.
    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "cols")?;
        if len == 0 || start + len > n {
            return Err(Error::Dimension {
                op: "cols",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&x[r * n + start..r * n + start + len]);
        }
        let value = Tensor::new([m, len], data)?;
        self.push(value, Op::Cols { a, start }, &[a])
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let (_, n) = self.matrix_dims(first, "concat_rows")?;
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.matrix_dims(p, "concat_rows")?;
            if pn != n {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            m += pm;
        }
        let mut data = Vec::with_capacity(m * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new([m, n], data)?;
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    /// Class-weighted softmax cross-entropy averaged with the weights of the
    /// target classes: `Σ_b w[t_b]·(−log softmax(z_b)[t_b]) / Σ_b w[t_b]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: &[T],
    ) -> Result<Var> {
        let (rows, classes) = self.matrix_dims(logits, "softmax_cross_entropy")?;
        if targets.len() != rows || class_weights.len() != classes {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                lhs: vec![rows, classes],
                rhs: vec![targets.len(), class_weights.len()],
            });
        }
        if let Some(bad) = class_weights.iter().position(|w| !(*w > T::zero())) {
            return Err(Error::config(
                "class_weights",
                format!("weight for class {bad} must be strictly positive"),
            ));
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); rows * classes];
        let mut row_weights = Vec::with_capacity(rows);
        let mut weighted = 0.0f64;
        let mut weight_sum = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::Label {
                    row: r,
                    label: t,
                    classes,
                });
            }
            let row = &z[r * classes..(r + 1) * classes];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut denom = T::zero();
            for (p, &v) in probs[r * classes..].iter_mut().zip(row) {
                *p = (v - max).exp();
                denom = denom + *p;
            }
            for p in &mut probs[r * classes..(r + 1) * classes] {
                *p = *p / denom;
            }
            let nll = denom.ln() - (row[t] - max);
            let w = class_weights[t];
            weighted += w.to_f64().unwrap() * nll.to_f64().unwrap();
            weight_sum += w.to_f64().unwrap();
            row_weights.push(w);
        }
        let value = Tensor::scalar(T::lit(weighted / weight_sum));
        self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                row_weights,
                weight_sum: T::lit(weight_sum),
            },
            &[logits],
        )
    }

    /// Backpropagates from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &d)| *a = *a + d),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        fn acc<T: Scalar>(dst: &mut [T], src: impl Iterator<Item = T>) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
        macro_rules! grad_of {
            ($v:expr) => {{
                let v: Var = $v;
                grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()])
            }};
        }

        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b } => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = out.shape()[1];
                let bv = nodes[b.0].value.data();
                let av = nodes[a.0].value.data();
                if needs(a) {
                    // dA = dC · op(B)ᵀ
                    T::gemm(m, n, k, g, false, bv, !trans_b, grad_of!(a), true);
                }
                if needs(b) {
                    if trans_b {
                        // B is [n,k]: dB = dCᵀ · A
                        T::gemm(n, m, k, g, true, av, false, grad_of!(b), true);
                    } else {
                        // dB = Aᵀ · dC
                        T::gemm(k, m, n, av, true, g, false, grad_of!(b), true);
                    }
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if needs(v) {
                        acc(grad_of!(v), g.iter().copied());
                    }
                }
            }
            &Op::AddBias { a, bias } => {
                if needs(a) {
                    acc(grad_of!(a), g.iter().copied());
                }
                if needs(bias) {
                    let gb = grad_of!(bias);
                    let n = gb.len();
                    for row in g.chunks_exact(n) {
                        acc(gb, row.iter().copied());
                    }
                }
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if needs(a) {
                    acc(grad_of!(a), g.iter().zip(bv).map(|(&d, &y)| d * y));
                }
                if needs(b) {
                    acc(grad_of!(b), g.iter().zip(av).map(|(&d, &x)| d * x));
                }
            }
            &Op::Sigmoid(a) => {
                if needs(a) {
                    let y = out.data();
                    acc(
                        grad_of!(a),
                        g.iter().zip(y).map(|(&d, &s)| d * s * (T::one() - s)),
                    );
                }
            }
            &Op::Tanh(a) => {
                if needs(a) {
                    let y = out.data();
                    acc(
                        grad_of!(a),
                        g.iter().zip(y).map(|(&d, &t)| d * (T::one() - t * t)),
                    );
                }
            }
            &Op::Relu(a) => {
                if needs(a) {
                    let x = nodes[a.0].value.data();
                    acc(
                        grad_of!(a),
                        g.iter()
                            .zip(x)
                            .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }),
                    );
                }
            }
            Op::Dropout { a, mask } => {
                if needs(*a) {
                    acc(grad_of!(*a), g.iter().zip(mask).map(|(&d, &m)| d * m));
                }
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                cols,
                dims,
            } => self.conv_backward(g, *input, *kernels, *bias, cols, dims, grads),
            Op::Permute { a, map } => {
                if needs(*a) {
                    let ga = grad_of!(*a);
                    for (&src, &d) in map.iter().zip(g) {
                        ga[src] = ga[src] + d;
                    }
                }
            }
            &Op::Reshape(a) => {
                if needs(a) {
                    acc(grad_of!(a), g.iter().copied());
                }
            }
            &Op::Rows { a, start } => {
                if needs(a) {
                    let n = out.shape()[1];
                    acc(&mut grad_of!(a)[start * n..], g.iter().copied());
                }
            }
            &Op::Cols { a, start } => {
                if needs(a) {
                    let n = nodes[a.0].value.shape()[1];
                    let len = out.shape()[1];
                    let ga = grad_of!(a);
                    for (r, row) in g.chunks_exact(len).enumerate() {
                        acc(&mut ga[r * n + start..], row.iter().copied());
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if needs(p) {
                        acc(grad_of!(p), g[offset..offset + len].iter().copied());
                    }
                    offset += len;
                }
            }
            &Op::Sum(a) => {
                if needs(a) {
                    let d = g[0];
                    grad_of!(a).iter_mut().for_each(|v| *v = *v + d);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
                row_weights,
                weight_sum,
            } => {
                if needs(*logits) {
                    let classes = nodes[logits.0].value.shape()[1];
                    let gl = grad_of!(*logits);
                    for (r, &t) in targets.iter().enumerate() {
                        let scale = g[0] * row_weights[r] / *weight_sum;
                        for c in 0..classes {
                            let indicator = if c == t { T::one() } else { T::zero() };
                            let idx = r * classes + c;
                            gl[idx] = gl[idx] + scale * (probs[idx] - indicator);
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        g: &[T],
        input: Var,
        kernels: Var,
        bias: Var,
        cols: &[T],
        dims: &ConvDims,
        grads: &mut [Option<Vec<T>>],
    ) {
        let nodes = &self.nodes;
        let n = dims.out_time() * dims.width;
        let rows = dims.in_channels * dims.kernel;
        let cols_n = dims.batch * n;
        let grad_slot = |grads: &mut [Option<Vec<T>>], v: Var| {
            let len = nodes[v.0].value.len();
            grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len])
        };

        // Regroup dOut [B, Cout, N] into [Cout, B·N] to match the gemm layout.
        let mut tmp = vec![T::zero(); dims.out_channels * cols_n];
        for b in 0..dims.batch {
            for co in 0..dims.out_channels {
                tmp[co * cols_n + b * n..][..n]
                    .copy_from_slice(&g[(b * dims.out_channels + co) * n..][..n]);
            }
        }

        if nodes[bias.0].requires_grad {
            let mut gb = grad_slot(grads, bias);
            for (co, v) in gb.iter_mut().enumerate() {
                *v = tmp[co * cols_n..(co + 1) * cols_n]
                    .iter()
                    .fold(*v, |a, &x| a + x);
            }
            grads[bias.0] = Some(gb);
        }
        if nodes[kernels.0].requires_grad {
            let mut gk = grad_slot(grads, kernels);
            T::gemm(
                dims.out_channels,
                cols_n,
                rows,
                &tmp,
                false,
                cols,
                true,
                &mut gk,
                true,
            );
            grads[kernels.0] = Some(gk);
        }
        if nodes[input.0].requires_grad {
            let mut dcols = vec![T::zero(); rows * cols_n];
            T::gemm(
                rows,
                dims.out_channels,
                cols_n,
                nodes[kernels.0].value.data(),
                true,
                &tmp,
                false,
                &mut dcols,
                false,
            );
            let mut gi = grad_slot(grads, input);
            let plane = dims.time * dims.width;
            for ci in 0..dims.in_channels {
                for j in 0..dims.kernel {
                    let row = &dcols[(ci * dims.kernel + j) * cols_n..][..cols_n];
                    for b in 0..dims.batch {
                        let dst =
                            &mut gi[(b * dims.in_channels + ci) * plane + j * dims.width..][..n];
                        for (d, &s) in dst.iter_mut().zip(&row[b * n..(b + 1) * n]) {
                            *d = *d + s;
                        }
                    }
                }
            }
            grads[input.0] = Some(gi);
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
