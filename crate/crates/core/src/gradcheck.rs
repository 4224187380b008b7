//! Central finite-difference gradients.
//!
//! Only ever evaluates the function forward, so it serves as an oracle for the
//! tape's backward rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::DeepConvLstm;
use crate::nn::{ConvLayer, DenseLayer, LstmLayer, LstmVars};
use crate::tensor::{Tape, Tensor, Var};

/// Step used by every gradient check in this crate.
pub const FD_EPS: f64 = 1e-5;

/// Magnitude below which relative errors are measured against this floor
/// instead of the gradient itself.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `(f(x + eps·e_i) - f(x - eps·e_i)) / 2eps` for every coordinate `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let plus = f(&probe);
            probe[i] = x[i] - eps;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

/// Largest relative error between backward-pass and finite-difference
/// gradients of `sum(build(inputs) ⊙ r)` for a fixed pseudo-random `r`, taken
/// over every element of every input.
pub fn tape_gradient_error(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let project = |tape: &mut Tape<f64>, out: Var| -> Result<Var> {
        let shape = tape.shape(out).to_vec();
        let r = Tensor::from_fn(shape, |i| ((i * 7919 % 13) as f64 - 6.0) / 6.5 + 0.05);
        let r = tape.constant(r);
        let prod = tape.mul(out, r)?;
        tape.sum(prod)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    let loss = project(&mut tape, out)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let numeric = central_difference(
            |x| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let t = if i == j {
                            Tensor::new(t.shape().to_vec(), x.to_vec()).unwrap()
                        } else {
                            t.clone()
                        };
                        tape.leaf(t, false)
                    })
                    .collect();
                let out = build(&mut tape, &vars).expect("rebuild");
                let loss = project(&mut tape, out).expect("project");
                tape.value(loss).data()[0]
            },
            input.data(),
            FD_EPS,
        );
        worst = worst.max(max_relative_error(&analytic[i], &numeric, REL_ERR_FLOOR));
    }
    Ok(worst)
}

/// Adds uniform noise in `±scale` to every parameter. Freshly built models
/// have zero biases, which can leave a ReLU input exactly at zero where the
/// loss is not differentiable.
pub fn jitter_params(model: &mut DeepConvLstm<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

/// Smallest `|pre-activation|` over every ReLU in the conv stack. Central
/// differences with step `FD_EPS` are only meaningful when this is well
/// above the step.
pub fn relu_margin(model: &DeepConvLstm<f64>, windows: &Tensor<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let mut x = tape.constant(windows.clone());
    let mut margin = f64::INFINITY;
    for conv in &model.convs {
        let vars = conv.bind(&mut tape);
        let pre = tape.conv2d_valid(x, vars.kernels, vars.bias)?;
        margin = tape
            .value(pre)
            .data()
            .iter()
            .fold(margin, |m, v| m.min(v.abs()));
        x = tape.relu(pre)?;
    }
    Ok(margin)
}

/// Weighted cross-entropy of a model on one batch, with dropout masks drawn
/// from a generator seeded by `dropout_seed` so repeated evaluations agree.
pub fn model_loss(
    model: &DeepConvLstm<f64>,
    windows: &Tensor<f64>,
    labels: &[usize],
    class_weights: &[f64],
    dropout_seed: u64,
    backward: bool,
) -> Result<(f64, Option<DeepConvLstm<f64>>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let x = tape.constant(windows.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let logits = model.forward(&mut tape, &vars, x, true, &mut rng)?;
    let loss = tape.softmax_cross_entropy(logits, labels, class_weights)?;
    let value = tape.value(loss).data()[0];
    if !backward {
        return Ok((value, None));
    }
    tape.backward(loss)?;
    let mut with_grads = model.clone();
    with_grads.zero_grad();
    with_grads.accumulate_grads(&tape, &vars);
    Ok((value, Some(with_grads)))
}

/// Largest relative error over every model parameter between the backward
/// pass and central finite differences of [`model_loss`].
pub fn model_gradient_error(
    model: &DeepConvLstm<f64>,
    windows: &Tensor<f64>,
    labels: &[usize],
    class_weights: &[f64],
    dropout_seed: u64,
) -> Result<f64> {
    let (_, graded) = model_loss(model, windows, labels, class_weights, dropout_seed, true)?;
    let graded = graded.expect("backward requested");
    let analytic: Vec<Vec<f64>> = graded.params().iter().map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    for (idx, grad) in analytic.iter().enumerate() {
        let base = model.params()[idx].value.clone();
        let numeric = central_difference(
            |x| {
                let mut probe = model.clone();
                probe.params_mut()[idx].value =
                    Tensor::new(base.shape().to_vec(), x.to_vec()).unwrap();
                model_loss(&probe, windows, labels, class_weights, dropout_seed, false)
                    .expect("forward")
                    .0
            },
            base.data(),
            FD_EPS,
        );
        worst = worst.max(max_relative_error(grad, &numeric, REL_ERR_FLOOR));
    }
    Ok(worst)
}

fn draw(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        // Keep clear of the ReLU kink so central differences stay smooth.
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

/// Runs [`tape_gradient_error`] on every tape primitive and on the three layer
/// types with inputs drawn from `seed`. Returns `(name, max relative error)`.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let (a, b, bt) = (
        draw(&mut rng, &[3, 4]),
        draw(&mut rng, &[4, 2]),
        draw(&mut rng, &[2, 4]),
    );
    out.push((
        "matmul",
        tape_gradient_error(&[a.clone(), b], |t, v| t.matmul(v[0], v[1]))?,
    ));
    out.push((
        "matmul_nt",
        tape_gradient_error(&[a, bt], |t, v| t.matmul_nt(v[0], v[1]))?,
    ));

    let (x, y) = (draw(&mut rng, &[2, 5]), draw(&mut rng, &[2, 5]));
    out.push((
        "add",
        tape_gradient_error(&[x.clone(), y.clone()], |t, v| t.add(v[0], v[1]))?,
    ));
    out.push((
        "mul",
        tape_gradient_error(&[x.clone(), y], |t, v| t.mul(v[0], v[1]))?,
    ));
    out.push((
        "add_bias",
        tape_gradient_error(&[x.clone(), draw(&mut rng, &[5])], |t, v| {
            t.add_bias(v[0], v[1])
        })?,
    ));
    out.push((
        "sigmoid",
        tape_gradient_error(std::slice::from_ref(&x), |t, v| t.sigmoid(v[0]))?,
    ));
    out.push((
        "tanh",
        tape_gradient_error(std::slice::from_ref(&x), |t, v| t.tanh(v[0]))?,
    ));
    out.push((
        "relu",
        tape_gradient_error(std::slice::from_ref(&x), |t, v| t.relu(v[0]))?,
    ));
    out.push((
        "dropout",
        tape_gradient_error(std::slice::from_ref(&x), |t, v| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD50);
            t.dropout(v[0], 0.5, true, &mut mask_rng)
        })?,
    ));
    out.push((
        "sum",
        tape_gradient_error(std::slice::from_ref(&x), |t, v| t.sum(v[0]))?,
    ));
    out.push((
        "rows",
        tape_gradient_error(std::slice::from_ref(&x), |t, v| t.rows(v[0], 1, 1))?,
    ));
    out.push((
        "cols",
        tape_gradient_error(std::slice::from_ref(&x), |t, v| t.cols(v[0], 1, 3))?,
    ));
    out.push((
        "concat_rows",
        tape_gradient_error(&[x.clone(), draw(&mut rng, &[3, 5])], |t, v| {
            t.concat_rows(&[v[0], v[1]])
        })?,
    ));
    out.push((
        "reshape",
        tape_gradient_error(&[x], |t, v| t.reshape(v[0], &[5, 2]))?,
    ));
    out.push((
        "permute",
        tape_gradient_error(&[draw(&mut rng, &[2, 3, 4])], |t, v| {
            t.permute(v[0], &[2, 0, 1])
        })?,
    ));
    out.push((
        "conv2d_valid",
        tape_gradient_error(
            &[
                draw(&mut rng, &[2, 2, 7, 3]),
                draw(&mut rng, &[3, 2, 3, 1]),
                draw(&mut rng, &[3]),
            ],
            |t, v| t.conv2d_valid(v[0], v[1], v[2]),
        )?,
    ));
    let weights: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..3.0)).collect();
    out.push((
        "softmax_cross_entropy",
        tape_gradient_error(&[draw(&mut rng, &[5, 4])], |t, v| {
            t.softmax_cross_entropy(v[0], &[0, 3, 1, 1, 2], &weights)
        })?,
    ));

    let conv = ConvLayer::<f64>::new(2, 3, 3, &mut rng);
    out.push((
        "conv_layer",
        tape_gradient_error(
            &[
                draw(&mut rng, &[2, 2, 6, 2]),
                conv.kernels.value.clone(),
                draw(&mut rng, &[3]),
            ],
            |t, v| {
                let y = t.conv2d_valid(v[0], v[1], v[2])?;
                t.relu(y)
            },
        )?,
    ));
    let lstm = LstmLayer::<f64>::new(3, 4, &mut rng);
    out.push((
        "lstm_layer",
        tape_gradient_error(
            &[
                draw(&mut rng, &[2, 5, 3]),
                lstm.weight_ih.value.clone(),
                lstm.weight_hh.value.clone(),
                draw(&mut rng, &[16]),
            ],
            |t, v| {
                let layer = LstmLayer::from_parts(
                    t.value(v[1]).clone(),
                    t.value(v[2]).clone(),
                    t.value(v[3]).clone(),
                )?;
                let vars = LstmVars {
                    weight_ih: v[1],
                    weight_hh: v[2],
                    bias: v[3],
                };
                let out = layer.forward(t, &vars, v[0])?;
                out.batch_major(t)
            },
        )?,
    ));
    let dense = DenseLayer::<f64>::new(4, 3, &mut rng);
    out.push((
        "dense_layer",
        tape_gradient_error(
            &[
                draw(&mut rng, &[2, 4]),
                dense.weight.value.clone(),
                draw(&mut rng, &[3]),
            ],
            |t, v| {
                let z = t.matmul_nt(v[0], v[1])?;
                t.add_bias(z, v[2])
            },
        )?,
    ));
    Ok(out)
}
