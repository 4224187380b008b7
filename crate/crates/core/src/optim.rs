//! Adam with L2 weight decay and inverse-frequency class weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Apply decay directly to the weights (AdamW) instead of through the gradient.
    pub decoupled_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decoupled_decay: false,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, format!("{b} outside [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Moment estimates for every parameter tensor, in `params_mut` order.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// One update from the gradients stored on `params`.
    ///
    /// The first call sizes the moment buffers; later calls must pass the same
    /// parameter list.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if self.t == 0 && self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Contract(format!(
                "optimizer state holds {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c = &self.config;
        let lit = T::lit;
        let (b1, b2) = (lit(c.beta1), lit(c.beta2));
        let bc1 = lit(1.0 - c.beta1.powf(self.t as f64));
        let bc2 = lit(1.0 - c.beta2.powf(self.t as f64));
        let (lr, wd, eps) = (lit(c.learning_rate), lit(c.weight_decay), lit(c.epsilon));
        let one = T::one();
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Param { value, grad } = &mut **p;
            for (((theta, &g), m), v) in value.data_mut().iter_mut().zip(grad.iter()).zip(m).zip(v)
            {
                let g = if c.decoupled_decay {
                    g
                } else {
                    g + wd * *theta
                };
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                if c.decoupled_decay {
                    *theta = *theta - lr * wd * *theta;
                }
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `w_c = N / (K·n_c)`; classes absent from `labels` take the largest weight
/// among present classes.
pub fn class_weights(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::Data("class weights need at least one label".into()));
    }
    if num_classes < 2 {
        return Err(Error::config("num_classes", "must be at least 2"));
    }
    let mut counts = vec![0usize; num_classes];
    for (row, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::Label {
                row,
                label: l,
                classes: num_classes,
            });
        }
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    let k = num_classes as f64;
    let present: Vec<Option<f64>> = counts
        .iter()
        .map(|&c| (c > 0).then(|| n / (k * c as f64)))
        .collect();
    let max = present.iter().flatten().cloned().fold(0.0, f64::max);
    Ok(present.into_iter().map(|w| w.unwrap_or(max)).collect())
}
