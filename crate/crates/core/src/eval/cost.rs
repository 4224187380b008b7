use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form LSTM parameter counts for input extent `s` and hidden size `h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCostModel {
    pub s: u64,
    pub h: u64,
    /// `4sh + 4h + 4h²`
    pub p1: u64,
    /// `4sh + 8h + 12h²`
    pub p2: u64,
    /// `p2 - p1 = 8h² + 4h`
    pub delta: u64,
    /// `delta / p2`
    pub reduction: f64,
}

impl LstmCostModel {
    pub fn new(s: u64, h: u64) -> Result<Self> {
        if s == 0 || h == 0 {
            return Err(Error::config("lstm_cost", "s and h must be at least 1"));
        }
        let p1 = 4 * s * h + 4 * h + 4 * h * h;
        let p2 = 4 * s * h + 8 * h + 12 * h * h;
        let delta = p2 - p1;
        Ok(Self {
            s,
            h,
            p1,
            p2,
            delta,
            reduction: delta as f64 / p2 as f64,
        })
    }

    pub fn params(&self, layers: usize) -> Result<u64> {
        match layers {
            1 => Ok(self.p1),
            2 => Ok(self.p2),
            other => Err(Error::config(
                "lstm_layers",
                format!("{other} is not 1 or 2"),
            )),
        }
    }
}

/// LSTM parameter total of a `layers`-deep stack.
pub fn lstm_cost(s: u64, h: u64, layers: usize) -> Result<u64> {
    LstmCostModel::new(s, h)?.params(layers)
}
