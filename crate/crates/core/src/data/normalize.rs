use serde::{Deserialize, Serialize};

use super::{RawDataset, WindowedDataset};
use crate::error::{Error, Result};

const SCALE_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(x - mean) / std`
    #[default]
    ZScore,
    /// `(x - min) / (max - min)`
    MinMax,
    None,
}

/// Per-channel affine map `x ↦ (x - offset) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ChannelStats {
    /// Fits statistics on the samples of `subjects` only; scales are floored
    /// at 1e-8 so constant channels map to zero.
    pub fn fit(raw: &RawDataset, subjects: &[usize], mode: Normalization) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Protocol(
                "normalization needs at least one training subject".into(),
            ));
        }
        let c = raw.channels();
        let streams = || subjects.iter().map(|&s| &raw.subjects[s]);
        let n: usize = streams().map(|s| s.len()).sum();
        if mode == Normalization::None || n == 0 {
            return Ok(Self {
                offset: vec![0.0; c],
                scale: vec![1.0; c],
            });
        }
        let (offset, scale) = match mode {
            Normalization::ZScore => {
                let mut mean = vec![0.0; c];
                for s in streams() {
                    for row in s.samples.chunks_exact(c) {
                        mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; c];
                for s in streams() {
                    for row in s.samples.chunks_exact(c) {
                        for ((acc, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                            *acc += (v - m) * (v - m);
                        }
                    }
                }
                let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
                (mean, std)
            }
            Normalization::MinMax => {
                let mut lo = vec![f64::INFINITY; c];
                let mut hi = vec![f64::NEG_INFINITY; c];
                for s in streams() {
                    for row in s.samples.chunks_exact(c) {
                        for (i, &v) in row.iter().enumerate() {
                            lo[i] = lo[i].min(v);
                            hi[i] = hi[i].max(v);
                        }
                    }
                }
                let range: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
                (lo, range)
            }
            Normalization::None => unreachable!(),
        };
        Ok(Self {
            offset,
            scale: scale.into_iter().map(|s: f64| s.max(SCALE_FLOOR)).collect(),
        })
    }

    fn apply_rows(&self, values: &mut [f64]) {
        let c = self.offset.len();
        for row in values.chunks_exact_mut(c) {
            for ((v, &o), &s) in row.iter_mut().zip(&self.offset).zip(&self.scale) {
                *v = (*v - o) / s;
            }
        }
    }

    pub fn apply_raw(&self, raw: &RawDataset) -> RawDataset {
        let mut out = raw.clone();
        for s in &mut out.subjects {
            self.apply_rows(&mut s.samples);
        }
        out
    }

    pub fn apply_windows(&self, windows: &WindowedDataset) -> WindowedDataset {
        let mut out = windows.clone();
        self.apply_rows(&mut out.windows);
        out
    }
}

/// Standardizes every channel with statistics from `stats_from` subjects.
pub fn normalize(
    raw: &RawDataset,
    stats_from: &[usize],
    mode: Normalization,
) -> Result<RawDataset> {
    Ok(ChannelStats::fit(raw, stats_from, mode)?.apply_raw(raw))
}
