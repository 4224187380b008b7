use serde::{Deserialize, Serialize};

use super::RawDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Label of the final sample in the window.
    #[default]
    Last,
    /// Most frequent label; ties go to the smaller class index.
    Majority,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_seconds: f64,
    pub overlap: f64,
    #[serde(default)]
    pub label_mode: LabelMode,
}

impl WindowSpec {
    pub fn new(window_seconds: f64, overlap: f64) -> Self {
        Self {
            window_seconds,
            overlap,
            label_mode: LabelMode::Last,
        }
    }

    pub fn validate(&self, sampling_rate_hz: f64) -> Result<()> {
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::config(
                "overlap",
                format!("{} outside [0, 1)", self.overlap),
            ));
        }
        if !(self.window_seconds * sampling_rate_hz >= 1.0) {
            return Err(Error::config(
                "window_seconds",
                format!(
                    "{} s at {} Hz is shorter than one sample",
                    self.window_seconds, sampling_rate_hz
                ),
            ));
        }
        Ok(())
    }

    /// `round(window_seconds · Hz)`
    pub fn window_samples(&self, sampling_rate_hz: f64) -> usize {
        round_half_up(self.window_seconds * sampling_rate_hz)
    }

    /// `max(1, round(s_w · (1 - overlap)))`
    pub fn stride(&self, sampling_rate_hz: f64) -> usize {
        let s_w = self.window_samples(sampling_rate_hz) as f64;
        round_half_up(s_w * (1.0 - self.overlap)).max(1)
    }
}

pub fn round_half_up(x: f64) -> usize {
    // Products like 50 * 0.4 land a hair off the integer; snap before rounding.
    let snapped = (x * 1e9).round() / 1e9;
    (snapped + 0.5).floor().max(0.0) as usize
}

/// Fixed-length windows cut from single subject streams.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub window_samples: usize,
    pub stride: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub window_seconds: f64,
    pub overlap: f64,
    pub subjects: Vec<String>,
    /// `[N, s_w, C]` row-major.
    pub windows: Vec<f64>,
    pub labels: Vec<usize>,
    /// Index into `subjects` for each window.
    pub subject_of: Vec<usize>,
    /// Offset of the first sample inside its subject stream.
    pub start_of: Vec<usize>,
    pub warnings: Vec<String>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_samples * self.channels
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let n = self.window_len();
        &self.windows[i * n..(i + 1) * n]
    }

    /// Window indices belonging to any of the given subjects, in order.
    pub fn indices_for(&self, subjects: &[usize]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| subjects.contains(&self.subject_of[i]))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> WindowedDataset {
        let mut windows = Vec::with_capacity(indices.len() * self.window_len());
        for &i in indices {
            windows.extend_from_slice(self.window(i));
        }
        WindowedDataset {
            windows,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subject_of: indices.iter().map(|&i| self.subject_of[i]).collect(),
            start_of: indices.iter().map(|&i| self.start_of[i]).collect(),
            subjects: self.subjects.clone(),
            warnings: Vec::new(),
            ..*self
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Cuts every subject stream into windows of `round(window_seconds·Hz)`
/// samples with stride `max(1, round(s_w·(1-overlap)))`.
///
/// A stream of `T ≥ s_w` samples yields `floor((T - s_w)/stride) + 1` windows;
/// shorter streams yield none and add a warning.
pub fn segment(raw: &RawDataset, spec: &WindowSpec) -> Result<WindowedDataset> {
    spec.validate(raw.sampling_rate_hz)?;
    raw.validate()?;
    let s_w = spec.window_samples(raw.sampling_rate_hz);
    let stride = spec.stride(raw.sampling_rate_hz);
    let c = raw.channels();
    let k = raw.num_classes();

    let mut out = WindowedDataset {
        window_samples: s_w,
        stride,
        channels: c,
        num_classes: k,
        window_seconds: spec.window_seconds,
        overlap: spec.overlap,
        subjects: raw.subject_ids(),
        windows: Vec::new(),
        labels: Vec::new(),
        subject_of: Vec::new(),
        start_of: Vec::new(),
        warnings: Vec::new(),
    };
    for (si, stream) in raw.subjects.iter().enumerate() {
        let t = stream.len();
        if t < s_w {
            out.warnings.push(format!(
                "subject {}: {} samples is shorter than one {}-sample window",
                stream.subject, t, s_w
            ));
            continue;
        }
        let count = (t - s_w) / stride + 1;
        for w in 0..count {
            let start = w * stride;
            out.windows
                .extend_from_slice(&stream.samples[start * c..(start + s_w) * c]);
            let labels = &stream.labels[start..start + s_w];
            out.labels.push(match spec.label_mode {
                LabelMode::Last => labels[s_w - 1],
                LabelMode::Majority => majority(labels, k),
            });
            out.subject_of.push(si);
            out.start_of.push(start);
        }
    }
    Ok(out)
}

fn majority(labels: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (i, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = i;
        }
    }
    best
}
