use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{RawDataset, SubjectStream};
use crate::error::{Error, Result};

/// Parameters of the synthetic activity generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub subjects: usize,
    pub classes: usize,
    pub channels: usize,
    pub sampling_rate_hz: f64,
    pub duration_seconds: f64,
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.2
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects: 4,
            classes: 3,
            channels: 3,
            sampling_rate_hz: 50.0,
            duration_seconds: 60.0,
            seed: 0,
            noise: default_noise(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("subjects", self.subjects as f64),
            ("classes", self.classes as f64),
            ("channels", self.channels as f64),
            ("sampling_rate_hz", self.sampling_rate_hz),
            ("duration_seconds", self.duration_seconds),
        ];
        for (field, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("noise", "must be non-negative"));
        }
        Ok(())
    }

    pub fn samples_per_subject(&self) -> usize {
        super::round_half_up(self.duration_seconds * self.sampling_rate_hz)
    }
}

struct ClassSignal {
    offset: Vec<f64>,
    amplitude: Vec<f64>,
    freq_hz: f64,
}

fn class_signals(spec: &SynthSpec) -> Vec<ClassSignal> {
    let (k, c) = (spec.classes as f64, spec.channels as f64);
    let nyquist_guard = spec.sampling_rate_hz / 4.0;
    (0..spec.classes)
        .map(|ki| {
            let kf = ki as f64;
            ClassSignal {
                offset: (0..spec.channels)
                    .map(|ci| (TAU * kf / k + TAU * ci as f64 / c).cos())
                    .collect(),
                amplitude: (0..spec.channels)
                    .map(|ci| 0.3 + 0.5 * ((ki + ci) % 3) as f64 / 2.0 + 0.2 * kf / k)
                    .collect(),
                freq_hz: (1.0 + 2.0 * kf).min(nyquist_guard),
            }
        })
        .collect()
}

/// Generates `subjects` streams of `round(duration·Hz)` samples.
///
/// Each stream is a sequence of 4 to 10 second activity bouts. A bout of class
/// `k` on channel `c` is `g·(μ_kc + A_kc·sin(2π f_k t + φ)) + b + ε`, with
/// subject gain `g ∈ [0.8, 1.2]` and offset `b` per channel, a random phase per
/// bout and Gaussian noise. Consecutive bouts always change class when `K > 1`.
pub fn synth_generate(spec: &SynthSpec) -> Result<RawDataset> {
    spec.validate()?;
    let signals = class_signals(spec);
    let t_len = spec.samples_per_subject();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::config("noise", e.to_string()))?;
    let mut subjects = Vec::with_capacity(spec.subjects);
    for s in 0..spec.subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(s as u64 + 1);
        let gain: Vec<f64> = (0..spec.channels)
            .map(|_| rng.random_range(0.8..=1.2))
            .collect();
        let bias: Vec<f64> = (0..spec.channels)
            .map(|_| rng.random_range(-0.1..=0.1))
            .collect();
        let mut samples = Vec::with_capacity(t_len * spec.channels);
        let mut labels = Vec::with_capacity(t_len);
        let mut class = rng.random_range(0..spec.classes);
        while labels.len() < t_len {
            let bout = super::round_half_up(rng.random_range(4.0..=10.0) * spec.sampling_rate_hz)
                .clamp(1, t_len - labels.len());
            let phase = rng.random_range(0.0..TAU);
            let sig = &signals[class];
            for i in 0..bout {
                let t = i as f64 / spec.sampling_rate_hz;
                let wave = (TAU * sig.freq_hz * t + phase).sin();
                for c in 0..spec.channels {
                    let clean = gain[c] * (sig.offset[c] + sig.amplitude[c] * wave) + bias[c];
                    samples.push(clean + noise.sample(&mut rng));
                }
                labels.push(class);
            }
            if spec.classes > 1 {
                class = (class + rng.random_range(1..spec.classes)) % spec.classes;
            }
        }
        subjects.push(SubjectStream {
            subject: format!("s{}", s + 1),
            samples,
            labels,
        });
    }
    Ok(RawDataset {
        sampling_rate_hz: spec.sampling_rate_hz,
        channel_names: (0..spec.channels).map(|c| format!("ch{c}")).collect(),
        class_names: (0..spec.classes).map(|k| format!("c{k}")).collect(),
        subjects,
    })
}
