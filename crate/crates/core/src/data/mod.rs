//! Sensor streams, CSV ingestion, sliding-window segmentation, per-channel
//! normalization and a synthetic activity generator.

mod csv_io;
mod normalize;
mod segment;
mod synth;

pub use csv_io::{load_csv, read_csv, write_csv, CsvSchema};
pub use normalize::{normalize, ChannelStats, Normalization};
pub use segment::{round_half_up, segment, LabelMode, WindowSpec, WindowedDataset};
pub use synth::{synth_generate, SynthSpec};

use crate::error::{Error, Result};

/// One subject's recording: `samples` is `[T, C]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectStream {
    pub subject: String,
    pub samples: Vec<f64>,
    pub labels: Vec<usize>,
}

impl SubjectStream {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub sampling_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub class_names: Vec<String>,
    pub subjects: Vec<SubjectStream>,
}

impl RawDataset {
    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject.clone()).collect()
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.subject == id)
    }

    pub fn total_samples(&self) -> usize {
        self.subjects.iter().map(|s| s.len()).sum()
    }

    /// Checks the shared-channel and label-range invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz > 0.0) {
            return Err(Error::config("sampling_rate_hz", "must be positive"));
        }
        let c = self.channels();
        if c == 0 {
            return Err(Error::Data("dataset has no channels".into()));
        }
        let k = self.num_classes();
        for s in &self.subjects {
            if s.samples.len() != s.labels.len() * c {
                return Err(Error::Data(format!(
                    "subject {} holds {} values for {} samples of {} channels",
                    s.subject,
                    s.samples.len(),
                    s.labels.len(),
                    c
                )));
            }
            if let Some((row, &label)) = s.labels.iter().enumerate().find(|(_, &l)| l >= k) {
                return Err(Error::Label {
                    row,
                    label,
                    classes: k,
                });
            }
        }
        Ok(())
    }
}
