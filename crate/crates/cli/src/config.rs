//! Experiment configuration: TOML file, defaults and resolution against a
//! loaded dataset.

use std::path::{Path, PathBuf};

use harlstm::data::{
    load_csv, round_half_up, synth_generate, CsvSchema, LabelMode, Normalization, RawDataset,
    SynthSpec, WindowSpec,
};
use harlstm::eval::{BenchSpec, GridSpec};
use harlstm::train::LossWeighting;
use harlstm::{AdamConfig, Error, ModelConfig, Result, TrainRunConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default = "synth_default::subjects")]
        subjects: usize,
        #[serde(default = "synth_default::classes")]
        classes: usize,
        #[serde(default = "synth_default::channels")]
        channels: usize,
        #[serde(default = "synth_default::duration_seconds")]
        duration_seconds: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "synth_default::noise")]
        noise: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_subject_column")]
        subject_column: String,
        #[serde(default = "default_label_column")]
        label_column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        channel_columns: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class_table: Option<Vec<String>>,
    },
}

mod synth_default {
    use harlstm::data::SynthSpec;

    pub fn subjects() -> usize {
        SynthSpec::default().subjects
    }
    pub fn classes() -> usize {
        SynthSpec::default().classes
    }
    pub fn channels() -> usize {
        SynthSpec::default().channels
    }
    pub fn duration_seconds() -> f64 {
        SynthSpec::default().duration_seconds
    }
    pub fn noise() -> f64 {
        SynthSpec::default().noise
    }
}

fn default_subject_column() -> String {
    "subject".into()
}

fn default_label_column() -> String {
    "label".into()
}

impl Default for DataSource {
    fn default() -> Self {
        let s = SynthSpec::default();
        DataSource::Synthetic {
            subjects: s.subjects,
            classes: s.classes,
            channels: s.channels,
            duration_seconds: s.duration_seconds,
            seed: s.seed,
            noise: s.noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub sampling_rate_hz: f64,
    pub source: DataSource,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            sampling_rate_hz: 50.0,
            source: DataSource::default(),
        }
    }
}

impl DatasetConfig {
    pub fn synth_spec(&self) -> Option<SynthSpec> {
        match &self.source {
            DataSource::Synthetic {
                subjects,
                classes,
                channels,
                duration_seconds,
                seed,
                noise,
            } => Some(SynthSpec {
                subjects: *subjects,
                classes: *classes,
                channels: *channels,
                sampling_rate_hz: self.sampling_rate_hz,
                duration_seconds: *duration_seconds,
                seed: *seed,
                noise: *noise,
            }),
            DataSource::Csv { .. } => None,
        }
    }

    pub fn load(&self) -> Result<RawDataset> {
        match &self.source {
            DataSource::Synthetic { .. } => synth_generate(&self.synth_spec().unwrap()),
            DataSource::Csv {
                path,
                subject_column,
                label_column,
                channel_columns,
                class_table,
            } => {
                let schema = CsvSchema {
                    sampling_rate_hz: self.sampling_rate_hz,
                    subject_column: subject_column.clone(),
                    label_column: label_column.clone(),
                    channel_columns: channel_columns.clone(),
                    class_table: class_table.clone(),
                };
                load_csv(path, &schema)
            }
        }
    }
}

/// Named window settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 0.5 s windows with 50 % overlap.
    Opportunity,
}

impl Preset {
    pub fn window(self) -> (f64, f64) {
        match self {
            Preset::Opportunity => (0.5, 0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    /// When set, replaces `seconds` and `overlap`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub seconds: f64,
    pub overlap: f64,
    pub label_mode: LabelMode,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            preset: None,
            seconds: 1.0,
            overlap: 0.6,
            label_mode: LabelMode::Last,
        }
    }
}

impl WindowConfig {
    pub fn spec(&self) -> WindowSpec {
        let (seconds, overlap) = self
            .preset
            .map_or((self.seconds, self.overlap), Preset::window);
        WindowSpec {
            window_seconds: seconds,
            overlap,
            label_mode: self.label_mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub num_conv_layers: usize,
    pub num_filters: usize,
    /// Defaults to `10·max(1, round(Hz/50)) + 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_len: Option<usize>,
    pub lstm_layers: usize,
    pub hidden_units: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            num_conv_layers: m.num_conv_layers,
            num_filters: m.num_filters,
            kernel_len: None,
            lstm_layers: m.lstm_layers,
            hidden_units: m.hidden_units,
            dropout: m.dropout,
        }
    }
}

/// Kernel length scaled with the sampling rate: 11 at 50 Hz, 21 at 100 Hz.
pub fn default_kernel_len(sampling_rate_hz: f64) -> usize {
    10 * round_half_up(sampling_rate_hz / 50.0).max(1) + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    pub loss_weighting: LossWeighting,
    pub train_metrics: bool,
    pub optimizer: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainRunConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            shuffle: t.shuffle,
            loss_weighting: t.loss_weighting,
            train_metrics: t.train_metrics,
            optimizer: t.optimizer,
        }
    }
}

impl TrainSection {
    pub fn run_config(&self, seed: u64) -> TrainRunConfig {
        TrainRunConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            shuffle: self.shuffle,
            loss_weighting: self.loss_weighting,
            optimizer: self.optimizer.clone(),
            train_metrics: self.train_metrics,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub hidden_units: Vec<usize>,
    pub lstm_layers: Vec<usize>,
    pub jobs: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            hidden_units: g.hidden_units,
            lstm_layers: g.lstm_layers,
            jobs: g.jobs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Structured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<ReportFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("harlstm-out"),
            formats: vec![ReportFormat::Csv, ReportFormat::Structured],
        }
    }
}

/// Everything one command needs, as written in the TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Subject held out by `train`; defaults to the last subject.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_subject: Option<String>,
    pub normalization: Normalization,
    pub dataset: DatasetConfig,
    pub window: WindowConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub grid: GridSection,
    pub bench: BenchSpec,
    /// Where artifacts go; read from files but never written into artifacts.
    #[serde(skip_serializing)]
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: GridSpec::default().seeds,
            holdout_subject: None,
            normalization: Normalization::ZScore,
            dataset: DatasetConfig::default(),
            window: WindowConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            grid: GridSection::default(),
            bench: BenchSpec::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn kernel_len(&self) -> usize {
        self.model
            .kernel_len
            .unwrap_or_else(|| default_kernel_len(self.dataset.sampling_rate_hz))
    }

    /// Field-level checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "needs at least one seed"));
        }
        if !(self.dataset.sampling_rate_hz > 0.0) {
            return Err(Error::config("sampling_rate_hz", "must be positive"));
        }
        if let Some(spec) = self.dataset.synth_spec() {
            spec.validate()?;
        }
        self.window.spec().validate(self.dataset.sampling_rate_hz)?;
        self.train.run_config(0).validate()?;
        self.grid_spec().validate()?;
        if self.output.formats.is_empty() {
            return Err(Error::config("formats", "needs at least one report format"));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            hidden_units: self.grid.hidden_units.clone(),
            lstm_layers: self.grid.lstm_layers.clone(),
            seeds: self.seeds.clone(),
            jobs: self.grid.jobs,
        }
    }

    /// Model and training settings for a dataset with `channels` channels
    /// and `num_classes` classes.
    pub fn resolve(&self, channels: usize, num_classes: usize) -> Result<ResolvedConfig> {
        self.validate()?;
        let window = self.window.spec();
        let hz = self.dataset.sampling_rate_hz;
        let model = ModelConfig {
            num_conv_layers: self.model.num_conv_layers,
            num_filters: self.model.num_filters,
            kernel_len: self.kernel_len(),
            lstm_layers: self.model.lstm_layers,
            hidden_units: self.model.hidden_units,
            dropout: self.model.dropout,
            num_classes,
            channels,
            window_samples: window.window_samples(hz),
        };
        model.validate()?;
        Ok(ResolvedConfig {
            experiment: self.clone(),
            model,
            window_samples: window.window_samples(hz),
            stride: window.stride(hz),
            window,
            train: self.train.run_config(self.seeds[0]),
        })
    }

    pub fn resolve_for(&self, raw: &RawDataset) -> Result<ResolvedConfig> {
        self.resolve(raw.channels(), raw.num_classes())
    }
}

/// Fully expanded configuration, embedded in every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub experiment: ExperimentConfig,
    pub model: ModelConfig,
    pub window: WindowSpec,
    pub window_samples: usize,
    pub stride: usize,
    pub train: TrainRunConfig,
}

impl ResolvedConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
