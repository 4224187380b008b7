#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use data::{RawDataset, WindowSpec, WindowedDataset};
pub use error::{Error, ErrorKind, Result};
pub use eval::{EvaluationReport, GridSpec, LstmCostModel, MetricsRecord};
pub use model::{DeepConvLstm, ModelConfig};
pub use optim::{AdamConfig, AdamState};
pub use tensor::{Precision, Scalar, Tape, Tensor, Var};
pub use train::{TrainRunConfig, TrainingTrace};
