//! Binary checkpoint format, version 1.
//!
//! ```text
//! magic      8 bytes  "HARLSTM\0"
//! version    u32 LE   1
//! header_len u32 LE   length of the JSON header in bytes
//! header     UTF-8 JSON (CheckpointHeader)
//! payload    every tensor's values, little-endian, in header order
//! ```
//!
//! The header records the dtype, the model config, the LSTM gate order and
//! the conv-to-sequence feature layout so that a checkpoint can be read
//! without this crate.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{DeepConvLstm, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::GATE_ORDER;
use crate::tensor::{Precision, Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HARLSTM\0";
const SEQUENCE_LAYOUT: &str =
    "conv output [B,F,T',C] regrouped time-major to [T'*B, F*C]; feature index f*C + c";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dtype: Precision,
    pub config: ModelConfig,
    pub gate_order: Vec<String>,
    pub sequence_layout: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance, e.g. the experiment configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

pub fn save_checkpoint<T: Scalar>(model: &DeepConvLstm<T>, out: impl Write) -> Result<()> {
    save_checkpoint_with(model, None, out)
}

pub fn save_checkpoint_with<T: Scalar>(
    model: &DeepConvLstm<T>,
    metadata: Option<serde_json::Value>,
    mut out: impl Write,
) -> Result<()> {
    let named = model.named_params();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        dtype: T::DTYPE,
        config: model.config().clone(),
        gate_order: GATE_ORDER.iter().map(|s| s.to_string()).collect(),
        sequence_layout: SEQUENCE_LAYOUT.to_string(),
        tensors: named
            .iter()
            .map(|(name, p)| TensorEntry {
                name: name.clone(),
                shape: p.shape().to_vec(),
            })
            .collect(),
        metadata,
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, p) in &named {
        out.write_all(&T::to_le_bytes_vec(p.value.data()))?;
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(input: impl Read) -> Result<DeepConvLstm<T>> {
    Ok(load_checkpoint_with_header(input)?.0)
}

pub fn load_checkpoint_with_header<T: Scalar>(
    mut input: impl Read,
) -> Result<(DeepConvLstm<T>, CheckpointHeader)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    input.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} values, requested {}",
            header.dtype.as_str(),
            T::DTYPE.as_str()
        )));
    }
    if header.gate_order != GATE_ORDER {
        return Err(Error::Checkpoint(format!(
            "unsupported gate order {:?}",
            header.gate_order
        )));
    }

    let mut model = DeepConvLstm::<T>::build(&header.config, 0)?;
    let width = std::mem::size_of::<T>();
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if names.len() != header.tensors.len() {
        return Err(Error::Checkpoint(
            "tensor table does not match config".into(),
        ));
    }
    for ((param, name), entry) in model
        .params_mut()
        .into_iter()
        .zip(names)
        .zip(&header.tensors)
    {
        if entry.name != name || entry.shape != param.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                entry.name,
                entry.shape,
                name,
                param.shape()
            )));
        }
        let mut bytes = vec![0u8; param.len() * width];
        input.read_exact(&mut bytes)?;
        param.value = Tensor::new(entry.shape.clone(), T::from_le_bytes_slice(&bytes))?;
    }
    Ok((model, header))
}
