//! Self-describing checkpoint archives.
//!
//! A checkpoint is a safetensors file. Every model parameter is stored as a
//! little-endian `F32` tensor keyed by its module path (for example
//! `encoder.block0.weight` or `attention.cab1.bias`). The header metadata holds
//!
//! * `format`: always `scalenet-checkpoint`,
//! * `version`: currently `1`,
//! * `config`: the JSON-encoded [`ScaleNetConfig`](super::ScaleNetConfig),
//!   which includes the encoder configuration and the input resolution.
//!
//! Training checkpoints add optimizer moments under `adam.m.<param>` and
//! `adam.v.<param>` plus a `train_state` metadata entry.

use scalenet_core::error::{Error, Result};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

pub const FORMAT: &str = "scalenet-checkpoint";
pub const VERSION: &str = "1";

/// In-memory form of a checkpoint file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Archive {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, (shape, data))| (k.clone(), shape.clone(), data.iter().flat_map(|v| v.to_le_bytes()).collect()))
            .collect();
        let views = bytes
            .iter()
            .map(|(k, shape, b)| {
                TensorView::new(Dtype::F32, shape.clone(), b)
                    .map(|v| (k.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        safetensors::tensor::serialize(views, &Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let metadata = header.metadata().clone().unwrap_or_default().into_iter().collect();
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            let data = tensor_to_f64(&view)?.into_iter().map(|v| v as f32).collect();
            tensors.insert(name, (view.shape().to_vec(), data));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata entry {key}")))
    }
}

/// Decodes an `F32` or `F64` tensor.
pub(crate) fn tensor_to_f64(view: &TensorView<'_>) -> Result<Vec<f64>> {
    let data = view.data();
    match view.dtype() {
        Dtype::F32 => Ok(data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect()),
        Dtype::F64 => Ok(data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect()),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}
